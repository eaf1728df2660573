"""BPR ranking loss, cross-view InfoNCE, and their weighted combination."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .hypergraph import ShapeError

COS_EPS = 1e-12


class LossConfigError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, component, value):
        super().__init__(f"loss component {component!r} is not finite ({value})")
        self.component = component


def bpr_loss(pos_scores, neg_scores) -> dc.Variable:
    """Mean of ``-log sigmoid(pos - neg)`` over the batch."""
    pv, nv = dc._val(pos_scores), dc._val(neg_scores)
    if pv.shape != nv.shape or pv.size == 0:
        raise ShapeError(f"bpr_loss needs equal non-empty score vectors, got {pv.shape} {nv.shape}")
    return dc.scale(dc.mean_all(dc.log_sigmoid(dc.sub(pos_scores, neg_scores))), -1.0)


def pair_scores(E_u, E_i, users, items) -> dc.Variable:
    """Column of dot products ``E_u[users[k]] . E_i[items[k]]``."""
    return dc.row_sum(dc.mul(dc.gather_rows(E_u, users), dc.gather_rows(E_i, items)))


def infonce_cross_view(z_layers, g_layers, batch_ids, tau: float,
                       negatives: str = "batch") -> dc.Variable:
    """Layer-wise InfoNCE between aligned rows of two channels.

    For each layer and each id in ``batch_ids`` the positive is the same id in
    the other channel; candidates are ``batch_ids`` or, with
    ``negatives="full"``, every row. Returns the mean over (id, layer).
    """
    if not tau > 0:
        raise LossConfigError(f"temperature must be positive, got {tau}")
    if negatives not in ("batch", "full"):
        raise LossConfigError(f"negatives must be 'batch' or 'full', got {negatives!r}")
    ids = np.asarray(batch_ids, dtype=np.int64)
    if ids.size == 0:
        raise ShapeError("empty contrastive batch")
    if len(np.unique(ids)) != len(ids):
        raise ShapeError("duplicate ids in contrastive batch")
    if len(z_layers) != len(g_layers):
        raise ShapeError("channels disagree on number of layer snapshots")
    inv_tau = 1.0 / tau
    terms = []
    for z, g in zip(z_layers, g_layers):
        zb = dc.row_l2_normalize(dc.gather_rows(z, ids), COS_EPS)
        gn = dc.row_l2_normalize(g, COS_EPS)
        gb = dc.gather_rows(gn, ids)
        cand = gb if negatives == "batch" else gn
        logits = dc.scale(dc.matmul(zb, dc.transpose(cand)), inv_tau)
        pos = dc.scale(dc.row_sum(dc.mul(zb, gb)), inv_tau)
        terms.append(dc.mean_all(dc.sub(dc.logsumexp_rows(logits), pos)))
    total = terms[0]
    for t in terms[1:]:
        total = dc.add(total, t)
    return dc.scale(total, 1.0 / len(terms))


def embedding_reg(params) -> dc.Variable:
    """Sum of squared entries of the user and item embedding tables."""
    return dc.add(dc.sum_all(dc.square(params["user_embed"])),
                  dc.sum_all(dc.square(params["item_embed"])))


@dataclass
class LossBreakdown:
    bpr: float
    contrastive_user: float
    contrastive_item: float
    reg: float
    total: float
    weights: tuple

    def as_record(self) -> dict:
        d = asdict(self)
        d.pop("weights")
        return {"bpr": d["bpr"], "cl_u": d["contrastive_user"], "cl_i": d["contrastive_item"],
                "reg": d["reg"], "total": d["total"]}


def total_loss(bpr, cl_user, cl_item, reg, lambda_cl: float = 0.1, lambda_reg: float = 1e-4,
               tau: float = 0.2) -> tuple[dc.Variable, LossBreakdown]:
    """``bpr + lambda_cl (cl_user + cl_item) + lambda_reg reg``.

    ``cl_user``/``cl_item`` may be ``None`` (single-channel variants) and count
    as zero.
    """
    if lambda_cl < 0 or lambda_reg < 0:
        raise LossConfigError("loss weights must be non-negative")
    parts = {"bpr": bpr, "cl_u": cl_user, "cl_i": cl_item, "reg": reg}
    vals = {}
    for name, v in parts.items():
        x = 0.0 if v is None else dc._val(v)[0, 0]
        if not math.isfinite(x):
            raise NonFiniteLossError(name, x)
        vals[name] = float(x)
    total = bpr
    if cl_user is not None and lambda_cl:
        total = dc.add(total, dc.scale(cl_user, lambda_cl))
    if cl_item is not None and lambda_cl:
        total = dc.add(total, dc.scale(cl_item, lambda_cl))
    if lambda_reg:
        total = dc.add(total, dc.scale(reg, lambda_reg))
    total = total if isinstance(total, dc.Variable) else dc.Variable(total)
    breakdown = LossBreakdown(vals["bpr"], vals["cl_u"], vals["cl_i"], vals["reg"],
                              float(total.value[0, 0]), (lambda_cl, lambda_reg, tau))
    return total, breakdown
