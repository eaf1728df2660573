"""Mini-batch BPR training with Adam, negative resampling and early stopping."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import model as M
from . import objectives as obj
from .config import TrainConfig
from .data import InteractionDataset
from .hypergraph import build_views
from .metrics import DEFAULT_KS, evaluate

log = logging.getLogger(__name__)

STOP_METRIC = "recall@20"
REJECTION_TRIES = 100


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in tensor {name!r}")
        self.tensor = name


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch)])


def sample_epoch(ds: InteractionDataset, rng: np.random.Generator) -> np.ndarray:
    """One ``(user, pos, neg)`` row per train interaction, in shuffled order.

    Negatives are uniform over the user's non-train items: rejection sampling
    for up to 100 rounds, then a draw from the explicit complement. Users who
    interacted with every item are skipped.
    """
    train = ds.train
    n_items = ds.num_items
    if len(train) == 0:
        raise ValueError("train split is empty")
    counts = np.array([len(a) for a in ds.train_items_of])
    full = np.flatnonzero(counts >= n_items)
    keep = ~np.isin(train[:, 0], full)
    if len(full):
        log.warning("skipping %d users who interacted with every item", len(full))
    users, pos = train[keep, 0], train[keep, 1]
    keys = train[:, 0] * n_items + train[:, 1]          # train is sorted, so keys are too

    def is_pos(u, j):
        k = u * n_items + j
        at = np.searchsorted(keys, k)
        at = np.minimum(at, len(keys) - 1)
        return keys[at] == k

    neg = rng.integers(n_items, size=len(users))
    bad = np.flatnonzero(is_pos(users, neg))
    for _ in range(REJECTION_TRIES):
        if len(bad) == 0:
            break
        neg[bad] = rng.integers(n_items, size=len(bad))
        bad = bad[is_pos(users[bad], neg[bad])]
    for b in bad:
        comp = np.setdiff1d(np.arange(n_items), ds.train_items_of[users[b]], assume_unique=True)
        neg[b] = comp[rng.integers(len(comp))]
    triples = np.stack([users, pos, neg], axis=1).astype(np.int64)
    return triples[rng.permutation(len(triples))]


class Adam:
    """Bias-corrected Adam over a dict of arrays, updated in place."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state: Adam, lr):
    state.step(params, grads, lr)
    return params, state


def trainable_names(cfg: TrainConfig, params: dict) -> list[str]:
    if cfg.model == "lightgcn":
        return list(params)
    frozen = set()
    if cfg.ablation == "no_het":
        frozen.update(M.het_param_names())
    if cfg.ablation == "no_wave":
        frozen.update(M.wave_param_names(cfg.layers))
    return [k for k in params if k not in frozen]


def prepare_graph(ds: InteractionDataset, cfg: TrainConfig) -> M.Graph:
    user_view, item_view = build_views(ds)
    if cfg.model == "lightgcn":
        return M.build_graph(user_view, item_view, need_wavelets=False, need_lightgcn=True)
    return M.build_graph(user_view, item_view, scale=cfg.scale, mode=cfg.wavelet_mode,
                         order=cfg.cheb_order, need_wavelets=cfg.ablation != "no_wave")


def batch_loss(leaves, graph: M.Graph, cfg: TrainConfig, batch: np.ndarray):
    """Total loss Variable and its breakdown for one ``(user, pos, neg)`` batch."""
    res = M.forward(cfg.model, leaves, graph, cfg.layers, cfg.ablation)
    users, pos, neg = batch[:, 0], batch[:, 1], batch[:, 2]
    bpr = obj.bpr_loss(obj.pair_scores(res.E_u, res.E_i, users, pos),
                       obj.pair_scores(res.E_u, res.E_i, users, neg))
    cl_u = cl_i = None
    if res.het is not None and res.wave is not None and cfg.lambda_cl > 0:
        cl_u = obj.infonce_cross_view(res.het.user_layers, res.wave.user_layers,
                                      np.unique(users), cfg.tau, cfg.contrastive_negatives)
        cl_i = obj.infonce_cross_view(res.het.item_layers, res.wave.item_layers,
                                      np.unique(np.concatenate([pos, neg])), cfg.tau,
                                      cfg.contrastive_negatives)
    reg = obj.embedding_reg(leaves)
    return obj.total_loss(bpr, cl_u, cl_i, reg, cfg.lambda_cl, cfg.lambda_reg, cfg.tau)


@dataclass
class FitResult:
    params: dict                      # best-validation parameters
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float | None = None
    epochs_run: int = 0
    aborted: str | None = None


def fit(ds: InteractionDataset, cfg: TrainConfig, graph: M.Graph | None = None,
        log_path=None, Ks=DEFAULT_KS) -> FitResult:
    """Train and return the best-validation parameters plus the per-epoch log.

    Validation Recall@20 is checked every ``eval_every`` epochs; training stops
    after ``patience`` checks without strict improvement. When the val split
    is empty, early stopping is off and the final parameters are returned.
    """
    if graph is None:
        graph = prepare_graph(ds, cfg)
    params = M.init_params(ds.num_users, ds.num_items, cfg.dim, cfg.layers, cfg.seed, cfg.model)
    trainable = trainable_names(cfg, params)
    adam = Adam({k: params[k] for k in trainable})
    result = FitResult(params={k: v.copy() for k, v in params.items()})
    has_val = len(ds.val) > 0
    bad_checks = 0
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            triples = sample_epoch(ds, epoch_rng(cfg.seed, epoch))
            sums = {"bpr": 0.0, "cl_u": 0.0, "cl_i": 0.0, "reg": 0.0, "total": 0.0}
            gnorm = {k: 0.0 for k in trainable}
            n_batches = 0
            try:
                for start in range(0, len(triples), cfg.batch_size):
                    batch = triples[start:start + cfg.batch_size]
                    tape = dc.Tape()
                    leaves = {k: tape.leaf(v, requires_grad=k in adam.m) for k, v in params.items()}
                    loss, parts = batch_loss(leaves, graph, cfg, batch)
                    tape.backward(loss)
                    grads = {k: leaves[k].grad for k in trainable}
                    adam.step(params, grads, cfg.lr)
                    for k, v in parts.as_record().items():
                        sums[k] += v
                    for k in trainable:
                        gnorm[k] += float(np.linalg.norm(grads[k]))
                    n_batches += 1
            except (obj.NonFiniteLossError, NonFiniteGradientError) as exc:
                log.error("epoch %d aborted: %s", epoch, exc)
                result.aborted = f"epoch {epoch}: {exc}"
                break
            rec = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()},
                   "grad_norms": {k: v / n_batches for k, v in gnorm.items()}}
            if has_val and epoch % cfg.eval_every == 0:
                E_u, E_i = M.final_embeddings(cfg.model, params, graph, cfg.layers, cfg.ablation)
                rep = evaluate(E_u, E_i, ds, "val", Ks, seed=cfg.seed)
                rec["val"] = rep.metrics
                score = rep.metrics[STOP_METRIC]
                if result.best_val is None or score > result.best_val:
                    result.best_val = score
                    result.best_epoch = epoch
                    result.params = {k: v.copy() for k, v in params.items()}
                    bad_checks = 0
                else:
                    bad_checks += 1
            elif not has_val:
                result.params = {k: v.copy() for k, v in params.items()}
                result.best_epoch = epoch
            result.log.append(rec)
            result.epochs_run = epoch
            if sink:
                sink.write(json.dumps(rec, sort_keys=True) + "\n")
                sink.flush()
            if not math.isfinite(rec["total"]):
                break
            if has_val and bad_checks >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
    finally:
        if sink:
            sink.close()
    return result
