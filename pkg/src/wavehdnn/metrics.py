"""Full-ranking Recall@K / NDCG@K with train-item masking.

``evaluate`` is the batched path used during training; ``oracle_evaluate``
re-derives the same report by brute force and exists to cross-check it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import InteractionDataset

DEFAULT_KS = (10, 20, 40)


class MetricContractError(ValueError):
    pass


@dataclass
class MetricsReport:
    split: str
    seed: int
    num_evaluated_users: int
    metrics: dict = field(default_factory=dict)   # "recall@10" -> value; empty when no users
    num_excluded_users: int = 0

    def get(self, name: str, k: int) -> float:
        return self.metrics[f"{name}@{k}"]

    def to_dict(self) -> dict:
        return {"split": self.split, "seed": self.seed, "users": self.num_evaluated_users,
                "excluded": self.num_excluded_users, "metrics": dict(self.metrics)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["split"], d["seed"], d["users"], dict(d["metrics"]), d.get("excluded", 0))


def _discounts(n):
    return 1.0 / np.log2(np.arange(2, n + 2))


def rank_items(scores, mask, k: int) -> np.ndarray:
    """Top-``k`` unmasked ids by descending score, ties to the lower id."""
    scores = np.ascontiguousarray(scores, dtype=np.float64).reshape(1, -1)
    m = np.array(sorted(set(int(i) for i in mask)), dtype=np.int64)
    if k > scores.shape[1] - len(m):
        raise MetricContractError(f"K={k} exceeds the {scores.shape[1] - len(m)} unmasked items")
    return kernels.topk_masked(scores, np.array([0, len(m)], dtype=np.int64), m, k)[0]


def recall_at_k(topk, relevant) -> float:
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise MetricContractError("recall needs at least one relevant item")
    return sum(1 for i in topk if int(i) in relevant) / len(relevant)


def ndcg_at_k(topk, relevant, k: int | None = None) -> float:
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise MetricContractError("ndcg needs at least one relevant item")
    k = len(topk) if k is None else k
    topk = list(topk)[:k]
    disc = _discounts(k)
    dcg = sum(disc[r] for r, i in enumerate(topk) if int(i) in relevant)
    idcg = disc[: min(k, len(relevant))].sum()
    return float(dcg / idcg)


def _split_lists(ds: InteractionDataset, split: str):
    """(relevant per user, masked items per user) for an evaluation split."""
    if split == "val":
        return ds.items_of("val"), [np.asarray(a) for a in ds.train_items_of]
    if split == "test":
        val = ds.items_of("val")
        return ds.items_of("test"), [np.union1d(a, b) for a, b in zip(ds.train_items_of, val)]
    if split == "train":
        empty = np.zeros(0, dtype=np.int64)
        return [np.asarray(a) for a in ds.train_items_of], [empty] * ds.num_users
    raise ValueError(f"unknown split {split!r}")


def evaluate(E_u, E_i, ds: InteractionDataset, split: str = "test", Ks=DEFAULT_KS,
             seed: int = 0, batch_size: int = 256) -> MetricsReport:
    """Average Recall@K and NDCG@K over users with at least one relevant item.

    Validation masks train items, test masks train and val items; ``split="train"``
    scores train items with no mask (memorization checks).
    """
    Ks = tuple(sorted(Ks))
    kmax = Ks[-1]
    relevant, masked = _split_lists(ds, split)
    users = np.array([u for u in range(ds.num_users) if len(relevant[u])], dtype=np.int64)
    excluded = ds.num_users - len(users)
    if len(users) == 0:
        return MetricsReport(split, seed, 0, {}, excluded)
    n_items = E_i.shape[0]
    disc = _discounts(kmax)
    ideal = np.cumsum(disc)
    recall = {k: np.empty(len(users)) for k in Ks}
    ndcg = {k: np.empty(len(users)) for k in Ks}
    for start in range(0, len(users), batch_size):
        bu = users[start:start + batch_size]
        scores = np.ascontiguousarray(E_u[bu] @ E_i.T)
        lens = np.array([len(masked[u]) for u in bu], dtype=np.int64)
        if np.any(n_items - lens < kmax):
            raise MetricContractError(f"K={kmax} exceeds the unmasked item count for some user")
        indptr = np.concatenate(([0], np.cumsum(lens))).astype(np.int64)
        indices = (np.concatenate([masked[u] for u in bu]) if lens.sum()
                   else np.zeros(0)).astype(np.int64)
        top = kernels.topk_masked(scores, indptr, indices, kmax)
        rel = np.zeros((len(bu), n_items), dtype=bool)
        n_rel = np.empty(len(bu))
        for r, u in enumerate(bu):
            rel[r, relevant[u]] = True
            n_rel[r] = len(relevant[u])
        hits = np.take_along_axis(rel, top, axis=1).astype(np.float64)
        for k in Ks:
            h = hits[:, :k]
            recall[k][start:start + len(bu)] = h.sum(axis=1) / n_rel
            idcg = ideal[np.minimum(k, n_rel).astype(np.int64) - 1]
            ndcg[k][start:start + len(bu)] = (h @ disc[:k]) / idcg
    metrics = {}
    for k in Ks:
        metrics[f"recall@{k}"] = float(recall[k].mean())
        metrics[f"ndcg@{k}"] = float(ndcg[k].mean())
    return MetricsReport(split, seed, len(users), metrics, excluded)


def oracle_evaluate(E_u, E_i, ds: InteractionDataset, split: str = "test", Ks=DEFAULT_KS,
                    seed: int = 0) -> MetricsReport:
    """Brute-force twin of :func:`evaluate`: full score matrix, full sort per user."""
    S = np.asarray(E_u) @ np.asarray(E_i).T
    relevant, masked = _split_lists(ds, split)
    sums = {}
    count = 0
    for u in range(ds.num_users):
        rel = set(int(i) for i in relevant[u])
        if not rel:
            continue
        count += 1
        hidden = set(int(i) for i in masked[u])
        order = sorted((j for j in range(S.shape[1]) if j not in hidden),
                       key=lambda j: (-S[u, j], j))
        for k in Ks:
            if k > len(order):
                raise MetricContractError("K exceeds unmasked items")
            top = order[:k]
            hit_ranks = [r + 1 for r, j in enumerate(top) if j in rel]
            rec = len(hit_ranks) / len(rel)
            dcg = sum(1.0 / math.log2(r + 1) for r in hit_ranks)
            idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(rel)) + 1))
            sums[f"recall@{k}"] = sums.get(f"recall@{k}", 0.0) + rec
            sums[f"ndcg@{k}"] = sums.get(f"ndcg@{k}", 0.0) + dcg / idcg
    metrics = {}
    if count:
        for k in sorted(Ks):
            metrics[f"recall@{k}"] = sums[f"recall@{k}"] / count
            metrics[f"ndcg@{k}"] = sums[f"ndcg@{k}"] / count
    return MetricsReport(split, seed, count, metrics, ds.num_users - count)
