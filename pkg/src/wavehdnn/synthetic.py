"""Seeded synthetic interaction generators.

``heterophilic_benchmark`` builds the desk-scale benchmark used for ablation
and baseline comparisons: items fall into categories, and every user segment
mixes sub-clusters from at least two categories, so hyperedges (users' item
sets) routinely span dissimilar items.
"""
from __future__ import annotations

import numpy as np

from .data import RawInteractions, from_splits, remap_and_split


def heterophilic_pairs(num_users=500, num_items=400, num_categories=4, clusters_per_category=5,
                       num_segments=25, min_categories=2, max_categories=3,
                       interactions_per_user=(12, 28), signal=0.8, seed=0):
    """Return deduplicated ``(user, item)`` integer pairs and the item categories."""
    rng = np.random.default_rng(seed)
    category = np.repeat(np.arange(num_categories), num_items // num_categories)
    category = np.concatenate([category, rng.integers(num_categories,
                                                      size=num_items - len(category))])
    category = category[rng.permutation(num_items)]
    clusters = []
    for c in range(num_categories):
        members = np.flatnonzero(category == c)
        members = members[rng.permutation(len(members))]
        clusters.extend(np.array_split(members, clusters_per_category))
    # long-tailed item popularity
    pop = rng.pareto(1.5, size=num_items) + 1.0

    segments = []
    for _ in range(num_segments):
        n_cat = rng.integers(min_categories, max_categories + 1)
        cats = rng.choice(num_categories, size=n_cat, replace=False)
        picked = [clusters[c * clusters_per_category + rng.integers(clusters_per_category)]
                  for c in cats]
        segments.append(np.concatenate(picked))

    pairs = []
    lo, hi = interactions_per_user
    for u in range(num_users):
        seg = segments[rng.integers(num_segments)]
        n = int(rng.integers(lo, hi + 1))
        n_sig = min(int(round(signal * n)), len(seg))
        w = pop[seg] / pop[seg].sum()
        chosen = set(rng.choice(seg, size=n_sig, replace=False, p=w).tolist())
        w_all = pop / pop.sum()
        while len(chosen) < n:
            chosen.add(int(rng.choice(num_items, p=w_all)))
        pairs.extend((u, i) for i in sorted(chosen))
    return pairs, category


def heterophilic_benchmark(seed=0, split_seed=0, **kw):
    """Split dataset (7:1:2 per user) for the synthetic heterophilic benchmark."""
    pairs, _ = heterophilic_pairs(seed=seed, **kw)
    raw = RawInteractions([(f"u{u}", f"i{i}") for u, i in pairs], f"synthetic:heterophilic:{seed}")
    return remap_and_split(raw, split_seed)


def memorization_dataset(num_users=50, num_items=50, per_user=5, seed=0):
    """Each user gets ``per_user`` random items; train and test are identical."""
    rng = np.random.default_rng(seed)
    pairs = [(u, int(i)) for u in range(num_users)
             for i in sorted(rng.choice(num_items, per_user, replace=False))]
    return from_splits(num_users, num_items, pairs, (), pairs, seed=seed)


def toy_dataset(num_users=6, num_items=6, density=0.4, seed=0):
    """Small random dataset where every user and item has a train interaction."""
    rng = np.random.default_rng(seed)
    R = rng.random((num_users, num_items)) < density
    for u in range(num_users):
        R[u, rng.integers(num_items)] = True
    for i in range(num_items):
        if not R[:, i].any():
            R[rng.integers(num_users), i] = True
    pairs = [(int(u), int(i)) for u, i in zip(*np.nonzero(R))]
    return from_splits(num_users, num_items, pairs, seed=seed)
