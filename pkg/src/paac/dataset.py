"""Interaction loading, k-core filtering, the uniform-test split and batch sampling.

All index arrays are ``int64`` with shape ``(n, 2)`` holding ``(user, item)``
rows.  Users and items get contiguous ids in order of first appearance in the
filtered interaction list, so the same input always yields the same ids.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from paac.errors import EmptyResult, InfeasibleSplit, NegativeSamplingStall, ParseError


class RawInteraction(NamedTuple):
    user_key: Hashable
    item_key: Hashable


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    num_users: int
    num_items: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    user_keys: tuple = ()
    item_keys: tuple = ()
    test_quota: int = 0

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def split(self, name: str) -> np.ndarray:
        if name in ("valid", "validation"):
            return self.valid
        if name in ("train", "test"):
            return getattr(self, name)
        raise ValueError(f"unknown split {name!r}")

    @property
    def num_interactions(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    @cached_property
    def user_index(self) -> dict:
        return {k: u for u, k in enumerate(self.user_keys)}

    @cached_property
    def item_index(self) -> dict:
        return {k: i for i, k in enumerate(self.item_keys)}

    def interaction_matrix(self, name: str = "train") -> sp.csr_matrix:
        pairs = self.split(name)
        data = np.ones(len(pairs), dtype=np.float64)
        return sp.csr_matrix((data, (pairs[:, 0], pairs[:, 1])),
                             shape=(self.num_users, self.num_items))

    @cached_property
    def train_keys(self) -> np.ndarray:
        """Sorted ``user * N + item`` codes of the training pairs."""
        return np.sort(self.train[:, 0] * self.num_items + self.train[:, 1])


@dataclass(frozen=True, eq=False)
class PopularityIndex:
    counts: np.ndarray
    order: np.ndarray
    gini: float
    max_count: int
    min_count: int
    mean_count: float
    rank: np.ndarray = field(repr=False, default=None)

    def top_items(self, pct: float) -> np.ndarray:
        """Most popular ``ceil(pct% of N)`` items in popularity order."""
        return self.order[:ceil_share(len(self.order), pct)]


@dataclass(eq=False)
class MiniBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return len(self.users)

    @property
    def triples(self) -> np.ndarray:
        return np.stack([self.users, self.pos_items, self.neg_items], axis=1)

    @cached_property
    def batch_items(self) -> np.ndarray:
        return np.unique(self.pos_items)

    @cached_property
    def batch_users(self) -> np.ndarray:
        return np.unique(self.users)

    @cached_property
    def per_user_items(self) -> dict:
        out: dict = {}
        for u, i in zip(self.users.tolist(), self.pos_items.tolist()):
            items = out.setdefault(u, [])
            if i not in items:
                items.append(i)
        return out


def ceil_share(n: int, pct: float) -> int:
    """``ceil(pct * n / 100)`` robust to float noise in ``pct``."""
    return int(math.ceil(round(pct * n / 100.0, 9)))


def load_interactions(path, format: str = "tsv") -> list[RawInteraction]:
    if format not in ("tsv", "csv"):
        raise ValueError(f"unsupported format {format!r}")
    delim = "\t" if format == "tsv" else ","
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split(delim)
            if len(fields) < 2 or not fields[0].strip() or not fields[1].strip():
                raise ParseError("expected at least two fields (user, item)", line=lineno)
            rows.append(RawInteraction(fields[0].strip(), fields[1].strip()))
    return rows


def deduplicate(raw: Iterable) -> list[RawInteraction]:
    seen = set()
    out = []
    for u, i in raw:
        if (u, i) not in seen:
            seen.add((u, i))
            out.append(RawInteraction(u, i))
    return out


def _encode(raw: Sequence) -> tuple[np.ndarray, list, list]:
    users: dict = {}
    items: dict = {}
    pairs = np.empty((len(raw), 2), dtype=np.int64)
    for n, (u, i) in enumerate(raw):
        pairs[n, 0] = users.setdefault(u, len(users))
        pairs[n, 1] = items.setdefault(i, len(items))
    return pairs, list(users), list(items)


def k_core_filter(raw: Iterable, k: int) -> list[RawInteraction]:
    """Keep the largest subset where every user and item has at least ``k`` interactions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    raw = deduplicate(raw)
    if not raw:
        raise EmptyResult("no interactions to filter")
    pairs, ukeys, ikeys = _encode(raw)
    keep = np.ones(len(pairs), dtype=bool)
    while True:
        ucount = np.bincount(pairs[keep, 0], minlength=len(ukeys))
        icount = np.bincount(pairs[keep, 1], minlength=len(ikeys))
        new_keep = keep & (ucount[pairs[:, 0]] >= k) & (icount[pairs[:, 1]] >= k)
        if new_keep.sum() == keep.sum():
            break
        keep = new_keep
    if not keep.any():
        raise EmptyResult(f"{k}-core of the interaction graph is empty")
    return [r for r, kept in zip(raw, keep) if kept]


def _test_quota(caps: np.ndarray, budget: float) -> int:
    """Largest per-item quota whose capped total stays within ``budget``."""
    if np.minimum(caps, 1).sum() > budget or caps.max() < 1:
        raise InfeasibleSplit(
            f"a per-item test quota of 1 needs {int(np.minimum(caps, 1).sum())} "
            f"interactions, over the budget of {budget:g}")
    lo, hi = 1, int(caps.max())
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if np.minimum(caps, mid).sum() <= budget:
            lo = mid
        else:
            hi = mid - 1
    return lo


def build_unbiased_split(interactions: Iterable, test_fraction: float = 0.1,
                         val_fraction: float = 0.1, seed: int = 0) -> InteractionDataset:
    """Uniform-per-item test split plus a random validation split.

    Every item contributes the same number ``c`` of test interactions (fewer
    only when it has too few), where ``c`` is the largest quota that fits the
    ``test_fraction`` budget.  Validation is a uniform sample of the rest.
    Neither split may take an entity's last training interaction.
    """
    if not (test_fraction > 0 and val_fraction > 0 and test_fraction + val_fraction < 1):
        raise ValueError("need 0 < test_fraction, val_fraction and their sum < 1")
    raw = deduplicate(interactions)
    if not raw:
        raise InfeasibleSplit("no interactions")
    pairs, ukeys, ikeys = _encode(raw)
    n = len(pairs)
    num_users, num_items = len(ukeys), len(ikeys)
    rng = np.random.default_rng(seed)

    item_count = np.bincount(pairs[:, 1], minlength=num_items)
    quota = _test_quota(item_count - 1, test_fraction * n)

    # remaining (non-held-out) interactions per entity
    user_left = np.bincount(pairs[:, 0], minlength=num_users)
    item_left = item_count.copy()
    role = np.zeros(n, dtype=np.int8)  # 0 train, 1 valid, 2 test

    by_item = np.argsort(pairs[:, 1], kind="stable")
    starts = np.concatenate([[0], np.cumsum(item_count)])
    for item in range(num_items):
        rows = by_item[starts[item]:starts[item + 1]]
        want = min(quota, item_count[item] - 1)
        taken = 0
        for r in rng.permutation(rows):
            if taken == want:
                break
            u = pairs[r, 0]
            if user_left[u] > 1:
                role[r] = 2
                user_left[u] -= 1
                item_left[item] -= 1
                taken += 1

    target = int(math.floor(val_fraction * n))
    chosen = 0
    for r in rng.permutation(np.flatnonzero(role == 0)):
        if chosen == target:
            break
        u, i = pairs[r]
        if user_left[u] > 1 and item_left[i] > 1:
            role[r] = 1
            user_left[u] -= 1
            item_left[i] -= 1
            chosen += 1
    if chosen < target:
        raise InfeasibleSplit(
            f"only {chosen} of {target} validation interactions can be drawn "
            "without emptying a user's or item's training set")

    return InteractionDataset(
        num_users=num_users, num_items=num_items,
        train=pairs[role == 0], valid=pairs[role == 1], test=pairs[role == 2],
        user_keys=tuple(ukeys), item_keys=tuple(ikeys), test_quota=quota)


def gini(counts) -> float:
    """Mean-absolute-difference Gini: ``sum_ij |p_i - p_j| / (2 N^2 mean)``."""
    x = np.sort(np.asarray(counts, dtype=np.float64))
    n = len(x)
    total = x.sum()
    if n == 0 or total == 0:
        return 0.0
    # sum_ij |x_i - x_j| = 2 * sum_k (2k - n + 1) x_(k) for ascending x
    weights = 2.0 * np.arange(n) - n + 1
    return float(2.0 * np.dot(weights, x) / (2.0 * n * total))


def popularity_from_counts(counts) -> PopularityIndex:
    counts = np.asarray(counts, dtype=np.int64)
    order = np.lexsort((np.arange(len(counts)), -counts))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return PopularityIndex(counts=counts, order=order, gini=gini(counts),
                           max_count=int(counts.max()), min_count=int(counts.min()),
                           mean_count=float(counts.mean()), rank=rank)


def build_popularity_index(dataset: InteractionDataset) -> PopularityIndex:
    if len(dataset.train) == 0:
        raise ValueError("training split is empty")
    return popularity_from_counts(np.bincount(dataset.train[:, 1], minlength=dataset.num_items))


def dataset_stats(dataset: InteractionDataset, pop: PopularityIndex | None = None) -> dict:
    """Summary written next to a split manifest."""
    pop = pop or build_popularity_index(dataset)
    everything = np.concatenate([dataset.train, dataset.valid, dataset.test])
    full_counts = np.bincount(everything[:, 1], minlength=dataset.num_items)
    return {
        "M": dataset.num_users,
        "N": dataset.num_items,
        "interactions": dataset.num_interactions,
        "train": len(dataset.train),
        "valid": len(dataset.valid),
        "test": len(dataset.test),
        "c": dataset.test_quota,
        "gini": pop.gini,
        "max": pop.max_count,
        "min": pop.min_count,
        "mean": pop.mean_count,
        "gini_full": gini(full_counts),
        "max_full": int(full_counts.max()),
        "min_full": int(full_counts.min()),
        "mean_full": float(full_counts.mean()),
    }


def write_split_manifest(dataset: InteractionDataset, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    for name in ("train", "valid", "test"):
        with open(os.path.join(out_dir, f"{name}.txt"), "w", encoding="utf-8") as fh:
            fh.writelines(f"{u} {i}\n" for u, i in dataset.split(name).tolist())
    for name, keys in (("user_keys", dataset.user_keys), ("item_keys", dataset.item_keys)):
        with open(os.path.join(out_dir, f"{name}.txt"), "w", encoding="utf-8") as fh:
            fh.writelines(f"{k}\n" for k in keys)
    stats = dataset_stats(dataset)
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stats


def read_split_manifest(data_dir) -> InteractionDataset:
    with open(os.path.join(data_dir, "stats.json"), encoding="utf-8") as fh:
        stats = json.load(fh)
    splits = {}
    for name in ("train", "valid", "test"):
        path = os.path.join(data_dir, f"{name}.txt")
        arr = np.loadtxt(path, dtype=np.int64, ndmin=2) if os.path.getsize(path) else np.empty((0, 2), np.int64)
        splits[name] = arr.reshape(-1, 2)
    keys = {}
    for name in ("user_keys", "item_keys"):
        path = os.path.join(data_dir, f"{name}.txt")
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                keys[name] = tuple(line.rstrip("\n") for line in fh)
    return InteractionDataset(num_users=stats["M"], num_items=stats["N"],
                              test_quota=stats.get("c", 0), **splits, **keys)


def sample_epoch_batches(dataset: InteractionDataset, batch_size: int = 2048,
                         rng: np.random.Generator | None = None) -> Iterator[MiniBatch]:
    """One shuffled pass over the training pairs with one uniform negative per positive."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    n_items = dataset.num_items
    keys = dataset.train_keys
    degree = np.bincount(dataset.train[:, 0], minlength=dataset.num_users)
    saturated = degree >= n_items

    perm = rng.permutation(len(dataset.train))
    for start in range(0, len(perm), batch_size):
        rows = dataset.train[perm[start:start + batch_size]]
        users, pos = rows[:, 0], rows[:, 1]
        if saturated[users].any():
            raise NegativeSamplingStall(users[saturated[users]][0])
        neg = rng.integers(0, n_items, size=len(users))
        bad = np.flatnonzero(_is_train(keys, users * n_items + neg))
        while len(bad):
            neg[bad] = rng.integers(0, n_items, size=len(bad))
            bad = bad[_is_train(keys, users[bad] * n_items + neg[bad])]
        yield MiniBatch(users=users.copy(), pos_items=pos.copy(), neg_items=neg)


def _is_train(sorted_keys: np.ndarray, codes: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(sorted_keys, codes)
    pos = np.minimum(pos, len(sorted_keys) - 1)
    return sorted_keys[pos] == codes
