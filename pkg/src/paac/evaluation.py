"""Full-ranking top-K evaluation, popularity-group gaps and separation diagnostics."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from paac.dataset import InteractionDataset, PopularityIndex, ceil_share
from paac.encoder import PropagatedEmbeddings
from paac.errors import DegenerateBandwidthWarning

METRICS = ("recall", "hr", "ndcg")
GROUPS = ("popular", "unpopular")


@dataclass(eq=False)
class RankingResult:
    users: np.ndarray
    items: np.ndarray  # (len(users), max K); -1 pads users with too few candidates
    k_values: tuple
    split: str


@dataclass
class MetricsReport:
    k: int
    split: str
    recall: float
    hr: float
    ndcg: float
    num_users: int
    groups: dict = field(default_factory=dict)
    gap: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def csv_rows(self) -> list[dict]:
        rows = [{"split": self.split, "k": self.k, "group": "all", "recall": self.recall,
                 "hr": self.hr, "ndcg": self.ndcg, "num_users": self.num_users}]
        for name, vals in self.groups.items():
            rows.append({"split": self.split, "k": self.k, "group": name,
                         **{m: (vals or {}).get(m) for m in METRICS},
                         "num_users": (vals or {}).get("num_users", 0)})
        if self.gap:
            rows.append({"split": self.split, "k": self.k, "group": "gap",
                         **{m: self.gap.get(m) for m in METRICS}, "num_users": None})
        return rows


@dataclass
class SeparationReport:
    mmd: float
    cross_cosine: float
    bandwidth: float
    degenerate: bool = False
    num_popular: int = 0
    num_unpopular: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _masked_pairs(dataset: InteractionDataset, split: str) -> np.ndarray:
    if split == "test":
        return np.concatenate([dataset.train, dataset.valid])
    if split in ("valid", "validation"):
        return dataset.train
    raise ValueError(f"cannot rank against split {split!r}")


def rank_all(prop: PropagatedEmbeddings, dataset: InteractionDataset, k_list=(20,),
             split: str = "test", chunk: int = 1024) -> RankingResult:
    """Top-``max(k_list)`` items for every user with a target item in ``split``.

    Items the user has already seen (train, plus validation when ranking for
    test) are excluded. Ties go to the lower item index.
    """
    k_values = tuple(sorted({int(k) for k in k_list}))
    kmax = k_values[-1]
    n_items = dataset.num_items
    if kmax > n_items:
        raise ValueError(f"K={kmax} exceeds the number of items ({n_items})")
    users = np.unique(dataset.split(split)[:, 0])
    seen = _masked_pairs(dataset, split)
    seen_keys = np.sort(seen[:, 0] * n_items + seen[:, 1])

    out = np.empty((len(users), kmax), dtype=np.int64)
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = prop.user_final[block] @ prop.item_final.T
        lo = np.searchsorted(seen_keys, block * n_items)
        hi = np.searchsorted(seen_keys, (block + 1) * n_items)
        rows = np.repeat(np.arange(len(block)), hi - lo)
        cols = seen_keys[np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)])
                         if len(rows) else np.empty(0, np.int64)] % n_items
        scores[rows, cols] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
        top_scores = np.take_along_axis(scores, order, axis=1)
        order[np.isneginf(top_scores)] = -1
        out[start:start + len(block)] = order
    return RankingResult(users=users, items=out, k_values=k_values, split=split)


def _discounts(k: int) -> np.ndarray:
    return np.array([1.0 / math.log2(r + 1) for r in range(1, k + 1)])


def _ideal_dcg(k: int) -> np.ndarray:
    """``table[n]`` = IDCG with ``n`` relevant items, accumulated left to right."""
    table = [0.0]
    for d in _discounts(k):
        table.append(table[-1] + d)
    return np.array(table)


def _per_user(hits: np.ndarray, n_relevant: np.ndarray, k: int) -> dict:
    hits = hits[:, :k]
    disc = _discounts(k)
    # cumsum keeps a fixed left-to-right summation order
    dcg = np.cumsum(np.where(hits, disc, 0.0), axis=1)[:, -1]
    idcg = _ideal_dcg(k)[np.minimum(n_relevant, k)]
    n_hit = hits.sum(axis=1)
    return {"recall": n_hit / n_relevant, "hr": (n_hit > 0).astype(np.float64),
            "ndcg": dcg / idcg}


def _mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values)


def _targets(ranking: RankingResult, dataset: InteractionDataset):
    n_items = dataset.num_items
    target = dataset.split(ranking.split)
    keys = np.sort(target[:, 0] * n_items + target[:, 1])
    codes = ranking.users[:, None] * n_items + ranking.items
    pos = np.minimum(np.searchsorted(keys, codes), len(keys) - 1)
    hits = (keys[pos] == codes) & (ranking.items >= 0)
    return hits, target


def compute_metrics(ranking: RankingResult, dataset: InteractionDataset, k: int = 20) -> MetricsReport:
    """Recall@K, HR@K and NDCG@K averaged over the ranked users."""
    if k < 1 or k > ranking.items.shape[1]:
        raise ValueError(f"K={k} outside the ranked depth")
    hits, target = _targets(ranking, dataset)
    n_rel = np.bincount(target[:, 0], minlength=dataset.num_users)[ranking.users]
    vals = _per_user(hits, n_rel, k)
    return MetricsReport(k=k, split=ranking.split, num_users=len(ranking.users),
                         **{m: _mean(vals[m]) for m in METRICS})


def popular_mask(pop_index: PopularityIndex, pareto_pct: float = 20.0) -> np.ndarray:
    mask = np.zeros(len(pop_index.counts), dtype=bool)
    mask[pop_index.top_items(pareto_pct)] = True
    return mask


def group_metrics(ranking: RankingResult, dataset: InteractionDataset, pop_index: PopularityIndex,
                  k: int = 20, pareto_pct: float = 20.0) -> tuple[dict, dict]:
    """Per-group metrics and the popular-minus-unpopular gap.

    The top ``pareto_pct`` percent of items by training count are popular.
    Each group keeps only its own items in both the hit list and the user's
    target set; users left with no targets in a group are skipped for it.
    Returns ``(groups, gap)``; an empty group maps to ``None``.
    """
    hits, target = _targets(ranking, dataset)
    is_pop = popular_mask(pop_index, pareto_pct)
    item_pop = np.where(ranking.items >= 0, is_pop[np.maximum(ranking.items, 0)], False)
    groups = {}
    for name, flag in (("popular", True), ("unpopular", False)):
        in_group = is_pop[target[:, 1]] == flag
        n_rel = np.bincount(target[in_group, 0], minlength=dataset.num_users)[ranking.users]
        keep = n_rel > 0
        if not keep.any():
            groups[name] = None
            continue
        group_hits = hits & (item_pop == flag) & (ranking.items >= 0)
        vals = _per_user(group_hits[keep], n_rel[keep], k)
        groups[name] = {**{m: _mean(vals[m]) for m in METRICS}, "num_users": int(keep.sum())}
    if groups["popular"] is None or groups["unpopular"] is None:
        gap = {m: None for m in METRICS}
    else:
        gap = {m: groups["popular"][m] - groups["unpopular"][m] for m in METRICS}
    return groups, gap


def evaluate(prop: PropagatedEmbeddings, dataset: InteractionDataset, pop_index: PopularityIndex | None,
             k_list=(20,), split: str = "test", pareto_pct: float = 20.0) -> list[MetricsReport]:
    ranking = rank_all(prop, dataset, k_list, split)
    reports = []
    for k in ranking.k_values:
        rep = compute_metrics(ranking, dataset, k)
        if pop_index is not None:
            rep.groups, rep.gap = group_metrics(ranking, dataset, pop_index, k, pareto_pct)
        reports.append(rep)
    return reports


def median_bandwidth(pooled: np.ndarray) -> float:
    """Median squared distance over distinct pairs of the pooled sample."""
    if len(pooled) < 2:
        return 0.0
    return float(np.median(pdist(pooled, "sqeuclidean")))


def mmd(group_a, group_b, bandwidth: float | None = None) -> float:
    """Biased (V-statistic) squared MMD under a Gaussian kernel ``exp(-d^2 / bandwidth)``.

    ``bandwidth`` defaults to the median heuristic over the pooled rows.  When
    every point coincides the bandwidth is zero; a
    :class:`DegenerateBandwidthWarning` is issued and 0 returned.
    """
    a = np.atleast_2d(np.asarray(group_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(group_b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both groups must be non-empty")
    if bandwidth is None:
        bandwidth = median_bandwidth(np.vstack([a, b]))
    if bandwidth <= 0:
        warnings.warn("median pairwise distance is zero; MMD reported as 0",
                      DegenerateBandwidthWarning, stacklevel=2)
        return 0.0
    kaa = np.exp(-cdist(a, a, "sqeuclidean") / bandwidth).mean()
    kbb = np.exp(-cdist(b, b, "sqeuclidean") / bandwidth).mean()
    kab = np.exp(-cdist(a, b, "sqeuclidean") / bandwidth).mean()
    return float(max(kaa + kbb - 2.0 * kab, 0.0))


def cross_cosine(group_a, group_b, centroid: bool = False) -> float:
    """Mean cosine similarity over all cross-group pairs (zero rows dropped).

    ``centroid=True`` gives the cosine between the two group means instead.
    """
    a = np.atleast_2d(np.asarray(group_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(group_b, dtype=np.float64))
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    a, na = a[na > 0], na[na > 0]
    b, nb = b[nb > 0], nb[nb > 0]
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both groups need a non-zero row")
    if centroid:
        ca, cb = a.mean(axis=0), b.mean(axis=0)
        value = ca @ cb / (np.linalg.norm(ca) * np.linalg.norm(cb))
    else:
        value = (a / na[:, None]).mean(axis=0) @ (b / nb[:, None]).mean(axis=0)
    return float(np.clip(value, -1.0, 1.0))


def separation_report(item_embeddings: np.ndarray, pop_index: PopularityIndex,
                      pareto_pct: float = 20.0, max_per_group: int | None = 2000,
                      seed: int = 0, centroid: bool = False) -> SeparationReport:
    """MMD and cross-group cosine between popular and unpopular item embeddings.

    Groups larger than ``max_per_group`` are subsampled (seeded) to bound the
    quadratic kernel cost.
    """
    is_pop = popular_mask(pop_index, pareto_pct)
    rng = np.random.default_rng(seed)
    groups = []
    for flag in (True, False):
        rows = np.flatnonzero(is_pop == flag)
        if max_per_group is not None and len(rows) > max_per_group:
            rows = np.sort(rng.choice(rows, max_per_group, replace=False))
        groups.append(item_embeddings[rows])
    pooled = np.vstack(groups)
    bw = median_bandwidth(pooled)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateBandwidthWarning)
        value = mmd(groups[0], groups[1], bandwidth=bw) if bw > 0 else 0.0
    return SeparationReport(mmd=value, cross_cosine=cross_cosine(groups[0], groups[1], centroid),
                            bandwidth=bw, degenerate=bw <= 0,
                            num_popular=len(groups[0]), num_unpopular=len(groups[1]))


def reports_to_json(reports: list[MetricsReport], separation: SeparationReport | None = None) -> str:
    payload = {"metrics": [r.as_dict() for r in reports]}
    if separation is not None:
        payload["separation"] = separation.as_dict()
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


CSV_FIELDS = ("split", "k", "group", "recall", "hr", "ndcg", "num_users")


def reports_to_csv(reports: list[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerows(rep.csv_rows())
    return buf.getvalue()
