"""Loss terms and their analytic gradients.

Every term returns its value together with the gradient with respect to the
tensors it reads (final propagated embeddings, or contrastive views).
:func:`total_loss` chains those back through the view normalisation and the
LightGCN propagation to the base embedding tables.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.sparse as sp

from paac.dataset import MiniBatch, PopularityIndex, ceil_share
from paac.encoder import (ContrastViews, EmbeddingState, NormalizedAdjacency,
                          PropagatedEmbeddings, make_views, propagate,
                          propagate_backward, views_backward)

ABLATIONS = ("full", "no_pop_cl", "no_unpop_cl", "no_alignment")
# "sum" adds the alignment and contrastive terms over users/anchors; "mean"
# divides each by its user/anchor count so it sits on the same scale as BPR
REDUCTIONS = ("sum", "mean")


@dataclass
class Hyperparams:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1e-4
    gamma: float = 0.5
    beta: float = 0.5
    x_ratio: float = 50.0
    tau: float = 0.2
    epsilon: float = 0.1
    layers: int = 2
    lr: float = 1e-3
    dim: int = 64
    batch_size: int = 2048
    epochs: int = 100
    seed: int = 0
    normalize_views: bool = True
    dtype: str = "float64"
    reduction: str = "sum"

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("lambda1, lambda2, lambda3 must be non-negative")
        if not 0 <= self.gamma <= 1 or not 0 <= self.beta <= 1:
            raise ValueError("gamma and beta must lie in [0, 1]")
        if not 0 < self.x_ratio < 100:
            raise ValueError("x_ratio must lie in (0, 100)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.layers < 0 or self.dim < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid layers/dim/batch_size/lr")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class GroupSplit:
    pop: np.ndarray
    unpop: np.ndarray


@dataclass
class LossBreakdown:
    rec: float = 0.0
    sa: float = 0.0
    cl_item: float = 0.0
    cl_pop: float = 0.0
    cl_unpop: float = 0.0
    cl_user: float = 0.0
    cl_total: float = 0.0
    reg: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class GradientSet:
    d_user_base: np.ndarray
    d_item_base: np.ndarray

    def touched_users(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.d_user_base != 0, axis=1))

    def touched_items(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.d_item_base != 0, axis=1))


def _scatter_rows(index, values, n_rows):
    """Row-wise ``out[index[k]] += values[k]`` via a sparse product (faster than ``np.add.at``)."""
    agg = sp.csr_matrix((np.ones(len(index), dtype=values.dtype), (index, np.arange(len(index)))),
                        shape=(n_rows, len(index)))
    return agg @ values


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def bpr_loss(batch: MiniBatch, prop: PropagatedEmbeddings):
    """Mean ``-ln sigmoid(s(u,i) - s(u,j))`` over the batch triples.

    Returns ``(loss, d_user_final, d_item_final)``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    z = prop.user_final[batch.users]
    diff = prop.item_final[batch.pos_items] - prop.item_final[batch.neg_items]
    margin = np.sum(z * diff, axis=1)
    n = len(margin)
    loss = float(-np.sum(_log_sigmoid(margin)) / n)

    # d/dx of -ln sigmoid(x) is -sigmoid(-x)
    coef = (-np.exp(_log_sigmoid(-margin)) / n)[:, None]
    d_user = _scatter_rows(batch.users, coef * diff, len(prop.user_final))
    d_item = _scatter_rows(np.concatenate([batch.pos_items, batch.neg_items]),
                           np.concatenate([coef * z, -coef * z]), len(prop.item_final))
    return loss, d_user, d_item


def split_by_popularity(items, pop_index: PopularityIndex, x_ratio: float = 50.0) -> GroupSplit:
    """Top ``ceil(x% of |items|)`` by training count go to ``pop``; ties by lower index."""
    items = np.unique(np.asarray(items, dtype=np.int64))
    if len(items) == 0:
        raise ValueError("items must be non-empty")
    ranked = items[np.argsort(pop_index.rank[items], kind="stable")]
    k = ceil_share(len(ranked), x_ratio)
    return GroupSplit(pop=ranked[:k], unpop=ranked[k:])


def supervised_alignment_loss(batch: MiniBatch, prop: PropagatedEmbeddings,
                              pop_index: PopularityIndex, x_ratio: float = 50.0):
    """Pull each user's popular batch items toward their unpopular ones.

    Per user ``u`` with batch items ``I_u`` split into popular ``P`` and
    unpopular ``Q``, adds ``sum_{i in P, j in Q} ||f(i) - f(j)||^2 / |I_u|``.
    Returns ``(loss, d_item_final)``.
    """
    f = prop.item_final
    codes = np.unique(batch.users * len(f) + batch.pos_items)
    users, items = codes // len(f), codes % len(f)
    order = np.lexsort((pop_index.rank[items], users))
    users, items = users[order], items[order]

    _, group, sizes = np.unique(users, return_inverse=True, return_counts=True)
    n_groups = len(sizes)
    first = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    position = np.arange(len(users)) - first[group]
    n_pop_of = np.ceil(np.round(x_ratio * sizes / 100.0, 9)).astype(np.int64)
    is_pop = position < n_pop_of[group]

    rows = f[items]
    pop_f = rows * is_pop[:, None]
    unpop_f = rows - pop_f
    n_pop = n_pop_of.astype(np.float64)
    n_unpop = sizes - n_pop
    sum_pop = _scatter_rows(group, pop_f, n_groups)
    sum_unpop = _scatter_rows(group, unpop_f, n_groups)

    valid = (n_pop > 0) & (n_unpop > 0)
    mean_pop = sum_pop / np.maximum(n_pop, 1)[:, None]
    mean_unpop = sum_unpop / np.maximum(n_unpop, 1)[:, None]
    centred = rows - np.where(is_pop[:, None], mean_pop[group], mean_unpop[group])
    sq = np.sum(centred * centred, axis=1)
    within_pop = _scatter_rows(group, (sq * is_pop)[:, None], n_groups)[:, 0]
    within_unpop = _scatter_rows(group, (sq * ~is_pop)[:, None], n_groups)[:, 0]
    gap = np.sum((mean_pop - mean_unpop) ** 2, axis=1)
    per_user = (n_unpop * within_pop + n_pop * within_unpop + n_pop * n_unpop * gap) / sizes
    loss = float(np.sum(per_user[valid]))

    # d/df(i) for i in P: 2/|I_u| * (|Q| f(i) - sum_Q f); symmetric for Q
    other_count = np.where(is_pop, n_unpop[group], n_pop[group])
    other_sum = np.where(is_pop[:, None], sum_unpop[group], sum_pop[group])
    grad_rows = 2.0 / sizes[group][:, None] * (other_count[:, None] * rows - other_sum)
    grad_rows[~valid[group]] = 0.0
    return loss, _scatter_rows(items, grad_rows, len(f))


def reweighted_infonce(anchors, same_group, other_group, v1: np.ndarray, v2: np.ndarray,
                       tau: float = 0.2, beta: float = 1.0, reduction: str = "sum"):
    """Group-aware InfoNCE summed over ``anchors``.

    For anchor ``i`` the denominator is the sum over ``same_group`` (which
    contains ``i`` itself) plus ``beta`` times the sum over ``other_group``.
    Returns ``(loss, d_v1, d_v2)`` with gradients shaped like the views;
    ``reduction="mean"`` averages over anchors instead of summing.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    same = np.asarray(same_group, dtype=np.int64)
    other = np.asarray(other_group, dtype=np.int64)
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    d_v1 = np.zeros_like(v1)
    d_v2 = np.zeros_like(v2)
    if len(anchors) == 0:
        return 0.0, d_v1, d_v2

    sorter = np.argsort(same, kind="stable")
    pos = sorter[np.minimum(np.searchsorted(same, anchors, sorter=sorter), len(same) - 1)]
    if len(same) == 0 or np.any(same[pos] != anchors):
        raise ValueError("anchors must be a subset of same_group")

    if beta > 0 and len(other):
        cols = np.concatenate([same, other])
        log_w = np.concatenate([np.zeros(len(same)), np.full(len(other), math.log(beta))])
    else:
        cols, log_w = same, np.zeros(len(same))

    a = v1[anchors]
    c = v2[cols]
    logits = (a @ c.T) / tau
    z = logits + log_w.astype(logits.dtype)
    zmax = z.max(axis=1, keepdims=True)
    expz = np.exp(z - zmax)
    denom = expz.sum(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(denom[:, 0])
    rows = np.arange(len(anchors))
    per_anchor = np.maximum(lse - logits[rows, pos], 0.0)
    loss = float(np.sum(per_anchor))

    g = expz / denom
    g[rows, pos] -= 1.0
    g /= tau
    if reduction == "mean":
        loss /= len(anchors)
        g /= len(anchors)
    d_v1[anchors] += g @ c
    d_v2[cols] += g.T @ a
    return loss, d_v1, d_v2


def cl_item_loss(batch: MiniBatch, views: ContrastViews, pop_index: PopularityIndex,
                 hp: Hyperparams, ablation: str = "full"):
    """Returns ``(cl_pop, cl_unpop, cl_item, d_items_v1, d_items_v2)``.

    ``cl_item = gamma * cl_pop + (1 - gamma) * cl_unpop``; the ``no_pop_cl`` and
    ``no_unpop_cl`` ablations drop (and report as zero) one group term.
    """
    groups = split_by_popularity(batch.batch_items, pop_index, hp.x_ratio)
    d1 = np.zeros_like(views.items_v1)
    d2 = np.zeros_like(views.items_v2)
    cl_pop = cl_unpop = 0.0
    if ablation != "no_pop_cl" and hp.gamma > 0:
        cl_pop, g1, g2 = reweighted_infonce(groups.pop, groups.pop, groups.unpop,
                                            views.items_v1, views.items_v2, hp.tau, hp.beta, hp.reduction)
        d1 += hp.gamma * g1
        d2 += hp.gamma * g2
    if ablation != "no_unpop_cl" and hp.gamma < 1:
        cl_unpop, g1, g2 = reweighted_infonce(groups.unpop, groups.unpop, groups.pop,
                                              views.items_v1, views.items_v2, hp.tau, hp.beta, hp.reduction)
        d1 += (1 - hp.gamma) * g1
        d2 += (1 - hp.gamma) * g2
    cl_item = hp.gamma * cl_pop + (1 - hp.gamma) * cl_unpop
    return cl_pop, cl_unpop, cl_item, d1, d2


def cl_user_loss(batch: MiniBatch, views: ContrastViews, tau: float = 0.2, reduction: str = "sum"):
    """Plain InfoNCE over the batch users. Returns ``(loss, d_users_v1, d_users_v2)``."""
    users = batch.batch_users
    return reweighted_infonce(users, users, users[:0], views.users_v1, views.users_v2, tau, 1.0,
                              reduction)


def l2_reg(state: EmbeddingState, batch: MiniBatch, lambda3: float = 1e-4):
    """``lambda3 * sum ||theta||^2`` over the distinct base rows the batch touches."""
    users = np.unique(batch.users)
    items = np.unique(np.concatenate([batch.pos_items, batch.neg_items]))
    zu = state.user_base[users]
    hi = state.item_base[items]
    loss = float(lambda3 * (np.sum(zu * zu) + np.sum(hi * hi)))
    d_user = np.zeros_like(state.user_base)
    d_item = np.zeros_like(state.item_base)
    d_user[users] = 2.0 * lambda3 * zu
    d_item[items] = 2.0 * lambda3 * hi
    return loss, d_user, d_item


def total_loss(batch: MiniBatch, state: EmbeddingState, adj: NormalizedAdjacency,
               pop_index: PopularityIndex, hp: Hyperparams,
               rng: np.random.Generator | None = None,
               ablation: str = "full") -> tuple[LossBreakdown, GradientSet]:
    """Full objective ``rec + l1*sa + l2*(cl_item + cl_user)/2 + reg`` and its gradient."""
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    prop = propagate(state, adj, hp.layers)
    out = LossBreakdown()

    out.rec, d_user, d_item = bpr_loss(batch, prop)

    if hp.lambda1 > 0 and ablation != "no_alignment":
        out.sa, d_sa = supervised_alignment_loss(batch, prop, pop_index, hp.x_ratio)
        if hp.reduction == "mean":
            out.sa /= len(batch.batch_users)
            d_sa /= len(batch.batch_users)
        d_item += hp.lambda1 * d_sa

    if hp.lambda2 > 0:
        views = make_views(prop, hp.epsilon, rng, normalize=hp.normalize_views)
        out.cl_pop, out.cl_unpop, out.cl_item, di1, di2 = cl_item_loss(
            batch, views, pop_index, hp, ablation)
        out.cl_user, du1, du2 = cl_user_loss(batch, views, hp.tau, hp.reduction)
        out.cl_total = 0.5 * (out.cl_item + out.cl_user)
        w = 0.5 * hp.lambda2
        gu, gi = views_backward(views, w * du1, w * du2, w * di1, w * di2)
        d_user += gu
        d_item += gi

    g_user, g_item = propagate_backward(adj, d_user, d_item, hp.layers)

    if hp.lambda3 > 0:
        out.reg, r_user, r_item = l2_reg(state, batch, hp.lambda3)
        g_user += r_user
        g_item += r_item

    out.total = out.rec + hp.lambda1 * out.sa + hp.lambda2 * out.cl_total + out.reg
    return out, GradientSet(g_user, g_item)
