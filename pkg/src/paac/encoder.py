"""LightGCN encoder on numpy/scipy with explicit backward passes.

Forward::

    e0 = [Z; H]
    e(l+1) = A_hat @ e(l)
    final = (e0 + ... + eL) / (L + 1)

``A_hat`` is the symmetric-normalised bipartite adjacency, so the backward
pass applies the same operator to the incoming gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from paac.errors import FormatError

EMB_MAGIC = "PAAC-EMB v1"
_TEXT_BYTES = frozenset(b"0123456789+-.eEnaifNI \t\r\n")


@dataclass(eq=False)
class EmbeddingState:
    user_base: np.ndarray
    item_base: np.ndarray

    @property
    def dim(self) -> int:
        return self.user_base.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_base.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_base.shape[0]

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.user_base.copy(), self.item_base.copy())

    def stacked(self) -> np.ndarray:
        return np.vstack([self.user_base, self.item_base])

    def astype(self, dtype) -> "EmbeddingState":
        return EmbeddingState(self.user_base.astype(dtype), self.item_base.astype(dtype))


@dataclass(eq=False)
class NormalizedAdjacency:
    matrix: sp.csr_matrix
    user_degree: np.ndarray
    item_degree: np.ndarray

    @property
    def num_users(self) -> int:
        return len(self.user_degree)

    @property
    def num_items(self) -> int:
        return len(self.item_degree)

    def astype(self, dtype) -> "NormalizedAdjacency":
        return NormalizedAdjacency(self.matrix.astype(dtype), self.user_degree, self.item_degree)


@dataclass(eq=False)
class PropagatedEmbeddings:
    user_final: np.ndarray
    item_final: np.ndarray
    per_layer: list | None = None

    @property
    def layers(self) -> int:
        return 0 if self.per_layer is None else len(self.per_layer) - 1


@dataclass(eq=False)
class ContrastViews:
    users_v1: np.ndarray
    users_v2: np.ndarray
    items_v1: np.ndarray
    items_v2: np.ndarray
    epsilon: float
    # pre-normalisation row norms, needed by views_backward
    norms: tuple = ()


def xavier_bound(dim: int) -> float:
    return math.sqrt(6.0 / (dim + dim))


def init_embeddings(num_users: int, num_items: int, dim: int = 64, seed=0) -> EmbeddingState:
    """Xavier-uniform tables with ``fan_in = fan_out = dim``."""
    if min(num_users, num_items, dim) < 1:
        raise ValueError("num_users, num_items and dim must be >= 1")
    rng = np.random.default_rng(seed)
    bound = xavier_bound(dim)
    users = rng.uniform(-bound, bound, size=(num_users, dim))
    items = rng.uniform(-bound, bound, size=(num_items, dim))
    return EmbeddingState(users, items)


def adjacency_from_pairs(pairs, num_users: int, num_items: int) -> NormalizedAdjacency:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    u, i = pairs[:, 0], pairs[:, 1]
    du = np.bincount(u, minlength=num_users).astype(np.float64)
    di = np.bincount(i, minlength=num_items).astype(np.float64)
    w = 1.0 / np.sqrt(du[u] * di[i])
    n = num_users + num_items
    rows = np.concatenate([u, i + num_users])
    cols = np.concatenate([i + num_users, u])
    mat = sp.csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))
    mat.sort_indices()
    return NormalizedAdjacency(mat, du, di)


def build_adjacency(dataset) -> NormalizedAdjacency:
    if len(dataset.train) == 0:
        raise ValueError("training split is empty")
    return adjacency_from_pairs(dataset.train, dataset.num_users, dataset.num_items)


def propagate(state: EmbeddingState, adj: NormalizedAdjacency, layers: int = 2) -> PropagatedEmbeddings:
    if layers < 0:
        raise ValueError("layers must be >= 0")
    e = state.stacked()
    per_layer = [e]
    total = e.copy()
    for _ in range(layers):
        e = adj.matrix @ e
        per_layer.append(e)
        total += e
    final = total / (layers + 1)
    m = state.num_users
    return PropagatedEmbeddings(final[:m], final[m:], per_layer)


def propagate_backward(adj: NormalizedAdjacency, d_user_final, d_item_final,
                       layers: int) -> tuple[np.ndarray, np.ndarray]:
    """Pull a gradient on the final embeddings back to the base tables."""
    g = np.vstack([d_user_final, d_item_final]) / (layers + 1)
    acc = g.copy()
    for _ in range(layers):
        g = adj.matrix.T @ g
        acc += g
    m = adj.num_users
    return acc[:m], acc[m:]


def _perturb(e: np.ndarray, epsilon: float, rng: np.random.Generator, normalize: bool):
    noise = rng.random(e.shape, dtype=e.dtype)
    noise /= np.linalg.norm(noise, axis=1, keepdims=True)
    shifted = e + epsilon * np.sign(e) * noise
    if not normalize:
        return shifted, None
    norm = np.linalg.norm(shifted, axis=1, keepdims=True)
    return shifted / np.where(norm > 0, norm, 1.0), norm


def make_views(prop: PropagatedEmbeddings, epsilon: float = 0.1,
               rng: np.random.Generator | None = None, normalize: bool = True) -> ContrastViews:
    """Two sign-aligned noisy copies of every final embedding, rows unit-normalised.

    ``normalize=False`` keeps raw perturbed rows (dot-product InfoNCE).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    rng = rng if rng is not None else np.random.default_rng()
    e = np.vstack([prop.user_final, prop.item_final])
    v1, n1 = _perturb(e, epsilon, rng, normalize)
    v2, n2 = _perturb(e, epsilon, rng, normalize)
    m = len(prop.user_final)
    return ContrastViews(users_v1=v1[:m], users_v2=v2[:m], items_v1=v1[m:], items_v2=v2[m:],
                         epsilon=epsilon, norms=(n1, n2))


def views_backward(views: ContrastViews, d_users_v1=None, d_users_v2=None,
                   d_items_v1=None, d_items_v2=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of view losses w.r.t. the final embeddings.

    The noise is a constant of the step and ``sign(e)`` is piecewise constant,
    so only the row normalisation contributes a Jacobian.
    """
    m, d = views.users_v1.shape
    n = views.items_v1.shape[0]
    dtype = views.users_v1.dtype
    out = np.zeros((m + n, d), dtype=dtype)
    for (uv, iv), (du, di), norm in zip(
            ((views.users_v1, views.items_v1), (views.users_v2, views.items_v2)),
            ((d_users_v1, d_items_v1), (d_users_v2, d_items_v2)),
            views.norms):
        if du is None and di is None:
            continue
        g = np.vstack([du if du is not None else np.zeros((m, d), dtype),
                       di if di is not None else np.zeros((n, d), dtype)])
        if norm is None:
            out += g
            continue
        v = np.vstack([uv, iv])
        radial = np.sum(v * g, axis=1, keepdims=True)
        out += (g - v * radial) / np.where(norm > 0, norm, 1.0)
    return out[:m], out[m:]


def score(prop: PropagatedEmbeddings, u: int, i: int) -> float:
    if not 0 <= u < len(prop.user_final):
        raise IndexError(f"user index {u} out of range")
    if not 0 <= i < len(prop.item_final):
        raise IndexError(f"item index {i} out of range")
    return float(prop.user_final[u] @ prop.item_final[i])


def save_embeddings(path, users: np.ndarray, items: np.ndarray, text: bool = False) -> None:
    """Write users then items, row-major, behind a ``PAAC-EMB v1 M N D`` header."""
    m, d = users.shape
    n = items.shape[0]
    header = f"{EMB_MAGIC} {m} {n} {d}\n"
    if text:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header)
            np.savetxt(fh, np.vstack([users, items]), fmt="%.9g")
        return
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.vstack([users, items]).astype("<f4").tobytes(order="C"))


def load_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        if header[:2] != EMB_MAGIC.split() or len(header) != 5:
            raise FormatError(f"{path}: not a {EMB_MAGIC} file")
        m, n, d = map(int, header[2:])
        body = fh.read()
    if body and set(body) <= _TEXT_BYTES:
        flat = np.loadtxt(body.decode("ascii").splitlines(), dtype=np.float32, ndmin=2).ravel()
    elif len(body) % 4 == 0:
        flat = np.frombuffer(body, dtype="<f4")
    else:
        raise FormatError(f"{path}: truncated binary body")
    if flat.size != (m + n) * d:
        raise FormatError(f"{path}: expected {(m + n) * d} values, found {flat.size}")
    table = flat.reshape(m + n, d).astype(np.float64)
    return table[:m], table[m:]
