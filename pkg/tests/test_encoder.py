import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_propagation
from paac.encoder import (EmbeddingState, NormalizedAdjacency, PropagatedEmbeddings,
                          adjacency_from_pairs, init_embeddings, load_embeddings, make_views,
                          propagate, propagate_backward, save_embeddings, score, views_backward,
                          xavier_bound)
from paac.errors import FormatError


def test_xavier_bound_and_range():
    assert xavier_bound(64) == pytest.approx(math.sqrt(6 / 128), abs=1e-15)
    assert xavier_bound(64) == pytest.approx(0.2165, abs=1e-4)
    state = init_embeddings(30, 20, 64, seed=0)
    assert np.abs(state.user_base).max() <= xavier_bound(64)
    assert np.abs(state.item_base).max() <= xavier_bound(64)
    assert state.user_base.shape == (30, 64) and state.item_base.shape == (20, 64)


def test_init_is_seeded():
    a, b, c = (init_embeddings(5, 6, 8, seed=s) for s in (1, 1, 2))
    assert np.array_equal(a.user_base, b.user_base) and np.array_equal(a.item_base, b.item_base)
    assert not np.array_equal(a.user_base, c.user_base)


def test_adjacency_weights():
    assert adjacency_from_pairs([(0, 0)], 1, 1).matrix[0, 1] == 1.0
    adj = adjacency_from_pairs([(0, 0), (0, 1), (0, 2), (0, 3)], 1, 4)
    assert adj.matrix[0, 1] == 0.5 and adj.matrix[1, 0] == 0.5


def test_adjacency_symmetric(instance):
    mat = instance.adj.matrix
    assert (mat != mat.T).nnz == 0
    # only train edges, no self loops, no user-user / item-item blocks
    m = instance.num_users
    assert mat[:m, :m].nnz == 0 and mat[m:, m:].nnz == 0
    assert mat.nnz == 2 * len(instance.pairs)


def test_propagate_zero_layers_is_identity(instance):
    prop = propagate(instance.state, instance.adj, 0)
    assert np.array_equal(prop.user_final, instance.state.user_base)
    assert np.array_equal(prop.item_final, instance.state.item_base)


def test_single_edge_one_layer():
    state = EmbeddingState(np.array([[1.0, 2.0]]), np.array([[3.0, -5.0]]))
    prop = propagate(state, adjacency_from_pairs([(0, 0)], 1, 1), 1)
    assert np.array_equal(prop.user_final, [[2.0, -1.5]])
    assert np.array_equal(prop.item_final, [[2.0, -1.5]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 3), st.integers(1, 32), st.integers(1, 32))
def test_sparse_matches_dense(seed, layers, m, n):
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < 0.3
    pairs = np.argwhere(mask)
    state = init_embeddings(m, n, 5, seed=seed)
    prop = propagate(state, adjacency_from_pairs(pairs, m, n), layers)
    oracle = dense_propagation(state, pairs, m, n, layers)
    assert np.abs(np.vstack([prop.user_final, prop.item_final]) - oracle).max() < 1e-12


def test_six_node_graph_three_layers():
    pairs = [(0, 0), (0, 1), (1, 1), (2, 2), (2, 0)]
    state = init_embeddings(3, 3, 4, seed=9)
    prop = propagate(state, adjacency_from_pairs(pairs, 3, 3), 3)
    oracle = dense_propagation(state, pairs, 3, 3, 3)
    assert np.abs(np.vstack([prop.user_final, prop.item_final]) - oracle).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-10, 10).filter(lambda a: abs(a) > 1e-3))
def test_propagation_linear(seed, alpha):
    rng = np.random.default_rng(seed)
    pairs = np.argwhere(rng.random((6, 7)) < 0.4)
    adj = adjacency_from_pairs(pairs, 6, 7)
    state = init_embeddings(6, 7, 3, seed=seed)
    scaled = EmbeddingState(alpha * state.user_base, alpha * state.item_base)
    a = propagate(scaled, adj, 2)
    b = propagate(state, adj, 2)
    for x, y in ((a.user_final, b.user_final), (a.item_final, b.item_final)):
        np.testing.assert_allclose(x, alpha * y, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("layers", [0, 1, 2, 3])
def test_zero_adjacency_divides_base(layers):
    state = init_embeddings(3, 4, 2, seed=1)
    adj = NormalizedAdjacency(sp.csr_matrix((7, 7)), np.zeros(3), np.zeros(4))
    prop = propagate(state, adj, layers)
    assert np.array_equal(prop.user_final, state.user_base / (layers + 1))
    assert len(prop.per_layer) == layers + 1


@pytest.mark.parametrize("layers", [0, 1, 2, 3])
def test_backward_is_adjoint(instance, layers):
    rng = np.random.default_rng(layers)
    du = rng.normal(size=instance.state.user_base.shape)
    di = rng.normal(size=instance.state.item_base.shape)
    gu, gi = propagate_backward(instance.adj, du, di, layers)
    # <d, J x> == <J^T d, x> for the linear map x -> propagate(x)
    x = init_embeddings(instance.num_users, instance.num_items, 4, seed=layers + 7)
    prop = propagate(x, instance.adj, layers)
    lhs = np.sum(du * prop.user_final) + np.sum(di * prop.item_final)
    rhs = np.sum(gu * x.user_base) + np.sum(gi * x.item_base)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def _prop(rows_u, rows_i):
    return PropagatedEmbeddings(np.asarray(rows_u, float), np.asarray(rows_i, float), [])


def test_views_zero_noise_are_normalised_embeddings(instance):
    prop = propagate(instance.state, instance.adj, 1)
    views = make_views(prop, 0.0, np.random.default_rng(0))
    expected = prop.item_final / np.linalg.norm(prop.item_final, axis=1, keepdims=True)
    np.testing.assert_allclose(views.items_v1, expected, atol=1e-15)
    np.testing.assert_array_equal(views.items_v1, views.items_v2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
def test_views_unit_norm_and_sign_preserving(seed, eps):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(9, 5))
    e[rng.random(e.shape) < 0.1] = 0.0
    prop = _prop(e[:4], e[4:])
    views = make_views(prop, eps, np.random.default_rng(seed), normalize=False)
    raw = np.vstack([views.users_v1, views.items_v1])
    nz = e != 0
    assert np.array_equal(np.sign(raw[nz]), np.sign(e[nz]))
    normed = make_views(prop, eps, np.random.default_rng(seed))
    for v in (normed.users_v1, normed.users_v2, normed.items_v1, normed.items_v2):
        rows = np.linalg.norm(v, axis=1)
        assert np.all(np.abs(rows[rows > 0] - 1) < 1e-12)
    assert not np.array_equal(normed.items_v1, normed.items_v2)


def test_views_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    e = rng.normal(size=(7, 4))
    d1 = rng.normal(size=(7, 4))
    d2 = rng.normal(size=(7, 4))

    def objective(emb):
        v = make_views(_prop(emb[:3], emb[3:]), 0.3, np.random.default_rng(11))
        return (np.sum(d1[:3] * v.users_v1) + np.sum(d1[3:] * v.items_v1)
                + np.sum(d2[:3] * v.users_v2) + np.sum(d2[3:] * v.items_v2))

    views = make_views(_prop(e[:3], e[3:]), 0.3, np.random.default_rng(11))
    gu, gi = views_backward(views, d1[:3], d2[:3], d1[3:], d2[3:])
    numeric = np.zeros_like(e)
    for idx in np.ndindex(e.shape):
        up, down = e.copy(), e.copy()
        up[idx] += 1e-6
        down[idx] -= 1e-6
        numeric[idx] = (objective(up) - objective(down)) / 2e-6
    np.testing.assert_allclose(np.vstack([gu, gi]), numeric, rtol=1e-6, atol=1e-8)


def test_score_examples():
    prop = _prop([[1.0, 0.0], [1.0, 2.0]], [[1.0, 0.0], [0.0, 1.0], [3.0, -1.0]])
    assert score(prop, 0, 0) == 1.0
    assert score(prop, 0, 1) == 0.0
    assert score(prop, 1, 2) == 1.0
    with pytest.raises(IndexError):
        score(prop, 2, 0)
    with pytest.raises(IndexError):
        score(prop, 0, -1)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(-3, 3), st.floats(-3, 3))
def test_score_bilinear(vals, a, b):
    u = np.array(vals[:3])
    prop = _prop([u, 2 * u], [[1.0, 2.0, 3.0], [a, b, 1.0]])
    assert score(prop, 1, 0) == pytest.approx(2 * score(prop, 0, 0), abs=1e-9)
    assert score(prop, 0, 1) == pytest.approx(u @ np.array([a, b, 1.0]), abs=1e-9)


@pytest.mark.parametrize("text", [False, True])
def test_embedding_export_round_trip(tmp_path, text):
    users = np.arange(6, dtype=np.float32).reshape(2, 3) / 7
    items = -np.arange(9, dtype=np.float32).reshape(3, 3) / 3
    path = tmp_path / "emb"
    save_embeddings(path, users, items, text=text)
    assert path.read_bytes().startswith(b"PAAC-EMB v1 2 3 3\n")
    u, i = load_embeddings(path)
    np.testing.assert_array_equal(u, users)
    np.testing.assert_array_equal(i, items)
    if not text:
        body = path.read_bytes().split(b"\n", 1)[1]
        assert np.array_equal(np.frombuffer(body, "<f4"), np.concatenate([users.ravel(), items.ravel()]))


def test_embedding_bad_header(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(b"NOPE 1 2 3\n")
    with pytest.raises(FormatError):
        load_embeddings(path)
