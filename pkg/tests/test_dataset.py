import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paac.dataset import (InteractionDataset, RawInteraction, build_popularity_index,
                          build_unbiased_split, ceil_share, dataset_stats, deduplicate, gini,
                          k_core_filter, load_interactions, popularity_from_counts,
                          read_split_manifest, sample_epoch_batches, write_split_manifest)
from paac.errors import EmptyResult, InfeasibleSplit, NegativeSamplingStall, ParseError
from paac.synthetic import power_law_interactions


def test_load_tsv(tmp_path):
    path = tmp_path / "a.tsv"
    path.write_text("u1\ti1\nu1\ti2\n")
    assert load_interactions(path) == [RawInteraction("u1", "i1"), RawInteraction("u1", "i2")]


def test_load_csv_skips_comments_and_extra_fields(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("# header\nu1,i1,5,123\n\nu2,i1\n")
    assert load_interactions(path, "csv") == [("u1", "i1"), ("u2", "i1")]


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    assert load_interactions(path) == []


def test_load_short_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("u1\n")
    with pytest.raises(ParseError) as info:
        load_interactions(path)
    assert info.value.line == 1


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_interactions(tmp_path / "nope.tsv")


def test_deduplicate_keeps_first_occurrence():
    raw = [("a", "x"), ("b", "x"), ("a", "x")]
    assert deduplicate(raw) == [("a", "x"), ("b", "x")]


def test_k_core_complete_bipartite_unchanged():
    raw = [(f"u{u}", f"i{i}") for u in range(10) for i in range(10)]
    assert k_core_filter(raw, 10) == raw


def test_k_core_single_pair_is_empty():
    with pytest.raises(EmptyResult):
        k_core_filter([("u1", "i1")], 10)


def test_k_core_star_cascades_to_empty():
    # items have degree 1 < 2, they go, then the user has nothing left
    star = [("u", f"i{i}") for i in range(12)]
    with pytest.raises(EmptyResult):
        k_core_filter(star, 2)


def test_k_core_peels_dangling_entities():
    core = [(f"u{u}", f"i{i}") for u in range(3) for i in range(3)]
    raw = core + [("u0", "lonely"), ("stranger", "i0")]
    assert sorted(k_core_filter(raw, 3)) == sorted(core)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=80), st.integers(1, 4))
def test_k_core_idempotent_and_valid(pairs, k):
    raw = [(f"u{u}", f"i{i}") for u, i in pairs]
    try:
        once = k_core_filter(raw, k)
    except EmptyResult:
        return
    assert k_core_filter(once, k) == once
    users = {}
    items = {}
    for u, i in set(once):
        users[u] = users.get(u, 0) + 1
        items[i] = items.get(i, 0) + 1
    assert min(users.values()) >= k and min(items.values()) >= k


def _grid(num_users, num_items, per_item):
    """Item i is hit by users i, i+1, ... (mod num_users)."""
    return [(f"u{(i + j) % num_users}", f"i{i}") for i in range(num_items) for j in range(per_item)]


def test_split_one_test_interaction_per_item():
    data = build_unbiased_split(_grid(10, 10, 10), 0.1, 0.1, seed=3)
    assert data.test_quota == 1
    assert len(data.test) == 10
    assert np.array_equal(np.bincount(data.test[:, 1], minlength=10), np.ones(10))
    assert len(data.valid) == 10


def test_split_infeasible_when_quota_one_overshoots():
    # 10 items need 10 test rows but the budget is 0.05 * 100 = 5
    with pytest.raises(InfeasibleSplit):
        build_unbiased_split(_grid(10, 10, 10), 0.05, 0.1)


def test_split_deterministic():
    pairs = power_law_interactions(200, 100, 3000, seed=1)
    a = build_unbiased_split(pairs, seed=7)
    b = build_unbiased_split(pairs, seed=7)
    for name in ("train", "valid", "test"):
        assert np.array_equal(a.split(name), b.split(name))
    c = build_unbiased_split(pairs, seed=8)
    assert not np.array_equal(a.test, c.test)


def _codes(arr, n):
    return set((arr[:, 0] * n + arr[:, 1]).tolist())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_split_partition_and_uniformity(seed):
    pairs = power_law_interactions(120, 60, 1800, zipf_exponent=1.0, seed=seed)
    data = build_unbiased_split(pairs, 0.1, 0.1, seed=seed)
    n = data.num_items
    train, valid, test = (_codes(data.split(s), n) for s in ("train", "valid", "test"))
    assert not (train & valid) and not (train & test) and not (valid & test)
    assert len(train) + len(valid) + len(test) == len({tuple(p) for p in pairs.tolist()})
    assert len(train) == len(data.train)
    # every entity keeps a training interaction
    assert np.all(np.bincount(data.train[:, 0], minlength=data.num_users) > 0)
    assert np.all(np.bincount(data.train[:, 1], minlength=n) > 0)
    # quota is the largest c under the budget
    counts = np.bincount(np.concatenate([data.train, data.valid, data.test])[:, 1], minlength=n)
    caps = counts - 1
    c = data.test_quota
    budget = 0.1 * data.num_interactions
    assert np.minimum(caps, c).sum() <= budget < np.minimum(caps, c + 1).sum() or c == caps.max()
    assert len(data.test) <= np.minimum(caps, c).sum()
    assert len(data.valid) == math.floor(0.1 * data.num_interactions)
    test_counts = np.bincount(data.test[:, 1], minlength=n)
    assert test_counts.max() <= c


def test_split_uniformity_when_users_are_not_binding():
    data = build_unbiased_split(_grid(40, 20, 12), 0.1, 0.1, seed=0)
    test_counts = np.bincount(data.test[:, 1], minlength=20)
    assert data.test_quota == 1
    assert test_counts.max() - test_counts.min() == 0


def test_gini_examples():
    assert gini([4, 4, 4]) == 0.0
    assert gini([1, 3]) == pytest.approx(0.25, abs=1e-15)


def _gini_pairwise(counts):
    counts = np.asarray(counts, dtype=float)
    n = len(counts)
    return np.abs(counts[:, None] - counts[None, :]).sum() / (2 * n * n * counts.mean())


@given(st.lists(st.integers(1, 1000), min_size=1, max_size=40), st.integers(1, 50))
def test_gini_matches_pairwise_formula_and_is_scale_invariant(counts, factor):
    g = gini(counts)
    assert 0 <= g < 1
    assert g == pytest.approx(_gini_pairwise(counts), abs=1e-12)
    assert gini([c * factor for c in counts]) == pytest.approx(g, abs=1e-12)


def test_popularity_order_tie_break():
    pop = popularity_from_counts([3, 5, 3, 1])
    assert pop.order.tolist() == [1, 0, 2, 3]
    assert pop.max_count == 5 and pop.min_count == 1 and pop.mean_count == 3.0
    assert pop.top_items(50).tolist() == [1, 0]


def test_popularity_counts_come_from_train():
    data = build_unbiased_split(_grid(10, 10, 10), 0.1, 0.1, seed=1)
    pop = build_popularity_index(data)
    assert pop.counts.sum() == len(data.train)
    assert sorted(pop.order.tolist()) == list(range(10))


def test_ceil_share_is_robust_to_float_noise():
    assert ceil_share(10, 30) == 3
    assert ceil_share(3, 50) == 2
    assert ceil_share(1, 50) == 1


def _tiny_dataset(train, num_users, num_items):
    return InteractionDataset(num_users, num_items, np.array(train), np.empty((0, 2)), np.empty((0, 2)))


def test_batches_partition_sizes():
    data = _tiny_dataset([(0, 0), (0, 1), (1, 1), (1, 2), (2, 0)], 3, 4)
    sizes = [len(b) for b in sample_epoch_batches(data, 2, np.random.default_rng(0))]
    assert sizes == [2, 2, 1]


def test_forced_negative():
    data = _tiny_dataset([(0, 0), (0, 1), (0, 2)], 1, 4)
    for batch in sample_epoch_batches(data, 2, np.random.default_rng(0)):
        assert np.all(batch.neg_items == 3)


def test_saturated_user_stalls():
    data = _tiny_dataset([(0, 0), (0, 1), (1, 0)], 2, 2)
    with pytest.raises(NegativeSamplingStall) as info:
        list(sample_epoch_batches(data, 8, np.random.default_rng(0)))
    assert info.value.user == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 300))
def test_batches_cover_train_once(seed, batch_size):
    pairs = power_law_interactions(60, 40, 700, seed=seed)
    data = build_unbiased_split(pairs, seed=seed)
    seen = []
    train = _codes(data.train, data.num_items)
    for batch in sample_epoch_batches(data, batch_size, np.random.default_rng(seed)):
        assert set(batch.batch_items.tolist()) == set(batch.pos_items.tolist())
        for u, i, j in batch.triples.tolist():
            assert u * data.num_items + j not in train
            seen.append(u * data.num_items + i)
        for u, items in batch.per_user_items.items():
            assert set(items) == set(batch.pos_items[batch.users == u].tolist())
    assert sorted(seen) == sorted(train)


def test_manifest_round_trip_and_stats(tmp_path):
    pairs = power_law_interactions(100, 50, 1500, seed=2)
    data = build_unbiased_split(pairs, seed=2)
    stats = write_split_manifest(data, tmp_path)
    loaded = read_split_manifest(tmp_path)
    for name in ("train", "valid", "test"):
        assert np.array_equal(loaded.split(name), data.split(name))
    on_disk = json.loads((tmp_path / "stats.json").read_text())
    assert on_disk == json.loads(json.dumps(stats))
    for key in ("M", "N", "train", "valid", "test", "c", "gini", "max", "min", "mean"):
        assert key in on_disk
    assert stats == dataset_stats(data)
    first = (tmp_path / "train.txt").read_text().splitlines()[0].split()
    assert len(first) == 2
