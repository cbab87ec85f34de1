import itertools
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from metn import marks as mk
from metn.events import DataError, EventLog, sufficient_stats

from oracles import best_subset_score, lp_feasible, maxent_dual


def _stats(counts):
    counts = np.asarray(counts)
    n = counts.shape[0]
    i, j = np.nonzero(counts)
    reps = counts[i, j]
    src, dst = np.repeat(i, reps), np.repeat(j, reps)
    t = np.linspace(0.0, 1.0, src.size)
    return sufficient_stats(EventLog(t, src, dst, n, 1.0))


def _targets(row, col):
    return mk.MarginTargets(np.asarray(row, float), np.asarray(col, float))


def random_instance(rng, n, density=0.5):
    """Feasible masked instance: margins taken from a random matrix on the mask."""
    mask = (rng.random((n, n)) < density) & ~np.eye(n, dtype=bool)
    for i in range(n):
        if not mask[i].any():
            mask[i, (i + 1) % n] = True
        if not mask[:, i].any():
            mask[(i + 1) % n, i] = True
    A = rng.lognormal(0, 1, (n, n)) * mask
    return mask, A.sum(1), A.sum(0)


def test_mask_validation():
    with pytest.raises(ValueError):
        mk.validate_mask(np.ones((2, 2)))
    with pytest.raises(ValueError):
        mk.validate_mask(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        mk.validate_mask(np.full((2, 2), 2))
    assert_array_equal(mk.full_mask(2), [[False, True], [True, False]])


def test_edge_poisson_weights():
    w = mk.edge_poisson_weights(_stats([[0, 2], [1, 0]]))
    assert_allclose(w.probabilities, [[0, 2 / 3], [1 / 3, 0]])
    one = mk.edge_poisson_weights(_stats([[0, 0, 4], [0, 0, 0], [0, 0, 0]]))
    assert one.probabilities[0, 2] == 1.0 and one.probabilities.sum() == 1.0
    with pytest.raises(DataError):
        mk.edge_poisson_weights(_stats(np.zeros((2, 2), int)))


def test_ipfp_two_nodes():
    w = mk.ipfp_strength_weights(_targets([1, 1], [1, 1]), mk.full_mask(2))
    assert_allclose(w.weights, [[0, 1], [1, 0]], atol=1e-12)


def test_ipfp_uniform_three_nodes():
    w = mk.ipfp_strength_weights(_targets([2, 2, 2], [2, 2, 2]), mk.full_mask(3))
    expect = 1.0 - np.eye(3)
    assert_allclose(w.weights, expect, atol=1e-10)
    assert_allclose(maxent_dual(np.full(3, 2.0), np.full(3, 2.0), mk.full_mask(3)), expect, atol=1e-9)


@pytest.mark.parametrize("seed", range(15))
def test_ipfp_matches_maxent_oracle_small(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    mask, row, col = random_instance(rng, n, 0.7)
    w = mk.ipfp_strength_weights(_targets(row, col), mask, tol=1e-12)
    assert_allclose(w.weights, maxent_dual(row, col, mask), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 25))
def test_ipfp_properties(seed, n):
    rng = np.random.default_rng(seed)
    mask, row, col = random_instance(rng, n)
    w = mk.ipfp_strength_weights(_targets(row, col), mask)
    assert np.max(np.abs(w.weights.sum(1) - row)) < 1e-8
    assert np.max(np.abs(w.weights.sum(0) - col)) < 1e-8
    assert np.all(w.weights[~mask] == 0) and np.all(w.weights >= 0)
    x, y = w.factors
    assert np.max(np.abs(x[:, None] * y[None, :] * mask - w.weights)) < 1e-10
    kl = np.asarray(w.info["kl_history"])
    assert np.all(np.diff(kl) <= 1e-12)
    # scale covariance
    c = float(rng.uniform(0.1, 10))
    w2 = mk.ipfp_strength_weights(_targets(c * row, c * col), mask)
    assert_allclose(w2.weights, c * w.weights, rtol=1e-6, atol=1e-9)
    assert_allclose(w2.probabilities, w.probabilities, rtol=1e-6, atol=1e-10)


def test_ipfp_zero_target_rows_dropped():
    row = np.array([2.0, 0.0, 2.0])
    col = np.array([1.0, 2.0, 1.0])
    w = mk.ipfp_strength_weights(_targets(row, col), mk.full_mask(3))
    assert not w.weights[1].any()
    assert_allclose(w.weights.sum(0), col, atol=1e-8)


def test_ipfp_nonconvergence_flagged():
    mask, row, col = random_instance(np.random.default_rng(0), 10)
    with pytest.warns(mk.FallbackWarning):
        w = mk.ipfp_strength_weights(_targets(row, col), mask, tol=1e-300, max_iter=3)
    assert w.info["converged"] is False and w.info["sweeps"] == 3


def test_margin_targets_consistency():
    with pytest.raises(ValueError):
        _targets([1, 2], [1, 1])
    with pytest.raises(ValueError):
        _targets([-1, 2], [1, 0])


def test_feasibility_empty_row_named():
    mask = mk.full_mask(3)
    mask[1] = False
    rep = mk.check_feasibility(_targets([1, 1, 1], [1, 1, 1]), mask)
    assert not rep.feasible
    assert 1 in rep.rows
    assert "infeasible" in rep.describe()
    with pytest.raises(mk.InfeasibleError) as exc:
        mk.ipfp_strength_weights(_targets([1, 1, 1], [1, 1, 1]), mask)
    assert exc.value.report.rows == rep.rows


def test_feasibility_zero_margins():
    assert mk.check_feasibility(_targets([0, 0], [0, 0]), np.zeros((2, 2), bool)).feasible


def test_feasibility_two_node_corner():
    # node 0 must send 2 but node 1 can receive only 1
    rep = mk.check_feasibility(_targets([2, 0], [1, 1]), mk.full_mask(2))
    assert not rep.feasible
    assert rep.rows == [0] and rep.cols == [1]
    assert rep.deficit == pytest.approx(1.0)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 4))
def test_feasibility_matches_lp(seed, n):
    rng = np.random.default_rng(seed)
    mask = (rng.random((n, n)) < 0.5) & ~np.eye(n, dtype=bool)
    row = rng.integers(0, 4, n).astype(float)
    col = rng.multinomial(int(row.sum()), np.ones(n) / n).astype(float)
    rep = mk.check_feasibility(_targets(row, col), mask)
    assert rep.feasible == lp_feasible(row, col, mask)
    if not rep.feasible:
        assert rep.deficit > 0


def test_block_mask_example():
    counts = np.zeros((3, 3), int)
    counts[0, 1], counts[0, 2], counts[2, 0] = 5, 4, 3
    counts[1, 0], counts[1, 2] = 1, 1
    blocks = np.array([0, 0, 1])
    m = mk.block_degree_mask(_stats(counts), blocks, np.array([[1, 1], [1, 0]]))
    assert_array_equal(np.argwhere(m), [[0, 1], [0, 2], [2, 0]])


def test_block_mask_extremes():
    stats = _stats(np.array([[0, 1, 0], [0, 0, 2], [1, 0, 0]]))
    blocks = np.array([0, 0, 1])
    assert not mk.block_degree_mask(stats, blocks, np.zeros((2, 2), int)).any()
    cap = mk.block_capacity(blocks)
    assert_array_equal(cap, [[2, 2], [2, 0]])
    with pytest.warns(mk.FallbackWarning):
        m = mk.block_degree_mask(stats, blocks, cap)
    assert_array_equal(m, mk.full_mask(3))
    with pytest.raises(ValueError, match="capacity"):
        mk.block_degree_mask(stats, blocks, cap + 1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_block_mask_is_top_k(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 6))
    blocks = rng.integers(0, 2, n)
    blocks[0], blocks[-1] = 0, 1
    counts = rng.integers(0, 5, (n, n)) * (rng.random((n, n)) < 0.6)
    np.fill_diagonal(counts, 0)
    stats = _stats(counts)
    cap = mk.block_capacity(blocks)
    quotas = np.array([[rng.integers(0, c + 1) for c in r] for r in cap])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", mk.FallbackWarning)
        m = mk.block_degree_mask(stats, blocks, quotas)
    for a, b in itertools.product(range(2), repeat=2):
        sel = m[np.ix_(blocks == a, blocks == b)]
        assert sel.sum() == quotas[a, b]
        dyads = [(i, j) for i in np.nonzero(blocks == a)[0] for j in np.nonzero(blocks == b)[0]
                 if i != j]
        chosen = sum(counts[i, j] for i, j in dyads if m[i, j])
        assert chosen == best_subset_score(counts, dyads, quotas[a, b])


def test_block_quotas_from_data_reproduce_observed_support():
    rng = np.random.default_rng(2)
    counts = rng.integers(0, 3, (8, 8)) * (rng.random((8, 8)) < 0.4)
    np.fill_diagonal(counts, 0)
    blocks = np.array([0, 0, 0, 1, 1, 2, 2, 2])
    stats = _stats(counts)
    m = mk.block_degree_mask(stats, blocks)
    assert_array_equal(m, counts > 0)


def test_sender_partition_weights():
    counts = np.array([[0, 3, 1], [0, 0, 0], [1, 0, 0]])
    mask = mk.full_mask(3)
    mask[1, 0] = False
    with pytest.warns(mk.FallbackWarning):
        w = mk.sender_partition_weights(_stats(counts), mask)
    assert_allclose(w.probabilities[0], [0, 0.75, 0.25])
    assert_allclose(w.probabilities[1], [0, 0, 1.0])
    assert w.info["uniform_rows"] == [1]
    with pytest.warns(mk.FallbackWarning):
        w2 = mk.sender_partition_weights(_stats(counts), mk.full_mask(3))
    assert_allclose(w2.probabilities[1], [0.5, 0, 0.5])
    bad = mk.full_mask(3)
    bad[0] = False
    with pytest.raises(mk.InfeasibleError):
        mk.sender_partition_weights(_stats(counts), bad)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_sender_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    n = 6
    counts = rng.integers(0, 4, (n, n))
    np.fill_diagonal(counts, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", mk.FallbackWarning)
        w = mk.sender_partition_weights(_stats(counts), mk.full_mask(n))
    assert_allclose(w.probabilities.sum(1), 1.0)


def test_mark_loglik_uniform_and_unsupported():
    n = 3
    mask = mk.full_mask(n)
    w = mk.MarkWeights(mask / mask.sum(), np.zeros((n, n), int), mask)
    log = EventLog([0.1, 0.2, 0.3], [0, 1, 2], [1, 2, 0], n, 1.0)
    assert mk.mark_log_likelihood(w, log).value == pytest.approx(3 * np.log(1 / 6))
    w_ep = mk.edge_poisson_weights(_stats([[0, 1, 0], [0, 0, 1], [0, 0, 0]]))
    res = mk.mark_log_likelihood(w_ep, log)
    assert res.value == -np.inf
    assert res.unsupported == [(2, 0)]
    assert res.supported_value == pytest.approx(2 * np.log(0.5))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_edge_poisson_maximizes_mark_likelihood(seed):
    rng = np.random.default_rng(seed)
    n = 4
    k = 30
    src = rng.integers(0, n, k)
    dst = (src + rng.integers(1, n, k)) % n
    log = EventLog(np.sort(rng.random(k)), src, dst, n, 1.0)
    best = mk.mark_log_likelihood(mk.edge_poisson_weights(sufficient_stats(log)), log).value
    mask = mk.full_mask(n)
    for _ in range(50):
        p = rng.dirichlet(np.ones(n * n - n))
        w = np.zeros((n, n))
        w[mask] = p
        alt = mk.MarkWeights(w, np.zeros((n, n), int), mask)
        assert mk.mark_log_likelihood(alt, log).value <= best + 1e-12


def test_weights_persistence(tmp_path):
    blocks = np.array([0, 0, 1, 1])
    mask, row, col = random_instance(np.random.default_rng(4), 4, 0.8)
    w = mk.ipfp_strength_weights(_targets(row, col), mask)
    w = mk.MarkWeights(w.weights, mk.block_sender_part(blocks), w.mask, partition="block-sender",
                       info=w.info)
    mk.save_weights(tmp_path, w, {"mask": "random"})
    back = mk.load_weights(tmp_path)
    assert_array_equal(back.weights, w.weights)
    assert_array_equal(back.part, w.part)
    assert_array_equal(back.mask, w.mask)
    side = json.loads((tmp_path / "weights.json").read_text())
    assert side["mask_provenance"] == {"mask": "random"}
    assert "kl_history" not in side["report"]


def test_blocks_io(tmp_path):
    p = tmp_path / "b.csv"
    mk.write_blocks(p, [3, 3, 7], ("a", "b", "c"))
    assert_array_equal(mk.load_blocks(p, ("a", "b", "c")), [0, 0, 1])
    with pytest.raises(DataError):
        mk.load_blocks(p, ("a", "z"))
