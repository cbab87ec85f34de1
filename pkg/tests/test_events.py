import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from metn.events import (DataError, EventLog, SelfLoopWarning, SplitSpec, interevent_stats,
                         load_events, split, sufficient_stats, write_events)


def _csv(tmp_path, text, name="ev.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_sorts_and_indexes(tmp_path):
    log = load_events(_csv(tmp_path, "0.5,a,b\n0.2,b,c\n0.9,a,c\n"))
    assert log.n_nodes == 3
    assert log.labels == ("a", "b", "c")
    assert list(log) == [(0.2, 1, 2), (0.5, 0, 1), (0.9, 0, 2)]
    assert log.horizon == 0.9


def test_load_with_header_and_numeric_labels(tmp_path):
    log = load_events(_csv(tmp_path, "t,src,dst\n1,10,2\n2,2,10\n3,9,10\n"))
    assert log.labels == ("2", "9", "10")


def test_empty_file_is_error(tmp_path):
    with pytest.raises(DataError):
        load_events(_csv(tmp_path, ""))
    with pytest.raises(DataError):
        load_events(_csv(tmp_path, "t,src,dst\n"))


def test_malformed_row_reports_line(tmp_path):
    with pytest.raises(DataError, match="line 3"):
        load_events(_csv(tmp_path, "0.1,a,b\n0.2,b,a\nzzz,a,b\n"))
    with pytest.raises(DataError, match="line 2"):
        load_events(_csv(tmp_path, "0.1,a,b\n0.2,b\n"))


def test_self_loop_policy(tmp_path):
    p = _csv(tmp_path, "0.1,a,b\n1.0,a,a\n1.5,b,a\n")
    with pytest.warns(SelfLoopWarning):
        log = load_events(p)
    assert log.K == 2
    assert log.meta["dropped_self_loops"] == 1
    with pytest.raises(DataError, match="self-loop"):
        load_events(p, self_loops="error")


def test_time_unit_rescaling(tmp_path):
    log = load_events(_csv(tmp_path, "100,a,b\n160,b,a\n220,a,b\n"), time_unit=60)
    assert_array_equal(log.times, [0.0, 1.0, 2.0])
    assert log.meta["time_unit"] == 60.0
    assert log.meta["t_offset"] == 100.0


def test_horizon_override(tmp_path):
    p = _csv(tmp_path, "0.1,a,b\n0.4,b,a\n")
    assert load_events(p, horizon=2.0).horizon == 2.0
    with pytest.raises(DataError):
        load_events(p, horizon=0.2)


def test_eventlog_validation():
    with pytest.raises(DataError):
        EventLog([0.2, 0.1], [0, 1], [1, 0], 2, 1.0)
    with pytest.raises(DataError):
        EventLog([0.1], [0], [0], 2, 1.0)
    with pytest.raises(DataError):
        EventLog([0.1], [0], [2], 2, 1.0)
    with pytest.raises(DataError):
        EventLog([1.5], [0], [1], 2, 1.0)
    log = EventLog([0.1], [0], [1], 2, 1.0)
    with pytest.raises(ValueError):
        log.times[0] = 3.0


def test_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    t = np.sort(rng.random(200) * 37.0)
    s = rng.integers(0, 6, 200)
    d = (s + rng.integers(1, 6, 200)) % 6
    labels = ("n0", "n1", "n2", "n3", "n4", "n5")
    log = EventLog(t, s, d, 6, float(t[-1]), labels)
    p = tmp_path / "rt.csv"
    write_events(log, p)
    back = load_events(p)
    assert_array_equal(back.times, log.times)
    assert back.labels == labels
    assert_array_equal(back.src, log.src)
    assert_array_equal(back.dst, log.dst)
    p2 = tmp_path / "rt2.csv"
    write_events(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_ties_keep_input_order(tmp_path):
    log = load_events(_csv(tmp_path, "1,a,b\n0,c,a\n1,b,c\n1,c,b\n"))
    assert [(s, d) for _, s, d in log][1:] == [(0, 1), (1, 2), (2, 1)]


def _log(k, n=5, seed=0, T=10.0):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.random(k) * T)
    s = rng.integers(0, n, k)
    d = (s + rng.integers(1, n, k)) % n
    return EventLog(t, s, d, n, T)


def test_split_by_count():
    log = _log(4000, seed=1, T=100.0)
    train, test = split(log, SplitSpec("by_count", 3000))
    assert (train.K, test.K) == (3000, 1000)
    assert train.horizon == log.times[3000]
    assert test.horizon == pytest.approx(log.horizon - log.times[3000])
    assert test.times[0] == 0.0
    assert train.labels == test.labels == log.labels


def test_split_small_and_errors():
    log = EventLog([0.2, 0.7], [0, 1], [1, 0], 2, 1.0)
    train, test = split(log, SplitSpec("by_count", 1))
    assert (train.K, test.K) == (1, 1)
    with pytest.raises(DataError):
        split(log, SplitSpec("by_time", 1.0))
    with pytest.raises(DataError):
        split(log, SplitSpec("by_count", 2))
    with pytest.raises(DataError):
        split(log, SplitSpec("by_count", 0))
    with pytest.raises(ValueError):
        split(log, SplitSpec("by_other", 1))
    with pytest.raises(DataError):
        split(log, SplitSpec("by_time", 0.1))  # nothing to train on


def test_split_by_time_may_leave_test_empty():
    log = EventLog([0.2, 0.7], [0, 1], [1, 0], 2, 1.0)
    train, test = split(log, SplitSpec("by_time", 0.9))
    assert (train.K, test.K) == (2, 0)
    assert train.horizon == 0.9 and test.horizon == pytest.approx(0.1)


@settings(max_examples=50, deadline=None)
@given(k=st.integers(2, 300), seed=st.integers(0, 10**6), frac=st.floats(0.01, 0.99))
def test_split_conservation(k, seed, frac):
    log = _log(k, seed=seed)
    b = min(max(1, int(frac * k)), k - 1)
    train, test = split(log, SplitSpec("by_count", b))
    assert train.K + test.K == log.K
    total = sufficient_stats(train).counts + sufficient_stats(test).counts
    assert_array_equal(total, sufficient_stats(log).counts)
    tau = float(frac * log.horizon)
    if 0 < tau < log.horizon and log.times[0] < tau <= log.times[-1]:
        tr, te = split(log, SplitSpec("by_time", tau))
        assert tr.K + te.K == log.K
        assert np.all(tr.times < tau)


def test_sufficient_stats_example():
    log = EventLog([0.1, 0.2, 0.3], [0, 0, 1], [1, 1, 0], 2, 1.0)
    st_ = sufficient_stats(log)
    assert st_.counts[0, 1] == 2 and st_.counts[1, 0] == 1
    assert_array_equal(st_.out_strength, [2, 1])
    assert st_.total == 3 and st_.unique_edges == 2


def test_sufficient_stats_empty():
    st_ = sufficient_stats(EventLog([], [], [], 3, 1.0))
    assert st_.total == 0 and st_.unique_edges == 0
    assert not st_.counts.any() and not st_.in_strength.any()


def test_interevent_stats():
    assert interevent_stats(np.array([0.0, 1, 2, 3])) == (1.0, 0.0, 3)
    g = interevent_stats(np.array([0.0, 1, 3]))
    assert g.mean == 1.5 and g.variance == 0.5 and g.count == 2
    with pytest.raises(DataError):
        interevent_stats(np.array([1.0]))


@settings(max_examples=50, deadline=None)
@given(k=st.integers(2, 200), seed=st.integers(0, 10**6))
def test_gap_mean_equals_inverse_poisson_rate(k, seed):
    log = _log(k, seed=seed)
    lam = (k - 1) / (log.times[-1] - log.times[0])
    if np.isfinite(lam):
        assert interevent_stats(log).mean == pytest.approx(1 / lam, rel=1e-12)


def test_reindex_to_larger_universe():
    log = EventLog([0.1, 0.2], [0, 1], [1, 0], 2, 1.0, ("b", "c"))
    big = log.reindex(("a", "b", "c"))
    assert_array_equal(big.src, [1, 2])
    with pytest.raises(DataError):
        log.reindex(("a", "b"))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert big.with_horizon(2.0).horizon == 2.0
