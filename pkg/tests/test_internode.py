import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgesched.core import rng_stream
from edgesched.internode import (
    DEFAULT_LATENCIES,
    CapacityModel,
    allocate,
    fit_capacity,
    integer_capacities,
    load_profiles,
    node_share_from_result,
    profile_capacity,
    save_profiles,
)


def _probe(cap_fn):
    return lambda q, L: 0.0 if q <= cap_fn(L) else 0.5


def test_profile_against_linear_probe():
    pts = profile_capacity(_probe(lambda L: 20 * L))
    assert len(pts) == 12
    e5 = pts[0][1]
    assert abs(e5 - 100) <= 10
    for L, e in pts:
        assert abs(e - 20 * L) <= e5


def test_zero_capacity_node(caplog):
    pts = profile_capacity(_probe(lambda L: -1))
    assert all(e == 0 for _, e in pts)
    assert "no load" in caplog.text


@given(st.floats(0.5, 40), st.floats(-50, 50), st.floats(0.0, 0.3))
def test_profile_monotone(slope, offset, curve):
    pts = profile_capacity(_probe(lambda L: slope * L + offset + curve * L * L))
    es = [e for _, e in pts]
    assert es == sorted(es)


def test_fit_examples():
    m = fit_capacity([(5, 100), (10, 200), (15, 300)])
    assert m.k_n == pytest.approx(20) and m.b_n == pytest.approx(0, abs=1e-9) and m.rmse < 1e-9
    rng = rng_stream(0, "fit")
    L = np.array(DEFAULT_LATENCIES, float)
    m = fit_capacity(list(zip(L, 20 * L + 7 + rng.uniform(-1, 1, len(L)))))
    assert 19 <= m.k_n <= 21 and 0 <= m.b_n <= 14
    m = fit_capacity([(5, 30), (20, 90)])
    assert m.capacity(5) == pytest.approx(30) and m.capacity(20) == pytest.approx(90)
    with pytest.raises(ValueError):
        fit_capacity([(5, 1), (5, 2)])


def test_support_within_residual():
    rng = rng_stream(3, "fit")
    L = np.array(DEFAULT_LATENCIES, float)
    m = fit_capacity(list(zip(L, 12 * L + rng.normal(0, 3, len(L)))))
    resid = [abs(m.k_n * a + m.b_n - e) for a, e in m.support]
    assert np.sqrt(np.mean(np.square(resid))) == pytest.approx(m.rmse)


def test_capacity_clamped_at_zero():
    assert CapacityModel(0, 10.0, -100.0, ((5.0, 0.0),)).capacity(2.0) == 0.0


def test_allocate_scaling_example():
    r = allocate(60, np.full((60, 2), 0.5), [10, 30], rng_stream(0, "a"))
    assert r.scaled
    assert np.allclose(r.adjusted_capacities, [15, 45])
    assert r.counts.sum() == 60 and np.all(r.counts <= [15, 45])


def test_allocate_degenerate_example():
    r = allocate(4, np.tile([1.0, 0.0], (4, 1)), [1, 5], rng_stream(0, "a"))
    assert r.assignments[0] == 0
    assert list(r.counts) == [1, 3] and r.reassigned == 3 and not r.scaled


def test_allocate_empty_batch():
    r = allocate(0, np.zeros((0, 3)), [1, 2, 3], rng_stream(0, "a"))
    assert r.assignments.size == 0 and list(r.proportions) == [0, 0, 0]
    assert list(node_share_from_result(r)) == [0, 0, 0]


def test_allocate_input_errors():
    with pytest.raises(ValueError):
        allocate(2, np.full((3, 2), 0.5), [5, 5], rng_stream(0, "a"))
    with pytest.raises(ValueError):
        allocate(2, np.full((2, 2), 0.5), [5, -1], rng_stream(0, "a"))
    with pytest.raises(ValueError):
        allocate(2, np.full((2, 2), 0.5), [0, 0], rng_stream(0, "a"))


@st.composite
def _alloc_inputs(draw):
    n = draw(st.integers(1, 5))
    caps = np.array(draw(st.lists(st.floats(0, 40), min_size=n, max_size=n)))
    if caps.sum() == 0:
        caps[0] = 1.0
    b = draw(st.integers(1, 120))
    seed = draw(st.integers(0, 10_000))
    p = rng_stream(seed, "p").dirichlet(np.full(n, 0.5), size=b)
    return b, p, caps, seed


@given(_alloc_inputs())
def test_allocate_invariants(args):
    b, p, caps, seed = args
    r = allocate(b, p, caps, rng_stream(seed, "a"))
    assert r.counts.sum() == b and np.all(r.assignments >= 0)
    assert np.all(r.counts <= np.ceil(r.adjusted_capacities * (1 + 1e-12)) + r.overflow)
    if b <= caps.sum():
        # a node is full once q >= C, so fractional capacities round up
        assert not r.scaled and np.all(r.counts <= np.ceil(caps))
    else:
        assert r.scaled and r.adjusted_capacities.sum() == pytest.approx(b)
    again = allocate(b, p, caps, rng_stream(seed, "a"))
    assert np.array_equal(r.assignments, again.assignments)


@given(st.lists(st.integers(0, 30), min_size=1, max_size=5), st.integers(0, 10_000))
def test_integer_capacities_respected(caps, seed):
    caps = np.array(caps, float)
    if caps.sum() == 0:
        caps[0] = 1
    b = int(caps.sum())
    p = rng_stream(seed, "p").dirichlet(np.ones(len(caps)), size=b)
    r = allocate(b, p, caps, rng_stream(seed, "a"))
    assert np.max(r.counts - caps) <= 0 and r.overflow == 0


def test_fidelity_under_slack():
    rng = rng_stream(7, "fid")
    n = 100_000
    p = rng.dirichlet(np.ones(4), size=n)
    r = allocate(n, p, [n] * 4, rng_stream(7, "alloc"))
    tv = 0.5 * np.abs(r.proportions - p.mean(axis=0)).sum()
    assert tv <= 0.01 and r.reassigned == 0


def test_capacity_check_off_keeps_first_samples():
    r = allocate(10, np.tile([1.0, 0.0], (10, 1)), [1, 1], rng_stream(0, "a"), capacity_check=False)
    assert list(r.counts) == [10, 0]


def test_node_share_examples():
    class R:
        counts = np.array([2, 3, 5])
    assert np.allclose(node_share_from_result(R), [0.2, 0.3, 0.5])
    R.counts = np.array([10, 0])
    assert np.allclose(node_share_from_result(R), [1, 0])


def test_profiles_round_trip(tmp_path):
    ms = [fit_capacity([(5, 100), (10, 210), (15, 290)], node=0), fit_capacity([(5, 0), (10, 50)], node=1)]
    save_profiles(tmp_path / "p.csv", ms)
    assert load_profiles(tmp_path / "p.csv") == ms
    assert list(integer_capacities(ms, 10.0)) == [int(ms[0].capacity(10)), 50]
