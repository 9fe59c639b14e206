import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import decoupled
from oracles import bisect_level, project_qp, sample_gains, single_user_waterfill
from fadegame.channel import build_indexer
from fadegame.policy import (PolicyProfile, PowerPolicy, ProjectionMode, best_response_full,
                             expected_power, kkt_project, project, random_feasible,
                             shift_project, water_fill, water_fill_level, water_level)
from fadegame.presets import example1, example3
from fadegame.rates import rate

vec = arrays(float, st.integers(1, 12), elements=st.floats(-5, 5))


def _weights(n, rng):
    w = rng.uniform(0.1, 1.0, n)
    return w / w.sum()


def test_expected_power_constant():
    ix = build_indexer(example1(), "incident")
    assert expected_power(PowerPolicy(0, "incident", np.full(8, 3.5)), ix) == pytest.approx(3.5)


def test_expected_power_direct_mean():
    ix = build_indexer(example1(), "direct")
    assert expected_power(PowerPolicy(1, "direct", [10.0, 30.0]), ix) == pytest.approx(20.0)


def test_expected_power_dimension_mismatch():
    ix = build_indexer(example1(), "direct")
    with pytest.raises(ValueError):
        expected_power(PowerPolicy(0, "direct", [1.0, 2.0, 3.0]), ix)


def test_expected_power_monte_carlo():
    m = example1()
    ix = build_indexer(m, "incident")
    rng = np.random.default_rng(0)
    pol = rng.uniform(0, 4, 8)
    _, idx = sample_gains(m, rng, 1_000_000)
    s = idx[:, 0, 0] * 4 + idx[:, 0, 1] * 2 + idx[:, 0, 2]
    draws = pol[s]
    se = draws.std() / np.sqrt(draws.size)
    assert abs(draws.mean() - expected_power(pol, ix)) < 3 * se


def test_equality_lift_example():
    v, lam = shift_project(np.array([-1.0, -1.0]), np.array([0.5, 0.5]), 2.0)
    np.testing.assert_allclose(v, [2, 2])
    assert lam == pytest.approx(-3)


def test_kkt_interior_unchanged():
    ix = build_indexer(example1(), "direct")
    out = project([1.0, 1.0], ix, 4.0, ProjectionMode.KKT)
    np.testing.assert_array_equal(out.values, [1, 1])


def test_project_rejects_nonfinite():
    ix = build_indexer(example1(), "direct")
    with pytest.raises(ValueError):
        project([np.nan, 1.0], ix, 1.0)


def test_kkt_matches_qp_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = rng.integers(1, 11)
        x = rng.uniform(-5, 5, n)
        w = _weights(n, rng)
        v, _ = kkt_project(x, w, 3.0)
        np.testing.assert_allclose(v, project_qp(x, w, 3.0), atol=1e-7)


def test_qp_oracle_random_dimensions():
    # dimension up to 20, arbitrary positive weights and budgets
    rng = np.random.default_rng(8)
    for _ in range(1000):
        n = rng.integers(1, 21)
        x = rng.uniform(-5, 5, n)
        w = rng.uniform(0.05, 2.0, n)
        b = rng.uniform(0.0, 5.0)
        v, _ = kkt_project(x, w, b)
        np.testing.assert_allclose(v, project_qp(x, w, b), atol=1e-7)


@given(vec, st.floats(0.01, 10), st.integers(0, 2**32 - 1))
def test_equality_level_matches_bisection(x, budget, seed):
    w = _weights(x.size, np.random.default_rng(seed))
    v, lam = shift_project(x, w, budget)
    assert abs(v @ w - budget) < 1e-10 * max(1, budget)
    assert lam == pytest.approx(bisect_level(x, w, budget), abs=1e-9)
    assert np.all(v >= 0)


@given(vec, st.floats(0.01, 10), st.integers(0, 2**32 - 1))
def test_kkt_variational_property(x, budget, seed):
    rng = np.random.default_rng(seed)
    w = _weights(x.size, rng)
    p, _ = kkt_project(x, w, budget)
    assert np.all(p >= 0) and p @ w <= budget + 1e-9
    for _ in range(100):
        q = rng.uniform(0, 1, x.size)
        q *= rng.uniform(0, budget) / (q @ w)
        assert (p - x) @ (q - p) >= -1e-8


@given(vec, st.floats(0.01, 10), st.integers(0, 2**32 - 1))
def test_idempotence(x, budget, seed):
    w = _weights(x.size, np.random.default_rng(seed))
    for fn in (shift_project, kkt_project):
        v, _ = fn(x, w, budget)
        np.testing.assert_allclose(fn(v, w, budget)[0], v, atol=1e-10)


@given(vec, st.floats(0.01, 10), st.floats(0.01, 5), st.integers(0, 2**32 - 1))
def test_water_level_increases_with_budget(f, budget, extra, seed):
    f = -np.abs(f) - 0.1
    w = _weights(f.size, np.random.default_rng(seed))
    _, lam1 = water_fill_level(f, w, budget)
    _, lam2 = water_fill_level(f, w, budget + extra)
    assert lam2 > lam1


@given(vec, st.floats(0.01, 10), st.integers(0, 2**32 - 1))
def test_water_fill_equals_shift_projection(f, budget, seed):
    f = -np.abs(f) - 0.1
    w = _weights(f.size, np.random.default_rng(seed))
    p, _ = water_fill_level(f, w, budget)
    np.testing.assert_allclose(p, shift_project(f, w, budget)[0], atol=1e-9)


def test_water_fill_single_state():
    p, lam = water_fill_level(np.array([-2.0]), np.array([1.0]), 5.0)
    assert p[0] == pytest.approx(5)
    assert lam == pytest.approx(7)


def test_water_fill_two_states():
    f = np.array([-1.0, -3.0])
    p, lam = water_fill_level(f, np.array([0.5, 0.5]), 1.0)
    # oracle: 0.5 max(0, lam - 1) + 0.5 max(0, lam - 3) = 1
    oracle = -bisect_level(f, [0.5, 0.5], 1.0)
    assert lam == pytest.approx(oracle, abs=1e-10)
    assert lam == pytest.approx(3.0)
    np.testing.assert_allclose(p, [2, 0], atol=1e-12)


def test_water_fill_flat_base():
    ix = build_indexer(example1(), "incident")
    pol = water_fill(np.full(8, -0.7), ix, 2.5)
    np.testing.assert_allclose(pol.values, 2.5)


def test_best_response_without_interference():
    m = example1()
    ix = build_indexer(m, "full")
    vals = [np.zeros(512), np.full(512, 1.0), np.zeros(512)]
    prof = PolicyProfile(m, ix, vals)
    br = best_response_full(prof, 1)
    g = m.states.gains[:, 1, 1]
    np.testing.assert_allclose(br.values, single_user_waterfill(g, m.states.prob, 1.0),
                               atol=1e-9)


def test_best_response_beats_random_alternatives():
    m = example3(5.0)
    ix = build_indexer(m, "full")
    prof = PolicyProfile.uniform(m, ix)
    br = best_response_full(prof, 0)
    assert expected_power(br, ix) == pytest.approx(m.budgets[0], abs=1e-9)
    best = rate(prof.replace(0, br.values), 0)
    rng = np.random.default_rng(3)
    for _ in range(50):
        alt = random_feasible(m, ix, rng).values[0]
        assert best >= rate(prof.replace(0, alt), 0) - 1e-12


def test_policy_csv_round_trip(rng):
    m = example3()
    ix = build_indexer(m, "incident")
    prof = random_feasible(m, ix, rng)
    back = PolicyProfile.from_csv(m, ix, prof.to_csv())
    np.testing.assert_array_equal(back.as_vector(), prof.as_vector())


def test_random_feasible_meets_budget(rng):
    m = decoupled(3, 4.0)
    for v in ("full", "incident", "direct"):
        prof = random_feasible(m, build_indexer(m, v), rng)
        assert prof.is_feasible()
        np.testing.assert_allclose(prof.expected_powers(), 4.0)


def test_water_level_batch():
    x = np.array([[1.0, 2.0], [-1.0, -1.0]])
    lam = water_level(x, [0.5, 0.5], np.array([1.0, 2.0]))
    np.testing.assert_allclose(lam, [0.5, -3.0])
