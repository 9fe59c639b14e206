import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import MODELS, decoupled
from oracles import brute_rate, central_diff, mc_incident_or_direct, single_user_waterfill
from fadegame.channel import ChannelModel, build_indexer
from fadegame.policy import PolicyProfile, PowerPolicy, random_feasible
from fadegame.presets import example1, example2
from fadegame.rates import (RateReport, grad_rate, log_base, lower_bound_maximizer,
                            lower_bound_rate, partial_rate, rate, rate_direct, rate_full,
                            rate_incident, rates)

VARIANTS = ("full", "incident", "direct")


def _profile(model, variant, seed):
    return random_feasible(model, build_indexer(model, variant), np.random.default_rng(seed))


@pytest.mark.parametrize("variant", VARIANTS)
def test_zero_powers_give_zero(variant):
    m = example1()
    ix = build_indexer(m, variant)
    prof = PolicyProfile(m, ix, [np.zeros(ix.size(i)) for i in range(3)])
    np.testing.assert_array_equal(rates(prof), 0.0)


def test_single_state_one_nat():
    m = ChannelModel(([1.0],), ([1.0],), (), (), budgets=1.0)
    prof = PolicyProfile(m, build_indexer(m, "full"), [[math.e - 1]])
    assert rate_full(prof, 0) == pytest.approx(1.0, abs=1e-15)


def test_log_base_two():
    m = ChannelModel(([1.0],), ([1.0],), (), (), budgets=1.0)
    prof = PolicyProfile(m, build_indexer(m, "full"), [[3.0]])
    with log_base(2):
        assert rate_full(prof, 0) == pytest.approx(2.0)
    assert rate_full(prof, 0) == pytest.approx(math.log(4))


def test_variant_mismatch():
    prof = _profile(example1(), "direct", 0)
    with pytest.raises(ValueError):
        rate_incident(prof, 0)
    with pytest.raises(ValueError):
        rate_full(prof, 0)


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("variant", VARIANTS)
def test_matches_joint_state_brute_force(name, variant):
    m = MODELS[name](5.0)
    prof = _profile(m, variant, 1)
    for i in range(m.n_users):
        assert rate(prof, i) == pytest.approx(brute_rate(m, variant, prof.values, i), abs=1e-12)


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("variant", ["incident", "direct"])
def test_lifting_equivalence(name, variant):
    m = MODELS[name](10.0)
    for seed in range(5):
        prof = _profile(m, variant, seed)
        np.testing.assert_allclose(rates(prof), rates(prof.lifted()), atol=1e-10)


@pytest.mark.parametrize("variant", ["incident", "direct"])
def test_monte_carlo_slot_simulation(variant):
    m = example1()
    prof = _profile(m, variant, 2)
    mean, se = mc_incident_or_direct(m, variant, prof.values, 0, np.random.default_rng(9),
                                     1_000_000)
    assert abs(mean - rate(prof, 0)) < 3 * se


def test_full_rate_monte_carlo_via_lifting():
    m = example1()
    inc = _profile(m, "incident", 4)
    full = inc.lifted()
    mean, se = mc_incident_or_direct(m, "incident", inc.values, 1, np.random.default_rng(10),
                                     1_000_000)
    assert abs(mean - rate_full(full, 1)) < 3 * se


@pytest.mark.parametrize("variant", ["incident", "direct"])
def test_degenerate_cross_reduces_to_single_user(variant):
    m = decoupled(2, 3.0)
    prof = _profile(m, variant, 5)
    lifted = prof.lifted()
    fn = rate_incident if variant == "incident" else rate_direct
    for i in range(2):
        ix = prof.indexer
        single = ix.marginals[i] @ np.log1p(ix.own_gain[i] * prof.values[i])
        assert fn(prof, i) == pytest.approx(single, abs=1e-12)
        assert fn(prof, i) == pytest.approx(rate_full(lifted, i), abs=1e-12)


def test_unit_derivative():
    m = ChannelModel(([1.0],), ([1.0],), (), (), budgets=1.0)
    prof = PolicyProfile(m, build_indexer(m, "full"), [[0.0]])
    np.testing.assert_allclose(grad_rate(prof, 0), [1.0])


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("variant", VARIANTS)
def test_gradient_finite_differences(name, variant):
    m = MODELS[name](5.0)
    prof = _profile(m, variant, 6)
    for i in range(m.n_users):
        g = grad_rate(prof, i)
        assert np.all(g > 0)

        def f(x, i=i):
            return rate(prof.replace(i, x), i)

        np.testing.assert_allclose(g, central_diff(f, prof.values[i], 1e-5), rtol=1e-5)


@pytest.mark.parametrize("variant", VARIANTS)
def test_cross_partials_finite_differences(variant):
    m = example2(5.0)
    prof = _profile(m, variant, 7)
    for j in range(3):
        for i in range(3):
            def f(x, i=i, j=j):
                return rate(prof.replace(i, x), j)

            num = central_diff(f, prof.values[i], 1e-5)
            np.testing.assert_allclose(partial_rate(prof, j, i), num, rtol=1e-5, atol=1e-11)


@given(st.sampled_from(sorted(MODELS)), st.sampled_from(VARIANTS), st.integers(0, 10**6))
def test_concave_in_own_policy(name, variant, seed):
    m = MODELS[name](10.0)
    prof = _profile(m, variant, seed)
    rng = np.random.default_rng(seed + 1)
    i = int(rng.integers(m.n_users))
    other = random_feasible(m, prof.indexer, rng).values[i]
    d = other - prof.values[i]
    h = 1e-3

    def r(t):
        return rate(prof.replace(i, prof.values[i] + t * d), i)

    for t in (0.2, 0.5, 0.8):
        assert r(t + h) - 2 * r(t) + r(t - h) <= 1e-8


@pytest.mark.parametrize("variant", ["incident", "direct"])
def test_jensen_dominance(variant):
    m = example2(10.0)
    ix = build_indexer(m, variant)
    rng = np.random.default_rng(11)
    for _ in range(100):
        prof = random_feasible(m, ix, rng)
        for i in range(3):
            lb = lower_bound_rate(prof.policy(i), m, ix)
            assert rate(prof, i) >= lb - 1e-9


def test_lower_bound_rejects_full():
    m = example1()
    ix = build_indexer(m, "full")
    with pytest.raises(ValueError):
        lower_bound_rate(PowerPolicy(0, "full", np.zeros(512)), m, ix)


@pytest.mark.parametrize("variant", ["incident", "direct"])
def test_lower_bound_zero_policy(variant):
    m = example1()
    ix = build_indexer(m, variant)
    assert lower_bound_rate(PowerPolicy(0, variant, np.zeros(ix.size(0))), m, ix) == 0.0


def test_lower_bound_single_user_when_others_silent():
    m = ChannelModel.symmetric(2, [0.3, 1.0], [0.2, 0.1], [2.0, 1e-12])
    ix = build_indexer(m, "direct")
    pol = lower_bound_maximizer(m, 0, ix)
    ref = single_user_waterfill([0.3, 1.0], [0.5, 0.5], 2.0)
    np.testing.assert_allclose(pol.values, ref, atol=1e-9)
    single = 0.5 * np.log1p(np.array([0.3, 1.0]) * pol.values).sum()
    assert lower_bound_rate(pol, m, ix) == pytest.approx(single, abs=1e-10)


def test_lower_bound_maximizer_beats_random():
    m = example2(10.0)
    ix = build_indexer(m, "direct")
    best = lower_bound_maximizer(m, 0, ix)
    assert best.values @ ix.marginals[0] == pytest.approx(m.budgets[0], abs=1e-9)
    top = lower_bound_rate(best, m, ix)
    rng = np.random.default_rng(12)
    for _ in range(100):
        alt = random_feasible(m, ix, rng).policy(0)
        assert top >= lower_bound_rate(alt, m, ix) - 1e-12


def test_incident_lower_bound_maximizer_budget():
    m = example2(10.0)
    ix = build_indexer(m, "incident")
    pol = lower_bound_maximizer(m, 2, ix)
    assert pol.values @ ix.marginals[2] == pytest.approx(m.budgets[2], abs=1e-9)


def test_rate_report():
    prof = _profile(example1(), "full", 3)
    rep = RateReport.of(prof)
    assert np.all(rep.rates >= 0)
    assert rep.sum_rate == pytest.approx(rep.rates.sum(), abs=1e-12)
    lines = rep.to_csv("G_A", 5.0).splitlines()
    assert lines[0] == "game,snr_db,user,rate,sum_rate"
    assert len(lines) == 4
