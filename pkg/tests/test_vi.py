import numpy as np
import pytest

from conftest import MODELS, decoupled
from oracles import bisect_level, single_user_waterfill
from fadegame.channel import ChannelModel
from fadegame.presets import example1, example2, example3
from fadegame.vi import (SolveParams, ViProblem, assemble_affine, classify_monotonicity, phase1,
                         phase1_study, phase2, residual, solve_ne, t_map, verify_ne)

VARIANTS = ("full", "incident", "direct")
TIGHT = SolveParams(eps=1e-9, max_picard=2000, restart_cap=2)


def _tight(model, variant):
    return solve_ne(model, variant, TIGHT)


def test_affine_zero_cross():
    m = decoupled(3)
    aff = assemble_affine(m)
    np.testing.assert_array_equal(aff.blocks, 0.0)
    pr = ViProblem(m, "full")
    p = pr.random_start(np.random.default_rng(0))
    vals = pr.split(p)
    g = m.states.gains
    expect = pr.join([vals[i] + 1.0 / g[:, i, i] for i in range(3)])
    np.testing.assert_allclose(pr.F(p), expect, atol=1e-12)


def test_affine_single_state_offdiagonals():
    m = ChannelModel.symmetric(3, [1.0], [0.2], 1.0)
    aff = assemble_affine(m)
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_allclose(aff.blocks[0][off], 0.2)
    np.testing.assert_array_equal(np.diag(aff.blocks[0]), 0.0)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_affine_matches_per_state_formula(name):
    m = MODELS[name](5.0)
    pr = ViProblem(m, "full")
    p = pr.random_start(np.random.default_rng(1))
    np.testing.assert_allclose(pr.F(p), pr.F_direct(p), atol=1e-12)
    # and the dense block-diagonal form, state-major
    aff = assemble_affine(m)
    sm = np.stack(pr.split(p), axis=-1)
    dense = (np.eye(sm.size) + aff.dense()) @ sm.ravel() + aff.offset.ravel()
    np.testing.assert_allclose(dense.reshape(sm.shape).T.ravel(), pr.F(p), atol=1e-12)


def test_classify_zero_cross():
    lo, tag = classify_monotonicity(decoupled(3))
    assert lo == pytest.approx(1.0)
    assert tag == "PositiveSemidefinite"


@pytest.mark.parametrize("name", sorted(MODELS))
def test_classify_matches_dense_oracle(name):
    m = MODELS[name]()
    aff = assemble_affine(m)
    h = np.eye(aff.dense().shape[0]) + aff.dense()
    lo = np.linalg.eigvalsh(0.5 * (h + h.T)).min()
    got, tag = classify_monotonicity(m)
    assert got == pytest.approx(lo, abs=1e-12)
    assert tag == ("PositiveSemidefinite" if lo >= 0 else "Indefinite")


def test_classify_strong_cross_indefinite():
    # example 2 has cross gains up to 0.5 against direct 0.3
    assert classify_monotonicity(example2())[1] == "Indefinite"


def test_classify_weak_cross():
    m = ChannelModel.symmetric(2, [1.0], [0.1], 1.0)
    lo, tag = classify_monotonicity(m)
    assert lo == pytest.approx(np.linalg.eigvalsh([[1, 0.1], [0.1, 1]]).min())
    assert tag == "PositiveSemidefinite"


@pytest.mark.parametrize("variant", VARIANTS)
def test_fixed_point_maps_to_itself(variant):
    rep = _tight(example3(5.0), variant)
    pr = ViProblem(example3(5.0), variant)
    np.testing.assert_allclose(t_map(pr, rep.profile).as_vector(), rep.profile.as_vector(),
                               atol=1e-9)


def test_picard_on_decoupled_model_water_fills():
    m = decoupled(2, 3.0)
    pr = ViProblem(m, "full")
    p = phase1(pr, pr.random_start(np.random.default_rng(2)), 300)
    probs = m.states.prob
    for i, v in enumerate(pr.split(p)):
        ref = single_user_waterfill(m.states.gains[:, i, i], probs, 3.0)
        np.testing.assert_allclose(v, ref, atol=1e-9)


@pytest.mark.parametrize("variant", VARIANTS)
def test_one_picard_step_reduces_residual(variant):
    pr = ViProblem(example1(), variant)
    wins = 0
    for s in range(100):
        p = pr.random_start(np.random.default_rng(s))
        wins += pr.residual(pr.T(p)) < pr.residual(p)
    assert wins >= 95


@pytest.mark.parametrize("variant", VARIANTS)
def test_residual_identity(variant):
    m = example1(5.0)
    pr = ViProblem(m, variant)
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = pr.random_start(rng)
        terms = pr.residual_terms(p)
        g = residual(pr, pr.profile(p))
        assert np.sum(terms ** 2) == pytest.approx(g ** 2, abs=1e-8)
        # independent per-term recomputation with a bisected multiplier
        steps = pr.split(pr.taus.repeat(pr.sizes) * pr.F(p))
        vals = pr.split(p)
        indep = 0.0
        for i in range(m.n_users):
            lam = bisect_level(vals[i] - steps[i], pr.indexer.marginals[i], m.budgets[i])
            indep += np.sum(np.minimum(vals[i], steps[i] + lam) ** 2)
        assert indep == pytest.approx(g ** 2, rel=1e-8, abs=1e-10)


def test_phase1_zero_iterations():
    pr = ViProblem(example1(), "incident")
    p = pr.random_start(np.random.default_rng(4))
    np.testing.assert_array_equal(phase1(pr, p, 0), p)


def test_phase1_direct_reaches_machine_precision():
    _, after = phase1_study(example1(0.0), "direct", n_starts=20)
    assert after <= 1e-8


def test_phase1_incident_drops_residual():
    before, after = phase1_study(example1(0.0), "incident", n_starts=20)
    assert after <= 1e-3 < before


@pytest.mark.parametrize("variant", ["incident", "direct"])
def test_better_response_monotonicity(variant):
    m = example2(10.0)
    pr = ViProblem(m, variant)
    for s in range(5):
        p = pr.random_start(np.random.default_rng(s))
        for _ in range(20):
            vals, upd = pr.split(p), pr.split(pr.T(p))
            for i, tab in enumerate(pr.tables):
                alt = list(vals)
                alt[i] = upd[i]
                assert float(tab.rate(alt)) >= float(tab.rate(vals)) - 1e-10
            p = pr.T(p)


def test_phase2_at_ne_returns_immediately():
    m = example3(0.0)
    rep = _tight(m, "full")
    res = phase2(ViProblem(m, "full"), rep.profile, SolveParams())
    assert res.converged and res.iterations == 0


def test_phase2_descent_does_not_increase_objective():
    m = example1(20.0)
    pr = ViProblem(m, "full")
    for s in range(5):
        p = pr.random_start(np.random.default_rng(s))
        res = phase2(pr, p, SolveParams(max_descent=1))
        assert pr.objective(res.vec) <= pr.objective(p) + 1e-12


def test_example1_high_snr_converges():
    rep = solve_ne(example1(20.0), "full")
    assert rep.converged and rep.residual < 1e-3


def test_decoupled_converges_in_phase1():
    m = decoupled(2, 3.0)
    rep = solve_ne(m, "full", SolveParams(eps=1e-8, max_picard=500))
    assert rep.converged and rep.descent_iterations == 0
    gains, ok = verify_ne(m, "full", rep.profile, 1e-9)
    assert ok


@pytest.mark.parametrize("snr", [0.0, 1.0, 5.0, 10.0, 15.0, 20.0])
@pytest.mark.parametrize("variant", VARIANTS)
def test_example1_grid(variant, snr):
    rep = solve_ne(example1(snr), variant)
    assert rep.residual < 1e-3
    assert verify_ne(example1(snr), variant, rep.profile, 1e-3)[1]


@pytest.mark.parametrize("variant", VARIANTS)
def test_example3_converges(variant):
    rep = solve_ne(example3(10.0), variant)
    assert rep.residual < 1e-3 and rep.converged


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("variant", VARIANTS)
def test_fixed_point_equivalence(name, variant):
    m = MODELS[name](5.0)
    rep = _tight(m, variant)
    pr = ViProblem(m, variant)
    if rep.residual <= 1e-6:
        assert verify_ne(m, variant, rep.profile, 1e-4)[1]
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = pr.random_start(rng)
        prof = pr.profile(p)
        assert residual(pr, prof) > 1e-6
        assert not verify_ne(m, variant, prof, 1e-4)[1]


@pytest.mark.parametrize("variant", VARIANTS)
def test_tau_invariance(variant):
    m = example1(5.0)
    rep = _tight(m, variant)
    half = ViProblem(m, variant, tau=0.05 if variant == "full" else 0.25)
    assert residual(half, rep.profile) < 1e-6


def test_ne_support_structure():
    m = example1(10.0)
    rep = _tight(m, "full")
    g = m.states.gains
    vals = rep.profile.values
    for i in range(3):
        inter = 1.0 + sum(g[:, i, j] * vals[j] for j in range(3) if j != i)
        ratio = inter / g[:, i, i]
        on = vals[i] > 1e-12
        level = vals[i][on] + ratio[on]
        # transmitting states share one water level, silent ones sit above it
        assert np.ptp(level) <= 1e-8
        assert np.all(ratio[~on] >= level[0] - 1e-8)


def test_perturbed_ne_detected():
    m = example1(5.0)
    rep = _tight(m, "incident")
    vals = [v.copy() for v in rep.profile.values]
    marg = rep.profile.indexer.marginals[0]
    s = int(np.argmax(vals[0]))
    bump = 0.1 * vals[0][s]
    vals[0][s] += bump
    rest = np.arange(vals[0].size) != s
    vals[0][rest] -= bump * marg[s] / marg[rest].sum()
    prof = rep.profile.__class__(m, rep.profile.indexer, vals)
    assert prof.expected_powers()[0] == pytest.approx(m.budgets[0])
    gains, ok = verify_ne(m, "incident", prof, 1e-12)
    assert gains[0] > 0 and not ok


def test_non_convergence_is_reported():
    p = SolveParams(max_picard=1, max_descent=1, restart_cap=1, eps=1e-12)
    rep = solve_ne(example2(10.0), "full", p)
    assert not rep.converged
    assert "NOT converged" in rep.summary()
    assert rep.restarts == 1


def test_params_validation_and_schedule():
    with pytest.raises(ValueError):
        SolveParams(eps=0)
    with pytest.raises(ValueError):
        SolveParams(restart_cap=0)
    p = SolveParams()
    assert [p.gamma(t) for t in (1, 10)] == [0.5, 0.5]
    assert p.gamma(11) == pytest.approx(0.5 / 1.5)
    assert p.gamma(21) == pytest.approx((1 / 3) / (4 / 3))


def test_report_csv():
    rep = solve_ne(example3(0.0), "direct")
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("variant,residual")
    assert len(lines) == 3
    assert rep.residual == pytest.approx(residual(ViProblem(example3(0.0), "direct"),
                                                  rep.profile))
