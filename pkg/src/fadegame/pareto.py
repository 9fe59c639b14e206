"""Pareto points by weighted-sum maximization and Nash bargaining.

Both are found with a distributed augmented-Lagrangian ascent: an outer
loop moves the budget multipliers, an inner loop lets the single user with
the largest gain in the Lagrangian take a gradient step.  The penalty enters
with a minus sign so that the Lagrangian is concave in the constraint gap,
which is what a maximization needs.

The inner ascent works in budget-normalized powers ``x_i = P_i / Pbar_i``
with the inner product weighted by the info-state marginals, so one step
size serves every SNR and every information structure.  The multiplier and
penalty terms are written in the same normalized gap
``(Pbar_i - E P_i) / Pbar_i``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, Variant, build_indexer
from .policy import PolicyProfile, kkt_project, random_feasible
from .rates import rate_tables, rates

log = logging.getLogger(__name__)

WEIGHTED_SUM = "weighted_sum"
NASH_PRODUCT = "nash_product"
# below this rate gain the log of the Nash product is continued linearly
LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class SocialObjective:
    """Weighted sum of rates or Nash product of rate gains over ``d``."""

    kind: str
    variant: Variant
    weights: np.ndarray | None = None
    disagreement: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.kind == WEIGHTED_SUM:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or np.any(~(w > 0)):
                raise ValueError("weights must be strictly positive")
            object.__setattr__(self, "weights", w)
        elif self.kind == NASH_PRODUCT:
            d = np.asarray(self.disagreement, dtype=float)
            if d.ndim != 1 or np.any(~(d >= 0)):
                raise ValueError("disagreement point must be nonnegative")
            object.__setattr__(self, "disagreement", d)
        else:
            raise ValueError(f"unknown objective kind {self.kind!r}")

    @classmethod
    def weighted_sum(cls, weights, variant) -> "SocialObjective":
        return cls(WEIGHTED_SUM, variant, weights=weights)

    @classmethod
    def nash_product(cls, disagreement, variant) -> "SocialObjective":
        return cls(NASH_PRODUCT, variant, disagreement=disagreement)

    @property
    def n_users(self) -> int:
        return (self.weights if self.kind == WEIGHTED_SUM else self.disagreement).size

    def value(self, r) -> float:
        r = np.asarray(r, dtype=float)
        if self.kind == WEIGHTED_SUM:
            return float(self.weights @ r)
        gap = r - self.disagreement
        if np.any(gap < 0):
            return -np.inf
        return float(np.prod(gap))

    def log_value(self, r) -> float:
        """Ascent objective: the weighted sum, or ``sum log(r_i - d_i)``."""
        r = np.asarray(r, dtype=float)
        if self.kind == WEIGHTED_SUM:
            return float(self.weights @ r)
        gap = r - self.disagreement
        if np.any(gap <= 0):
            return -np.inf
        return float(np.log(gap).sum())

    def merit(self, r) -> float:
        """:meth:`log_value` continued linearly below ``LOG_FLOOR``.

        Finite and concave everywhere, so the ascent can start from points
        where some user is at or below its disagreement rate.
        """
        r = np.asarray(r, dtype=float)
        if self.kind == WEIGHTED_SUM:
            return float(self.weights @ r)
        gap = r - self.disagreement
        k = LOG_FLOOR
        safe = np.maximum(gap, k)
        return float(np.where(gap > k, np.log(safe), np.log(k) + (gap - k) / k).sum())

    def coefficients(self, r) -> np.ndarray:
        """Derivative of :meth:`merit` with respect to each rate."""
        if self.kind == WEIGHTED_SUM:
            return self.weights
        return 1.0 / np.maximum(np.asarray(r, dtype=float) - self.disagreement, LOG_FLOOR)


@dataclass(frozen=True)
class AugLagParams:
    c: float = 1.0
    alpha: float = 0.25
    delta: float = 0.1
    eps: float = 1e-4
    constraint_tol: float = 1e-3
    max_outer: int = 500
    max_rounds: int = 5000
    min_step: float = 1e-10
    max_growth: float = 16.0
    patience: int = 150
    c_growth: float = 1.5
    c_max: float = 1e4

    def __post_init__(self):
        for name in ("c", "alpha", "delta", "eps", "constraint_tol", "min_step", "c_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1 or self.max_rounds < 1:
            raise ValueError("iteration limits must be positive")
        if self.c_growth < 1:
            raise ValueError("c_growth must be at least 1")


def _check(profile: PolicyProfile, objective: SocialObjective):
    if profile.variant is not objective.variant:
        raise ValueError("objective variant does not match the profile")
    if objective.n_users != profile.n_users:
        raise ValueError("objective has the wrong number of users")


def social_value(profile: PolicyProfile, objective: SocialObjective) -> float:
    """``sum w_i r_i`` or ``prod (r_i - d_i)``; ``-inf`` when some ``r_i < d_i``."""
    _check(profile, objective)
    return objective.value(rates(profile))


def _gaps(profile: PolicyProfile, scale) -> np.ndarray:
    return (profile.model.budgets - profile.expected_powers()) / scale


def aug_lagrangian(profile: PolicyProfile, multipliers, params: AugLagParams,
                   objective: SocialObjective, scale=None, log_domain: bool = False) -> float:
    """``obj + sum lam_i gap_i - c sum gap_i^2`` with ``gap_i = Pbar_i - E P_i``.

    ``scale`` divides each gap (default 1, raw watts).  With ``log_domain``
    the Nash product is replaced by the sum of its logs (see
    :meth:`SocialObjective.merit`).
    """
    _check(profile, objective)
    scale = np.ones(profile.n_users) if scale is None else np.asarray(scale, dtype=float)
    r = rates(profile)
    obj = objective.merit(r) if log_domain else objective.value(r)
    gap = _gaps(profile, scale)
    lam = np.asarray(multipliers, dtype=float)
    return float(obj + lam @ gap - params.c * gap @ gap)


def aug_lagrangian_grads(profile: PolicyProfile, multipliers, params: AugLagParams,
                         objective: SocialObjective, scale=None,
                         log_domain: bool = False) -> list[np.ndarray]:
    """Partial derivatives of :func:`aug_lagrangian` in every user's powers."""
    n = profile.n_users
    scale = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
    jac = [t.jacobian(profile.values) for t in rate_tables(profile.model, profile.variant)]
    r = np.array([rj for rj, _ in jac])
    if log_domain:
        coef = objective.coefficients(r)
    elif objective.kind == WEIGHTED_SUM:
        coef = objective.weights
    else:
        # d/dr_j of prod (r - d) is the product of the other factors
        gap = r - objective.disagreement
        coef = np.array([np.prod(np.delete(gap, j)) for j in range(n)])
    gap = _gaps(profile, scale)
    lam = np.asarray(multipliers, dtype=float)
    out = []
    for i in range(n):
        g = sum(coef[j] * jac[j][1][i] for j in range(n))
        out.append(g + (2 * params.c * gap[i] - lam[i]) * profile.indexer.marginals[i] / scale[i])
    return out


def aug_lagrangian_grad(profile: PolicyProfile, multipliers, params: AugLagParams,
                        objective: SocialObjective, i: int, scale=None,
                        log_domain: bool = False) -> np.ndarray:
    """Partial derivatives of :func:`aug_lagrangian` in user ``i``'s powers."""
    return aug_lagrangian_grads(profile, multipliers, params, objective, scale, log_domain)[i]


@dataclass
class AscentResult:
    profile: PolicyProfile
    value: float
    rounds: int
    converged: bool
    clamps: int


class _Ascent:
    """Inner steepest ascent with one committed user per round."""

    def __init__(self, objective, params, multipliers, scale):
        self.objective = objective
        self.params = params
        self.lam = np.asarray(multipliers, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.log_domain = objective.kind == NASH_PRODUCT

    def value(self, profile) -> float:
        return aug_lagrangian(profile, self.lam, self.params, self.objective, self.scale,
                              self.log_domain)

    def directions(self, profile) -> list[tuple[np.ndarray, float]]:
        """Per user: ascent direction in normalized powers and its projected norm."""
        grads = aug_lagrangian_grads(profile, self.lam, self.params, self.objective,
                                     self.scale, self.log_domain)
        out = []
        for i, g in enumerate(grads):
            marg = profile.indexer.marginals[i]
            d = np.divide(g, marg, out=np.zeros_like(g), where=marg > 0) * self.scale[i] ** 2
            free = ~((profile.values[i] <= 0) & (d < 0))
            norm = float(np.sqrt(marg @ (np.where(free, d, 0.0) / self.scale[i]) ** 2))
            out.append((d, norm))
        return out

    def run(self, start: PolicyProfile) -> AscentResult:
        p = start
        f = self.value(p)
        step = self.params.delta
        clamps = 0
        n = p.n_users
        for t in range(1, self.params.max_rounds + 1):
            dirs = self.directions(p)
            if all(norm < self.params.eps for _, norm in dirs):
                return AscentResult(p, f, t - 1, True, clamps)
            while True:
                best, best_f, best_q, best_clip = -1, f, None, 0
                for i, (d, _) in enumerate(dirs):
                    raw = p.values[i] + step * d
                    q = p.replace(i, np.maximum(raw, 0.0))
                    fq = self.value(q)
                    if fq > best_f:
                        best, best_f, best_q, best_clip = i, fq, q, int(np.sum((raw < 0) & (p.values[i] > 0)))
                if best >= 0:
                    break
                # no user improves: the nominal step overshoots here
                step *= 0.5
                if step < self.params.min_step:
                    return AscentResult(p, f, t, False, clamps)
            p, f = best_q, best_f
            clamps += best_clip
            step = min(self.params.delta * self.params.max_growth, 2 * step)
        return AscentResult(p, f, self.params.max_rounds, False, clamps)


def steepest_ascent(multipliers, start: PolicyProfile, params: AugLagParams,
                    objective: SocialObjective, scale=None) -> AscentResult:
    """Best-improvement distributed ascent of the augmented Lagrangian.

    Every user proposes ``Q_i = max(0, P_i + delta * grad_i L)`` (gradient
    in normalized powers); only the user whose proposal raises ``L`` most
    commits.  If no proposal raises ``L`` the step is halved.  Stops when
    every user's projected gradient norm is below ``eps``.
    """
    _check(start, objective)
    scale = start.model.budgets if scale is None else scale
    return _Ascent(objective, params, multipliers, scale).run(start)


@dataclass
class ParetoReport:
    profile: PolicyProfile
    rates: np.ndarray
    value: float
    multipliers: np.ndarray
    outer_iterations: int
    inner_rounds: int
    clamps: int
    constraint_gap: np.ndarray
    converged: bool
    start: str
    wall_time: float
    runs: list = field(default_factory=list, repr=False)

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.rates))

    @property
    def spread(self) -> float:
        return float(np.max(self.rates) - np.min(self.rates))

    def summary(self) -> str:
        status = "converged" if self.converged else "NOT converged"
        r = ", ".join(f"{x:.4f}" for x in self.rates)
        return (f"{self.profile.variant.value}: {status} from {self.start}; rates ({r}); "
                f"sum {self.sum_rate:.4f}; outer {self.outer_iterations}, "
                f"rounds {self.inner_rounds}, clamps {self.clamps}; "
                f"max |gap| {np.abs(self.constraint_gap).max():.2e}; {self.wall_time:.2f} s")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["variant", "start", "converged", "user", "rate", "multiplier",
                    "constraint_gap", "sum_rate"])
        for i, r in enumerate(self.rates):
            w.writerow([self.profile.variant.value, self.start, self.converged, i, float(r),
                        float(self.multipliers[i]), float(self.constraint_gap[i]),
                        self.sum_rate])
        return buf.getvalue()


def _restore_budget(profile: PolicyProfile) -> PolicyProfile:
    """Rescale each policy so its expected power equals the budget."""
    spent = profile.expected_powers()
    vals = [v * (b / s) if s > 0 else v
            for v, b, s in zip(profile.values, profile.model.budgets, spent)]
    return PolicyProfile(profile.model, profile.indexer, vals)


def augmented_lagrangian(start: PolicyProfile, objective: SocialObjective,
                         params: AugLagParams | None = None, label: str = "start") -> ParetoReport:
    """Outer multiplier loop around :func:`steepest_ascent` from one start."""
    params = params or AugLagParams()
    t0 = time.perf_counter()
    model = start.model
    scale = model.budgets
    lam = np.zeros(model.n_users)
    p = start
    rounds = clamps = 0
    converged = False
    n = 0
    inner = params
    for n in range(1, params.max_outer + 1):
        if n > params.patience:
            # slow multiplier progress: stiffen the penalty
            inner = dataclasses.replace(inner, c=min(inner.c * params.c_growth, params.c_max))
        res = steepest_ascent(lam, p, inner, objective, scale)
        p = res.profile
        rounds += res.rounds
        clamps += res.clamps
        gap = model.budgets - p.expected_powers()
        if np.all(np.abs(gap) < params.constraint_tol):
            converged = True
            break
        # the multiplier step grows with the penalty, as in the classical method
        lam = lam - params.alpha * (inner.c / params.c) * gap / scale
    gap = model.budgets - p.expected_powers()
    out = _restore_budget(p)
    r = rates(out)
    if not converged:
        log.warning("augmented Lagrangian from %s stopped with max |gap| %.2e", label,
                    np.abs(gap).max())
    return ParetoReport(out, r, objective.value(r), lam, n, rounds, clamps, gap, converged,
                        label, time.perf_counter() - t0)


def default_starts(model: ChannelModel, variant, seed: int = 0, n_random: int = 3,
                   with_ne: bool = True) -> list[tuple[str, PolicyProfile]]:
    """Uniform-at-budget, the NE when it can be computed, and seeded random points."""
    from .vi import solve_ne

    indexer = build_indexer(model, variant)
    starts = [("uniform", PolicyProfile.uniform(model, indexer))]
    if with_ne:
        ne = solve_ne(model, variant)
        if ne.converged:
            starts.append(("ne", ne.profile))
    rng = np.random.default_rng(seed)
    for k in range(n_random):
        starts.append((f"random{k}", random_feasible(model, indexer, rng)))
    return starts


def solve_pareto(model: ChannelModel, variant, objective: SocialObjective | None = None,
                 params: AugLagParams | None = None, starts=None, seed: int = 0) -> ParetoReport:
    """Multistart augmented-Lagrangian ascent; keeps the run with the best objective.

    ``starts`` is a list of profiles or ``(label, profile)`` pairs; the default
    is :func:`default_starts`.  The report is flagged unconverged when no run
    met the constraint tolerance.
    """
    variant = Variant.parse(variant)
    if objective is None:
        objective = SocialObjective.weighted_sum(np.ones(model.n_users), variant)
    if starts is None:
        starts = default_starts(model, variant, seed)
    runs = []
    for k, s in enumerate(starts):
        label, prof = s if isinstance(s, tuple) else (f"start{k}", s)
        runs.append(augmented_lagrangian(prof, objective, params, label))
    pool = ([r for r in runs if r.converged and np.isfinite(objective.log_value(r.rates))]
            or [r for r in runs if r.converged] or runs)
    best = max(pool, key=lambda r: objective.log_value(r.rates))
    best.runs = runs
    return best


def solve_bargaining(model: ChannelModel, variant, d=None, params: AugLagParams | None = None,
                     starts=None, seed: int = 0) -> ParetoReport:
    """Nash bargaining point; the disagreement outcome defaults to zero rates."""
    d = np.zeros(model.n_users) if d is None else np.asarray(d, dtype=float)
    objective = SocialObjective.nash_product(d, variant)
    return solve_pareto(model, variant, objective, params, starts, seed)


def find_dominating(profile: PolicyProfile, n_samples: int = 1000, radius: float = 0.05,
                    rng=None, tol: float = 1e-9):
    """Search random feasible perturbations for one that Pareto-dominates ``profile``.

    Each sample adds ``U[-radius, radius] * Pbar_i`` per entry and projects
    onto ``{P_i >= 0, E P_i <= Pbar_i}``.  Returns the first dominating
    profile found, or ``None``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    model = profile.model
    base = rates(profile)
    for _ in range(n_samples):
        vals = []
        for i, v in enumerate(profile.values):
            x = v + rng.uniform(-radius, radius, v.size) * model.budgets[i]
            q, _ = kkt_project(x, profile.indexer.marginals[i], model.budgets[i])
            vals.append(q)
        cand = PolicyProfile(model, profile.indexer, vals)
        diff = rates(cand) - base
        if np.all(diff >= -1e-12) and np.any(diff > tol):
            return cand
    return None


@dataclass
class FairnessRow:
    snr_db: float
    pareto: np.ndarray
    bargaining: np.ndarray


def fairness_table(make_model, variant, snrs, params: AugLagParams | None = None,
                   seed: int = 0) -> list[FairnessRow]:
    """Per SNR: rates at the weighted-sum Pareto point and at the bargaining point.

    ``make_model`` maps an SNR in dB to a :class:`ChannelModel`.
    """
    rows = []
    for snr in snrs:
        model = make_model(snr)
        starts = default_starts(model, variant, seed)
        par = solve_pareto(model, variant, params=params, starts=starts)
        nb = solve_bargaining(model, variant, params=params, starts=starts)
        rows.append(FairnessRow(float(snr), par.rates, nb.rates))
    return rows


def _fmt(r) -> str:
    return "(" + ", ".join(f"{x:.2f}" for x in r) + ")"


def format_fairness(rows: list[FairnessRow]) -> str:
    lines = [f"{'SNR(dB)':>8}  {'Rates at Pareto point':<24}  Rates at Nash bargaining"]
    for row in rows:
        lines.append(f"{row.snr_db:>8g}  {_fmt(row.pareto):<24}  {_fmt(row.bargaining)}")
    return "\n".join(lines)


def fairness_csv(rows: list[FairnessRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["snr_db", "solution", "user", "rate"])
    for row in rows:
        for name, r in (("pareto", row.pareto), ("bargaining", row.bargaining)):
            for i, x in enumerate(r):
                w.writerow([row.snr_db, name, i, float(x)])
    return buf.getvalue()
