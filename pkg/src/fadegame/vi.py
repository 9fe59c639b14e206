"""Variational-inequality view of the power games and the two-phase solver.

A profile is a fixed point of ``T(P) = Proj(P - tau * F(P))`` exactly when it
solves the VI, i.e. when it is a Nash equilibrium.  ``Proj`` is the
budget-binding shift ``max(0, x - lam)`` per user.  For the full-information
game ``F(P) = (I + Hhat) P + hhat``; for the partial-information games ``F``
is the negated rate gradient per unit of info-state probability, which keeps
the fixed points equal to the equilibria when marginals are not uniform.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, InfoIndexer, Variant, build_indexer
from .policy import (
    PolicyProfile,
    ProjectionMode,
    best_response_full,
    interference_full,
    kkt_project,
    random_feasible,
    shift_project,
)
from .rates import rate_tables, rates

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    """Raised by inner solvers that exhaust their iteration budget."""


@dataclass(frozen=True)
class AffineMap:
    """Per-state blocks of ``F(P) = (I + Hhat) P + hhat`` (full information).

    ``blocks[s]`` is ``Hhat(h_s)`` and ``offset[s]`` is ``hhat(h_s)``; the
    global matrix is block diagonal over states.
    """

    blocks: np.ndarray
    offset: np.ndarray

    def apply(self, p_state_major: np.ndarray) -> np.ndarray:
        """``F`` for powers laid out as ``(..., S, N)``."""
        return p_state_major + np.einsum("sij,...sj->...si", self.blocks, p_state_major) + self.offset

    def dense(self) -> np.ndarray:
        s, n, _ = self.blocks.shape
        out = np.zeros((s * n, s * n))
        for k in range(s):
            out[k * n:(k + 1) * n, k * n:(k + 1) * n] = self.blocks[k]
        return out


def assemble_affine(model: ChannelModel) -> AffineMap:
    g = model.states.gains
    diag = np.einsum("sii->si", g)
    blocks = g / diag[:, :, None]
    idx = np.arange(model.n_users)
    blocks[:, idx, idx] = 0.0
    return AffineMap(blocks, 1.0 / diag)


def classify_monotonicity(model: ChannelModel) -> tuple[float, str]:
    """Smallest eigenvalue of the symmetric part of ``I + Hhat`` over all states."""
    aff = assemble_affine(model)
    h = np.eye(model.n_users) + aff.blocks
    sym = 0.5 * (h + np.swapaxes(h, 1, 2))
    lo = float(np.linalg.eigvalsh(sym).min())
    return lo, ("PositiveSemidefinite" if lo >= -1e-12 else "Indefinite")


@dataclass
class SolveParams:
    """Knobs of the two-phase heuristic.

    ``tau`` is the step of the T map in the full-information game, where
    ``F`` is measured in watts.  The partial-information games use
    ``tau_partial * budget_i ** 2`` for user ``i`` since there ``F`` is a
    marginal rate with units of 1 / watt.
    """

    max_picard: int = 100
    eps: float = 1e-3
    delta: float = 1e-6
    gamma0: float = 0.5
    gamma_every: int = 10
    fd_step: float = 1e-4
    restart_cap: int = 10
    max_descent: int = 400
    tau: float = 0.1
    tau_partial: float = 0.5
    backtrack: int = 30
    expand: int = 20

    def __post_init__(self):
        for name in ("eps", "delta", "gamma0", "fd_step", "tau", "tau_partial"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_picard < 0 or self.restart_cap < 1 or self.gamma_every < 1:
            raise ValueError("max_picard >= 0, restart_cap >= 1 and gamma_every >= 1 required")

    def gamma(self, t: int) -> float:
        """Descent step for iteration ``t >= 1``: divided by ``1 + gamma`` every block."""
        g = self.gamma0
        for _ in range((t - 1) // self.gamma_every):
            g = g / (1.0 + g)
        return g


class ViProblem:
    """The VI of one game on one channel model."""

    def __init__(self, model: ChannelModel, variant, tau: float | None = None,
                 mode=ProjectionMode.EQUALITY):
        variant = Variant.parse(variant)
        if tau is None:
            tau = 0.1 if variant is Variant.FULL else 0.5
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.model = model
        self.indexer: InfoIndexer = build_indexer(model, variant)
        self.variant: Variant = self.indexer.variant
        self.mode = ProjectionMode(mode)
        self.tau = float(tau)
        n = model.n_users
        if self.variant is Variant.FULL:
            self.taus = np.full(n, self.tau)
        else:
            self.taus = self.tau * np.asarray(model.budgets) ** 2
        self.tables = rate_tables(model, self.variant)
        self.sizes = self.indexer.sizes()
        self.cuts = np.cumsum([0] + self.sizes)
        if self.variant is Variant.FULL:
            self.affine = assemble_affine(model)
            self.gdiag = np.einsum("sii->is", model.states.gains) * model.alpha[:, None]

    @classmethod
    def from_params(cls, model, variant, params: SolveParams, mode=ProjectionMode.EQUALITY):
        variant = Variant.parse(variant)
        tau = params.tau if variant is Variant.FULL else params.tau_partial
        return cls(model, variant, tau, mode)

    @property
    def dim(self) -> int:
        return int(self.cuts[-1])

    def split(self, vec):
        vec = np.asarray(vec, dtype=float)
        return [vec[..., self.cuts[i]:self.cuts[i + 1]] for i in range(self.model.n_users)]

    def join(self, vals) -> np.ndarray:
        return np.concatenate([np.asarray(v, dtype=float) for v in vals], axis=-1)

    def profile(self, vec) -> PolicyProfile:
        return PolicyProfile(self.model, self.indexer, self.split(vec))

    # -- the map F --------------------------------------------------------
    def F(self, vec) -> np.ndarray:
        vals = self.split(vec)
        if self.variant is Variant.FULL:
            p = np.stack(vals, axis=-2)
            noise = interference_full(self.model, p)
            return self.join(list(np.moveaxis(p + noise / self.gdiag, -2, 0)))
        out = []
        for i, tab in enumerate(self.tables):
            out.append(-tab.grad(vals) / self.indexer.marginals[i])
        return self.join(out)

    def F_direct(self, vec) -> np.ndarray:
        """Full-information ``F`` evaluated state by state, without the affine assembly."""
        if self.variant is not Variant.FULL:
            raise ValueError("per-state formula applies to the full-information game")
        vals = self.split(vec)
        g = self.model.states.gains
        n = self.model.n_users
        out = []
        for i in range(n):
            inter = np.ones(len(g))
            for j in range(n):
                if j != i:
                    inter = inter + g[:, i, j] * vals[j]
            out.append(vals[i] + inter / (self.model.alpha[i] * g[:, i, i]))
        return self.join(out)

    # -- projection and T ---------------------------------------------------
    def project_user(self, i: int, x):
        w = self.indexer.marginals[i]
        b = self.model.budgets[i]
        if self.mode is ProjectionMode.EQUALITY:
            return shift_project(x, w, b)
        return kkt_project(x, w, b)

    def project(self, vec) -> np.ndarray:
        return self.join([self.project_user(i, x)[0] for i, x in enumerate(self.split(vec))])

    def t_parts(self, vec):
        """``(T(P), lam, tau * F(P))`` with per-user multipliers."""
        vec = np.asarray(vec, dtype=float)
        fvals = self.split(self.F(vec))
        vals = self.split(vec)
        outs, lams, steps = [], [], []
        for i in range(self.model.n_users):
            step = self.taus[i] * fvals[i]
            v, lam = self.project_user(i, vals[i] - step)
            outs.append(v)
            lams.append(lam)
            steps.append(step)
        return self.join(outs), lams, self.join(steps)

    def T(self, vec) -> np.ndarray:
        return self.t_parts(vec)[0]

    def residual(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        return np.linalg.norm(vec - self.T(vec), axis=-1)

    def objective(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        return np.sum((vec - self.T(vec)) ** 2, axis=-1)

    def residual_terms(self, vec) -> np.ndarray:
        """Per-entry ``min(P, tau F + lam)``; their squares sum to ``g^2``
        under the budget-binding projection."""
        vec = np.asarray(vec, dtype=float)
        _, lams, steps = self.t_parts(vec)
        lam = self.join([np.broadcast_to(np.asarray(l)[..., None], np.shape(s))
                         for l, s in zip(lams, self.split(steps))])
        return np.minimum(vec, steps + lam)

    def random_start(self, rng) -> np.ndarray:
        return random_feasible(self.model, self.indexer, rng).as_vector()

    def uniform_start(self) -> np.ndarray:
        return PolicyProfile.uniform(self.model, self.indexer).as_vector()


def t_map(problem: ViProblem, profile: PolicyProfile) -> PolicyProfile:
    return problem.profile(problem.T(profile.as_vector()))


def residual(problem: ViProblem, profile: PolicyProfile) -> float:
    return float(problem.residual(profile.as_vector()))


def phase1(problem: ViProblem, start, max_iter: int = 100) -> np.ndarray:
    """``max_iter`` Picard iterations of the T map."""
    p = np.array(start.as_vector() if isinstance(start, PolicyProfile) else start, dtype=float)
    for _ in range(max_iter):
        p = problem.T(p)
    return p


def _fd_points(vec, lo, hi, rel_step):
    x = vec[lo:hi]
    h = rel_step * np.maximum(1.0, np.abs(x))
    # one-sided at zero power: the rate is undefined below it
    down = np.minimum(h, x)
    return h, down


def fd_gradient(problem: ViProblem, vec: np.ndarray, i: int, rel_step: float,
                fast: bool = True) -> np.ndarray:
    """Central-difference gradient of ``||P - T(P)||^2`` in user ``i``'s block."""
    if fast and problem.variant is Variant.FULL and problem.mode is ProjectionMode.EQUALITY:
        return _fd_gradient_full(problem, vec, i, rel_step)
    lo, hi = problem.cuts[i], problem.cuts[i + 1]
    n = hi - lo
    up, down = _fd_points(vec, lo, hi, rel_step)
    batch = np.tile(vec, (2 * n, 1))
    rows = np.arange(n)
    batch[rows, lo + rows] += up
    batch[n + rows, lo + rows] -= down
    f = problem.objective(batch)
    return (f[:n] - f[n:]) / (up + down)


def _fd_gradient_full(problem: ViProblem, vec: np.ndarray, i: int, rel_step: float) -> np.ndarray:
    """Same differences as the batched path, evaluated incrementally.

    Moving ``P_i(s)`` only changes entry ``s`` of every user's projection
    input, so each water level shifts by ``pi_s * d / W_active`` unless some
    entry changes sides; those perturbations are recomputed exactly.
    """
    model = problem.model
    n = model.n_users
    vals = problem.split(vec)
    fvals = problem.split(problem.F(vec))
    g = model.states.gains
    lo, hi = problem.cuts[i], problem.cuts[i + 1]
    up, down = _fd_points(vec, lo, hi, rel_step)
    f_plus = np.zeros(hi - lo)
    f_minus = np.zeros(hi - lo)
    bad = np.zeros(hi - lo, dtype=bool)
    for j in range(n):
        w = problem.indexer.marginals[j]
        tau = problem.taus[j]
        x = vals[j] - tau * fvals[j]
        lam = problem.project_user(j, x)[1]
        active = x > lam
        r = np.where(active, vals[j] - (x - lam), vals[j])
        q_total = float(r @ r)
        s_act = float(r[active].sum())
        n_act = int(active.sum())
        w_act = float(w[active].sum())
        lo_act = np.min(x[active]) if n_act else np.inf
        hi_in = np.max(x[~active]) if n_act < x.size else -np.inf
        if j == i:
            coef = np.full(x.size, 1.0 - tau)
        else:
            coef = -tau * g[:, j, i] / (model.alpha[j] * g[:, j, j])
        for sign, step, out in ((1.0, up, f_plus), (-1.0, down, f_minus)):
            d = sign * coef * step
            xs = x + d
            p_new = vals[j] + (sign * step if j == i else 0.0)
            dlam = np.where(active, w * d / w_act if w_act > 0 else 0.0, 0.0)
            lam_new = lam + dlam
            keep = np.where(active, xs > lam_new, xs <= lam)
            # other entries must stay on their side of the new level
            lo_other = np.where(active & (x == lo_act), _second(x[active], lo_act, True), lo_act)
            hi_other = np.where(~active & (x == hi_in), _second(x[~active], hi_in, False), hi_in)
            keep &= (lo_other > lam_new) & (hi_other <= lam_new)
            bad |= ~keep
            r_new = np.where(active, p_new - (xs - lam_new), p_new)
            rest = np.where(active, 2 * dlam * (s_act - r) + (n_act - 1) * dlam ** 2, 0.0)
            out += q_total - r ** 2 + r_new ** 2 + rest
    grad = (f_plus - f_minus) / (up + down)
    if bad.any():
        idx = np.flatnonzero(bad)
        m = idx.size
        batch = np.tile(vec, (2 * m, 1))
        rows = np.arange(m)
        batch[rows, lo + idx] += up[idx]
        batch[m + rows, lo + idx] -= down[idx]
        f = problem.objective(batch)
        grad[idx] = (f[:m] - f[m:]) / (up[idx] + down[idx])
    return grad


def _second(values: np.ndarray, extreme: float, smallest: bool) -> float:
    """Next order statistic after removing one copy of ``extreme``."""
    if values.size <= 1:
        return np.inf if smallest else -np.inf
    part = np.partition(values, 1) if smallest else -np.partition(-values, 1)
    return part[1]


@dataclass
class SolveReport:
    profile: PolicyProfile
    residual: float
    picard_iterations: int
    descent_iterations: int
    restarts: int
    rates: np.ndarray
    converged: bool
    wall_time: float
    history: list = field(default_factory=list, repr=False)

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.rates))

    def summary(self) -> str:
        status = "converged" if self.converged else "NOT converged"
        r = ", ".join(f"{x:.4f}" for x in self.rates)
        return (f"{self.profile.variant.value}: {status}; g(P) = {self.residual:.3e}; "
                f"Picard {self.picard_iterations}, descent {self.descent_iterations}, "
                f"restarts {self.restarts}; rates ({r}); sum {self.sum_rate:.4f}; "
                f"{self.wall_time:.2f} s")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["variant", "residual", "picard", "descent", "restarts", "converged",
                    "user", "rate", "expected_power"])
        powers = self.profile.expected_powers()
        for i, r in enumerate(self.rates):
            w.writerow([self.profile.variant.value, self.residual, self.picard_iterations,
                        self.descent_iterations, self.restarts, self.converged, i, r, powers[i]])
        return buf.getvalue()


@dataclass
class Phase2Result:
    vec: np.ndarray
    residual: float
    iterations: int
    converged: bool
    stalled: bool


def phase2(problem: ViProblem, start, params: SolveParams) -> Phase2Result:
    """Cyclic per-user projected steepest descent on ``||P - T(P)||^2``.

    The step follows ``params.gamma``; a step that would raise the objective
    is halved until it does not.  Stops when ``g < eps``, when an iteration
    moves the profile by less than ``delta`` (a stall) or after
    ``max_descent`` iterations.
    """
    p = np.array(start.as_vector() if isinstance(start, PolicyProfile) else start, dtype=float)
    f = float(problem.objective(p))
    if np.sqrt(f) < params.eps:
        return Phase2Result(p, float(np.sqrt(f)), 0, True, False)
    t = 0
    while t < params.max_descent:
        t += 1
        prev = p.copy()
        gamma = params.gamma(t)
        for i in range(problem.model.n_users):
            lo, hi = problem.cuts[i], problem.cuts[i + 1]
            grad = fd_gradient(problem, p, i, params.fd_step)
            step = gamma
            for k in range(params.backtrack):
                trial = p.copy()
                trial[lo:hi] = problem.project_user(i, p[lo:hi] - step * grad)[0]
                ft = float(problem.objective(trial))
                if ft <= f:
                    break
                step *= 0.5
            else:
                continue
            if k == 0:
                # the nominal step is often far too short on flat valleys
                for _ in range(params.expand):
                    step *= 2.0
                    nxt = p.copy()
                    nxt[lo:hi] = problem.project_user(i, p[lo:hi] - step * grad)[0]
                    fn = float(problem.objective(nxt))
                    if fn >= ft:
                        break
                    trial, ft = nxt, fn
            p, f = trial, ft
        g = float(np.sqrt(f))
        if g < params.eps:
            return Phase2Result(p, g, t, True, False)
        if np.linalg.norm(p - prev) < params.delta:
            return Phase2Result(p, g, t, False, True)
    return Phase2Result(p, float(np.sqrt(f)), t, False, False)


def solve_ne(model: ChannelModel, variant, params: SolveParams | None = None,
             start=None, seed: int | None = None) -> SolveReport:
    """Two-phase heuristic with restarts from the point where descent stopped."""
    params = params or SolveParams()
    t0 = time.perf_counter()
    problem = ViProblem.from_params(model, variant, params)
    if start is None:
        p = problem.uniform_start() if seed is None else problem.random_start(
            np.random.default_rng(seed))
    else:
        p = np.array(start.as_vector() if isinstance(start, PolicyProfile) else start, float)
    picard = descent = restarts = 0
    history = []
    best_p, best_g = p, float(problem.residual(p))
    converged = False
    while True:
        p_in, g_in = p, float(problem.residual(p))
        p = phase1(problem, p, params.max_picard)
        picard += params.max_picard
        g = float(problem.residual(p))
        history.append(("phase1", g))
        if restarts and g > g_in:
            # Picard can be locally unstable when I + Hhat is indefinite;
            # descent resumes from the better point
            p, g = p_in, g_in
        if g < best_g:
            best_p, best_g = p, g
        if g < params.eps:
            converged = True
            break
        res = phase2(problem, p, params)
        descent += res.iterations
        p = res.vec
        history.append(("phase2", res.residual))
        if res.residual < best_g:
            best_p, best_g = res.vec, res.residual
        if res.converged:
            converged = True
            break
        restarts += 1
        if restarts >= params.restart_cap:
            log.warning("solve_ne: restart cap reached with g = %.3e", best_g)
            break
    profile = problem.profile(best_p)
    return SolveReport(profile, best_g, picard, descent, restarts, rates(profile), converged,
                       time.perf_counter() - t0, history)


def _br_partial(tab, vals, marg, budget, tol=1e-13, iters=200) -> np.ndarray:
    """Exact best response of one user when the game is not full-information.

    Per info state the marginal rate ``phi_s(p)`` is decreasing, so for a
    multiplier ``mu`` each power solves ``phi_s(p) = mu * pi_s`` (or is 0),
    and ``mu`` is then found by bisection on the budget.
    """
    noise = tab.noise(vals)
    scatter = tab.scatter
    w, g = tab.weight, tab.gain

    def phi(p):
        return (w * g / (noise + g * p[..., tab.own])) @ scatter

    n = tab.n_own
    top = phi(np.zeros(n)) / marg
    hi_p = budget / marg

    def powers(mu):
        # bisection on p in [0, hi_p] for all states at once
        lo = np.zeros(n)
        hi = hi_p.copy()
        # extend upper bracket when needed
        for _ in range(60):
            need = phi(hi) / marg > mu
            if not need.any():
                break
            hi = np.where(need, 2 * hi + 1, hi)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            up = phi(mid) / marg > mu
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
            if np.all(hi - lo <= tol * np.maximum(1.0, hi)):
                break
        return np.where(top > mu, 0.5 * (lo + hi), 0.0)

    mu_hi = float(top.max())
    mu_lo = mu_hi
    while powers(mu_lo) @ marg < budget:
        mu_lo *= 0.5
        if mu_lo < 1e-300:
            raise NonConvergence("could not bracket the budget multiplier")
    for _ in range(iters):
        mid = 0.5 * (mu_lo + mu_hi)
        if powers(mid) @ marg > budget:
            mu_lo = mid
        else:
            mu_hi = mid
        if mu_hi - mu_lo <= 1e-15 * mu_hi:
            break
    p = powers(0.5 * (mu_lo + mu_hi))
    spent = p @ marg
    if spent > 0:
        p = p * (budget / spent)
    return p


def best_response(profile: PolicyProfile, i: int) -> np.ndarray:
    """Exact best response of user ``i`` for any information structure."""
    if profile.variant is Variant.FULL:
        return best_response_full(profile, i).values
    model = profile.model
    tab = rate_tables(model, profile.variant)[i]
    return _br_partial(tab, profile.values, profile.indexer.marginals[i], model.budgets[i])


def verify_ne(model: ChannelModel, variant, profile: PolicyProfile, tol: float = 1e-3):
    """Per-user gain from deviating to the exact best response.

    Returns ``(improvements, ok)`` with ``ok`` true iff every improvement is
    at most ``tol``.
    """
    if profile.variant is not Variant.parse(variant):
        raise ValueError("profile variant does not match")
    tabs = rate_tables(model, profile.variant)
    gains = np.empty(model.n_users)
    for i, tab in enumerate(tabs):
        br = best_response(profile, i)
        alt = list(profile.values)
        alt[i] = br
        gains[i] = float(tab.rate(alt)) - float(tab.rate(profile.values))
    return gains, bool(np.all(gains <= tol))


def phase1_study(model: ChannelModel, variant, n_starts: int = 100, max_iter: int = 100,
                 seed: int = 0, params: SolveParams | None = None):
    """Mean ``g(P)`` over random feasible starts, before and after Phase 1."""
    params = params or SolveParams()
    problem = ViProblem.from_params(model, variant, params)
    rng = np.random.default_rng(seed)
    starts = np.stack([problem.random_start(rng) for _ in range(n_starts)])
    before = problem.residual(starts)
    after_p = starts
    for _ in range(max_iter):
        after_p = problem.T(after_p)
    after = problem.residual(after_p)
    return float(before.mean()), float(after.mean())
