"""Repeated finite-level power game learned through interference beliefs.

Each transmitter sees only its direct gain and picks one of finitely many
power levels per direct-gain state, subject to the average-power budget.
Rather than modelling the opponents' strategies, user ``i`` keeps a Laplace
belief over the interference its receiver reports after every slot and
best-responds to it.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, EnumerationTooLarge, Variant
from .rates import log_base, rate_tables

log = logging.getLogger(__name__)

SUPPORT_DECIMALS = 9
MATCH_TOL = 1e-6
DEFAULT_CAP = 1_000_000


@dataclass(frozen=True)
class PowerLevels:
    """Per-user finite sets of transmit powers in watts."""

    levels: tuple

    def __post_init__(self):
        out = []
        for i, lv in enumerate(self.levels):
            a = np.asarray(lv, dtype=float).ravel()
            if a.size == 0 or np.any(a < 0) or np.any(np.diff(a) <= 0):
                raise ValueError(f"user {i}: levels must be nonnegative and strictly increasing")
            if a[0] != 0:
                raise ValueError(f"user {i}: levels must contain 0")
            a.setflags(write=False)
            out.append(a)
        object.__setattr__(self, "levels", tuple(out))

    @classmethod
    def grid(cls, n_users: int, step: float = 5.0, top: float = 50.0) -> "PowerLevels":
        """``{0, step, ..., top}`` for every user."""
        grid = step * np.arange(int(round(top / step)) + 1)
        return cls(tuple(grid for _ in range(n_users)))

    @property
    def n_users(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.levels[i]


@dataclass(frozen=True)
class DiscreteStrategy:
    """One level index per direct-gain state of ``user``."""

    user: int
    indices: tuple

    def powers(self, levels: PowerLevels) -> np.ndarray:
        return levels[self.user][list(self.indices)]


def _direct_marginal(model: ChannelModel, i: int) -> np.ndarray:
    return np.asarray(model.links[i][i].probs)


def strategy_matrix(levels: np.ndarray, marginal: np.ndarray, budget: float,
                    cap: int = DEFAULT_CAP) -> np.ndarray:
    """Feasible level-index assignments as rows, in lexicographic order."""
    m, n = len(levels), len(marginal)
    if m ** n > cap:
        raise EnumerationTooLarge(f"{m}^{n} strategies exceed the cap of {cap}")
    idx = np.array(list(itertools.product(range(m), repeat=n)), dtype=np.intp).reshape(-1, n)
    spent = np.asarray(levels)[idx] @ marginal
    return idx[spent <= budget + 1e-12]


def enumerate_strategies(levels: PowerLevels, indexer, budget: float, user: int = 0,
                         cap: int = DEFAULT_CAP) -> list[DiscreteStrategy]:
    """Every level assignment meeting ``sum_l pi(l) P(l) <= budget``.

    ``indexer`` is the direct-information indexer of the model (or any object
    exposing ``marginals``).
    """
    mat = strategy_matrix(levels[user], indexer.marginals[user], budget, cap)
    return [DiscreteStrategy(user, tuple(int(k) for k in row)) for row in mat]


def interference_support(model: ChannelModel, levels: PowerLevels, i: int,
                         cap: int = DEFAULT_CAP) -> np.ndarray:
    """Distinct values of ``sum_{j != i} |h_ij|^2 p_j`` over gains and levels."""
    others = [j for j in range(model.n_users) if j != i]
    if not others:
        return np.zeros(1)
    total = np.zeros(1)
    count = 1
    for j in others:
        terms = np.unique(np.round(np.outer(model.links[i][j].support, levels[j]).ravel(),
                                   SUPPORT_DECIMALS))
        count *= terms.size
        if count > cap:
            raise EnumerationTooLarge(f"interference support exceeds the cap of {cap}")
        total = np.unique(np.round(np.add.outer(total, terms).ravel(), SUPPORT_DECIMALS))
    return total


@dataclass
class Belief:
    """Laplace estimate ``(T(I) + d) / (T + |support| d)`` over interference levels."""

    support: np.ndarray
    counts: np.ndarray = None
    total: int = 0
    d: int = 1

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=float)
        if self.support.ndim != 1 or self.support.size == 0:
            raise ValueError("belief support must be a nonempty vector")
        if np.any(np.diff(self.support) <= 0):
            raise ValueError("belief support must be sorted and distinct")
        if self.counts is None:
            self.counts = np.zeros(self.support.size, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.d <= 0:
            raise ValueError("smoothing d must be positive")
        if int(self.counts.sum()) != self.total:
            raise ValueError("counts must sum to the slot total")

    @property
    def phi(self) -> np.ndarray:
        return (self.counts + self.d) / (self.total + self.support.size * self.d)

    def locate(self, value: float) -> int:
        k = int(np.searchsorted(self.support, value))
        best = min((c for c in (k - 1, k) if 0 <= c < self.support.size),
                   key=lambda c: abs(self.support[c] - value))
        if abs(self.support[best] - value) > MATCH_TOL:
            raise ValueError(f"interference {value!r} is not in the belief support")
        return best

    def observe(self, value: float) -> None:
        """In-place update used by the simulator."""
        self.counts[self.locate(value)] += 1
        self.total += 1

    def copy(self) -> "Belief":
        return Belief(self.support.copy(), self.counts.copy(), self.total, self.d)


def update_belief(belief: Belief, observed: float) -> Belief:
    """Belief after one more observation of the interference level ``observed``."""
    out = belief.copy()
    out.observe(observed)
    return out


class _Utility:
    """``log(1 + a h_s p_l / (1 + I))`` for every direct state, level and support point."""

    def __init__(self, model: ChannelModel, levels: PowerLevels, i: int, support: np.ndarray):
        h = model.alpha[i] * np.asarray(model.links[i][i].support)
        p = levels[i]
        self.table = np.log1p(h[:, None, None] * p[None, :, None]
                              / (1.0 + support[None, None, :]))
        self.marginal = _direct_marginal(model, i)

    def values(self, phi: np.ndarray, strategies: np.ndarray) -> np.ndarray:
        u = self.table @ phi
        n = u.shape[0]
        return u[np.arange(n), strategies] @ self.marginal


def _as_matrix(strategies) -> np.ndarray:
    if isinstance(strategies, np.ndarray):
        return strategies
    return np.array([s.indices for s in strategies], dtype=np.intp)


def best_response_to_belief(belief: Belief, model: ChannelModel, i: int, strategies,
                            levels: PowerLevels | None = None) -> DiscreteStrategy:
    """Feasible strategy maximizing the expected rate under ``belief``.

    ``levels`` defaults to the grid ``{0, 5, ..., 50}``.  Ties go to the
    lowest strategy index.
    """
    mat = _as_matrix(strategies)
    if mat.size == 0:
        raise ValueError("empty strategy list")
    levels = levels or PowerLevels.grid(model.n_users)
    util = _Utility(model, levels, i, belief.support)
    k = int(np.argmax(util.values(belief.phi, mat)))
    return DiscreteStrategy(i, tuple(int(x) for x in mat[k]))


def _powers(strategies, levels: PowerLevels) -> list[np.ndarray]:
    return [s.powers(levels) for s in strategies]


def epsilon_ne_check(strategies, model: ChannelModel, levels: PowerLevels,
                     eps: float = 0.05):
    """Largest rate gain (nats) of any feasible unilateral deviation, per user.

    Expectations are exact over the direct and cross gain laws.  Returns
    ``(improvements, ok)`` with ``ok`` true iff every gain is at most ``eps``.
    """
    tabs = rate_tables(model, Variant.DIRECT)
    vals = _powers(strategies, levels)
    gains = np.empty(model.n_users)
    with log_base("e"):
        for i, tab in enumerate(tabs):
            mat = strategy_matrix(levels[i], _direct_marginal(model, i), model.budgets[i])
            alt = list(vals)
            alt[i] = levels[i][mat]
            best = float(np.max(tab.rate(alt)))
            gains[i] = best - float(tab.rate(vals))
    return gains, bool(np.all(gains <= eps))


def strategy_rates(strategies, model: ChannelModel, levels: PowerLevels) -> np.ndarray:
    """Exact expected rates of the direct-information game at these strategies."""
    vals = _powers(strategies, levels)
    return np.array([float(t.rate(vals)) for t in rate_tables(model, Variant.DIRECT)])


@dataclass(frozen=True)
class BayesParams:
    d: int = 1
    eps: float = 0.05
    max_slots: int = 50_000
    window: int = 500
    epoch: int = 1

    def __post_init__(self):
        if self.d <= 0 or self.eps <= 0 or self.max_slots < 1 or self.window < 1 \
                or self.epoch < 1:
            raise ValueError("bayes parameters must be positive")


@dataclass
class LearningTrace:
    """Slot records and the outcome of one learning run."""

    states: np.ndarray
    actions: np.ndarray
    interference: np.ndarray
    strategy_log: list
    strategies: list
    beliefs: list
    improvements: np.ndarray
    converged: bool
    rates: np.ndarray
    levels: PowerLevels = field(repr=False)
    checks: list = field(default_factory=list)

    @property
    def slots(self) -> int:
        return int(self.states.size)

    def summary(self) -> str:
        status = "eps-NE" if self.converged else "NOT converged"
        r = ", ".join(f"{x:.4f}" for x in self.rates)
        return (f"bayes: {status} after {self.slots} slots; rates ({r}); "
                f"max improvement {self.improvements.max():.2e}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["slot", "user", "action", "interference"])
        for t in range(self.slots):
            for i in range(self.actions.shape[1]):
                w.writerow([t + 1, i, float(self.actions[t, i]), float(self.interference[t, i])])
        return buf.getvalue()

    def strategy_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["user", "direct_state", "level_index", "power"])
        for s in self.strategies:
            for k, (li, p) in enumerate(zip(s.indices, s.powers(self.levels))):
                w.writerow([s.user, k, li, float(p)])
        return buf.getvalue()


def simulate(model: ChannelModel, levels: PowerLevels | None = None,
             params: BayesParams | None = None, seed: int = 0) -> LearningTrace:
    """Play the repeated game with interference-belief best responses.

    Every user starts from its all-zero strategy.  Each slot a joint state
    is drawn, the users transmit at their current levels, each receiver
    reports the realized interference and every user updates its belief.
    Best responses are recomputed every ``epoch`` slots.  The run stops once
    no strategy has changed for ``window`` slots and the profile passes
    :func:`epsilon_ne_check`, or at ``max_slots``.
    """
    params = params or BayesParams()
    levels = levels or PowerLevels.grid(model.n_users)
    n = model.n_users
    if levels.n_users != n:
        raise ValueError("need one level set per user")
    rng = np.random.default_rng(seed)
    space = model.states
    direct_idx = np.stack([space.link_index[:, i, i] for i in range(n)], axis=1)
    offdiag = ~np.eye(n, dtype=bool)

    mats, utils, beliefs = [], [], []
    for i in range(n):
        mats.append(strategy_matrix(levels[i], _direct_marginal(model, i), model.budgets[i]))
        support = interference_support(model, levels, i)
        beliefs.append(Belief(support, d=params.d))
        utils.append(_Utility(model, levels, i, support))
    current = [0] * n
    for i in range(n):
        zero = np.flatnonzero(~mats[i].any(axis=1))
        current[i] = int(zero[0])

    cap = params.max_slots
    states = np.empty(cap, dtype=np.intp)
    actions = np.empty((cap, n))
    interference = np.empty((cap, n))
    strategy_log = [(0, tuple(tuple(int(x) for x in mats[i][current[i]]) for i in range(n)))]
    checks = []
    stable = 0
    converged = False
    t = 0
    chunk = 4096
    draws = np.empty(0, dtype=np.intp)
    while t < cap:
        if draws.size == 0:
            draws = rng.choice(len(space), size=chunk, p=space.prob)
        k, draws = int(draws[0]), draws[1:]
        p = np.array([levels[i][mats[i][current[i], direct_idx[k, i]]] for i in range(n)])
        g = space.gains[k]
        intf = np.round(np.where(offdiag, g, 0.0) @ p, SUPPORT_DECIMALS)
        for i in range(n):
            beliefs[i].observe(intf[i])
        states[t], actions[t], interference[t] = k, p, intf
        t += 1
        if t % params.epoch == 0:
            new = [int(np.argmax(utils[i].values(beliefs[i].phi, mats[i]))) for i in range(n)]
            if new != current:
                current = new
                stable = 0
                strategy_log.append((t, tuple(tuple(int(x) for x in mats[i][current[i]])
                                              for i in range(n))))
                continue
        stable += 1
        if stable >= params.window and stable % params.window == 0:
            strats = [DiscreteStrategy(i, tuple(int(x) for x in mats[i][current[i]]))
                      for i in range(n)]
            gains, ok = epsilon_ne_check(strats, model, levels, params.eps)
            checks.append((t, gains))
            if ok:
                converged = True
                break
    strats = [DiscreteStrategy(i, tuple(int(x) for x in mats[i][current[i]])) for i in range(n)]
    gains, ok = epsilon_ne_check(strats, model, levels, params.eps)
    if not converged:
        log.warning("bayes: no stable eps-NE within %d slots (max gain %.3e)", cap, gains.max())
    return LearningTrace(states[:t].copy(), actions[:t].copy(), interference[:t].copy(),
                         strategy_log, strats, beliefs, gains, converged,
                         strategy_rates(strats, model, levels), levels, checks)
