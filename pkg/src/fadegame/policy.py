"""Power policies, the per-user feasible set and projections onto it."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .channel import ChannelModel, InfoIndexer, Variant, build_indexer

BUDGET_SLACK = 1e-9


class ProjectionMode(str, enum.Enum):
    """How the budget constraint is handled when projecting.

    ``EQUALITY`` returns ``max(0, x - lam)`` with the multiplier (any sign)
    chosen so the budget binds; this is the projection in the norm weighted
    by the info-state marginals.  ``KKT`` is the exact Euclidean projection
    onto ``{v >= 0, sum(w * v) <= budget}``.
    """

    EQUALITY = "equality"
    KKT = "kkt"


def water_level(x, weights, budget, scale=None):
    """Solve ``sum(w * max(0, x - lam * a)) = budget`` for ``lam``.

    ``x`` may carry leading batch dimensions; ``weights``, ``scale`` and the
    last axis of ``x`` must agree.  ``scale`` defaults to ones.  The left side
    is piecewise linear and non-increasing in ``lam``, so the root is found
    exactly by sorting the breakpoints ``x / a``.

    Returns
    -------
    lam : ndarray
        One multiplier per batch row.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    a = np.ones_like(w) if scale is None else np.asarray(scale, dtype=float)
    budget = np.asarray(budget, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("projection input must be finite")
    if np.any(budget < 0):
        raise ValueError("budget must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(a > 0, x / np.where(a > 0, a, 1.0), np.inf)
    order = np.argsort(-t, axis=-1, kind="stable")
    ts = np.take_along_axis(t, order, axis=-1)
    wx = np.take_along_axis(np.broadcast_to(w, x.shape) * x, order, axis=-1)
    wa = np.take_along_axis(np.broadcast_to(w * a, x.shape), order, axis=-1)
    s1 = np.cumsum(wx, axis=-1)
    s2 = np.cumsum(wa, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = (s1 - budget[..., None]) / s2
    nxt = np.concatenate([ts[..., 1:], np.full(ts.shape[:-1] + (1,), -np.inf)], axis=-1)
    ok = (s2 > 0) & (lam >= nxt)
    k = np.argmax(ok, axis=-1)
    if not np.all(np.take_along_axis(ok, k[..., None], axis=-1)):
        raise ArithmeticError("water level not bracketed; check weights")
    return np.take_along_axis(lam, k[..., None], axis=-1)[..., 0]


def shift_project(x, weights, budget):
    """Budget-binding projection ``max(0, x - lam)``; returns ``(v, lam)``."""
    lam = water_level(x, weights, budget)
    return np.maximum(0.0, x - lam[..., None]), lam


def kkt_project(x, weights, budget):
    """Euclidean projection onto ``{v >= 0, sum(w v) <= budget}``; returns ``(v, lam)``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    budget = np.asarray(budget, dtype=float)
    clipped = np.maximum(0.0, x)
    spent = clipped @ w
    lam = np.where(spent <= budget, 0.0, water_level(x, w, budget, scale=w))
    lam = np.maximum(lam, 0.0)
    return np.maximum(0.0, x - lam[..., None] * w), lam


@dataclass
class PowerPolicy:
    """Powers of one user, one entry per information state."""

    user: int
    variant: Variant
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.variant = Variant.parse(self.variant)


def expected_power(policy, indexer: InfoIndexer) -> float:
    values = policy.values if isinstance(policy, PowerPolicy) else np.asarray(policy)
    user = policy.user if isinstance(policy, PowerPolicy) else 0
    marg = indexer.marginals[user]
    if values.shape[-1] != marg.size:
        raise ValueError(f"policy has {values.shape[-1]} entries but user {user} "
                         f"has {marg.size} info states")
    return float(values @ marg)


def project(point, indexer: InfoIndexer, budget: float, mode=ProjectionMode.EQUALITY,
            user: int = 0) -> PowerPolicy:
    """Project ``point`` onto user ``user``'s feasible set."""
    mode = ProjectionMode(mode)
    x = np.asarray(point, dtype=float)
    marg = indexer.marginals[user]
    if x.shape != marg.shape:
        raise ValueError(f"point has shape {x.shape}, expected {marg.shape}")
    if mode is ProjectionMode.EQUALITY:
        v, _ = shift_project(x, marg, budget)
    else:
        v, _ = kkt_project(x, marg, budget)
    return PowerPolicy(user, indexer.variant, v)


def water_fill(base, indexer: InfoIndexer, budget: float, user: int = 0) -> PowerPolicy:
    """Water-filling ``max(0, lam + f)`` on a base vector ``f`` of negative
    inverse SINR terms, with the water level ``lam`` exhausting the budget."""
    f = np.asarray(base, dtype=float)
    powers, _ = water_fill_level(f, indexer.marginals[user], budget)
    return PowerPolicy(user, indexer.variant, powers)


def water_fill_level(base, weights, budget):
    """Array form of :func:`water_fill`; returns ``(powers, water_level)``."""
    v, lam = shift_project(base, weights, budget)
    return v, -lam


class PolicyProfile:
    """Stacked policies of all users for one information structure."""

    def __init__(self, model: ChannelModel, indexer: InfoIndexer, values):
        if len(values) != model.n_users:
            raise ValueError("need one policy per user")
        self.model = model
        self.indexer = indexer
        self.values = [np.array(v, dtype=float) for v in values]
        for i, v in enumerate(self.values):
            if v.shape != (indexer.size(i),):
                raise ValueError(f"user {i}: expected {indexer.size(i)} entries, got {v.shape}")

    @classmethod
    def from_vector(cls, model, indexer, vec):
        vec = np.asarray(vec, dtype=float)
        cuts = np.cumsum([0] + indexer.sizes())
        return cls(model, indexer, [vec[cuts[i]:cuts[i + 1]] for i in range(model.n_users)])

    @classmethod
    def uniform(cls, model, indexer, budgets=None):
        budgets = model.budgets if budgets is None else budgets
        return cls(model, indexer, [np.full(indexer.size(i), float(budgets[i]))
                                    for i in range(model.n_users)])

    @property
    def variant(self) -> Variant:
        return self.indexer.variant

    @property
    def n_users(self) -> int:
        return self.model.n_users

    def policy(self, i: int) -> PowerPolicy:
        return PowerPolicy(i, self.variant, self.values[i])

    def as_vector(self) -> np.ndarray:
        return np.concatenate(self.values)

    def copy(self) -> "PolicyProfile":
        return PolicyProfile(self.model, self.indexer, self.values)

    def replace(self, i: int, values) -> "PolicyProfile":
        vals = list(self.values)
        vals[i] = np.asarray(values, dtype=float)
        return PolicyProfile(self.model, self.indexer, vals)

    def expected_powers(self) -> np.ndarray:
        return np.array([v @ m for v, m in zip(self.values, self.indexer.marginals)])

    def is_feasible(self, slack: float = BUDGET_SLACK) -> bool:
        return all(np.all(v >= 0) for v in self.values) and bool(
            np.all(self.expected_powers() <= self.model.budgets + slack))

    def lifted(self) -> "PolicyProfile":
        """The same profile written as a full-information policy."""
        full = build_indexer(self.model, Variant.FULL)
        return PolicyProfile(self.model, full,
                             [self.indexer.lift(i, v) for i, v in enumerate(self.values)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["user", "info_state_index", "power"])
        for i, v in enumerate(self.values):
            for s, p in enumerate(v):
                w.writerow([i, s, repr(float(p))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, model, indexer, text: str) -> "PolicyProfile":
        vals = [np.full(indexer.size(i), np.nan) for i in range(model.n_users)]
        for row in csv.DictReader(io.StringIO(text)):
            vals[int(row["user"])][int(row["info_state_index"])] = float(row["power"])
        if any(np.isnan(v).any() for v in vals):
            raise ValueError("policy CSV is missing entries")
        return cls(model, indexer, vals)


def interference_full(model: ChannelModel, values) -> np.ndarray:
    """``1 + sum_{j != i} |h_ij|^2 P_j(h)`` for every user and joint state.

    ``values`` has shape ``(..., N, S)`` over joint states.
    """
    g = model.states.gains
    p = np.asarray(values, dtype=float)
    # sum_j g[s, i, j] p[j, s], then drop the diagonal term
    total = np.einsum("sij,...js->...is", g, p)
    diag = np.einsum("sii->is", g)
    return 1.0 + total - diag * p


def best_response_full(profile: PolicyProfile, i: int) -> PowerPolicy:
    """Water-filling best response of user ``i`` in the full-information game."""
    if profile.variant is not Variant.FULL:
        raise ValueError("best_response_full needs a full-information profile")
    model = profile.model
    noise = interference_full(model, np.stack(profile.values))[i]
    f = -noise / model.states.gains[:, i, i]
    return water_fill(f, profile.indexer, model.budgets[i], user=i)


def random_feasible(model, indexer, rng, low=0.0, high=2.0):
    """Entries uniform on ``[low, high] * budget`` then shifted onto the budget."""
    vals = []
    for i in range(model.n_users):
        x = rng.uniform(low, high, indexer.size(i)) * model.budgets[i]
        v, _ = shift_project(x, indexer.marginals[i], model.budgets[i])
        vals.append(v)
    return PolicyProfile(model, indexer, vals)
