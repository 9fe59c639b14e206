"""Expected rates, their gradients and the Jensen lower bounds.

Every expectation is an exact enumeration.  For user ``i`` a
:class:`RateTable` lists the configurations that matter to its rate: the
own info state, own direct gain, the cross gains into receiver ``i`` and the
info state each interferer is in.  The three games differ only in how that
table is built.
"""

from __future__ import annotations

import contextlib
import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .channel import ChannelModel, EnumerationTooLarge, InfoIndexer, Variant, incident_shape
from .policy import PolicyProfile, PowerPolicy, water_fill

_LOG_BASE = math.e


def get_log_base() -> float:
    return _LOG_BASE


def set_log_base(base) -> None:
    """Switch the unit of every reported rate (``"e"`` or ``2``)."""
    global _LOG_BASE
    _LOG_BASE = parse_log_base(base)


def parse_log_base(base) -> float:
    if base in ("e", "E", None):
        return math.e
    b = float(base)
    if b <= 1:
        raise ValueError("log base must exceed 1")
    return b


@contextlib.contextmanager
def log_base(base):
    old = _LOG_BASE
    set_log_base(base)
    try:
        yield
    finally:
        set_log_base(old)


def _unit() -> float:
    return math.log(_LOG_BASE)


@dataclass(frozen=True, eq=False)
class RateTable:
    """Configurations relevant to one user's expected rate."""

    user: int
    n_own: int
    weight: np.ndarray
    own: np.ndarray
    gain: np.ndarray
    opponents: tuple
    cross: np.ndarray
    opp_state: np.ndarray

    def noise(self, values) -> np.ndarray:
        """``1 + interference`` per configuration; ``values[j]`` may be batched."""
        out = np.ones(self.weight.size)
        for m, j in enumerate(self.opponents):
            out = out + self.cross[:, m] * np.asarray(values[j])[..., self.opp_state[:, m]]
        return out

    def rate(self, values) -> np.ndarray:
        own = np.asarray(values[self.user])[..., self.own]
        return np.log1p(self.gain * own / self.noise(values)) @ self.weight / _unit()

    @cached_property
    def scatter(self) -> np.ndarray:
        m = np.zeros((self.weight.size, self.n_own))
        m[np.arange(self.weight.size), self.own] = 1.0
        return m

    def grad(self, values) -> np.ndarray:
        own = np.asarray(values[self.user])[..., self.own]
        d = self.weight * self.gain / (self.noise(values) + self.gain * own) / _unit()
        if d.ndim == 1:
            return np.bincount(self.own, weights=d, minlength=self.n_own)
        return d @ self.scatter

    def cross_grad(self, values, j: int) -> np.ndarray:
        """Partial derivatives of this rate in opponent ``j``'s powers."""
        m = self.opponents.index(j)
        own = np.asarray(values[self.user])[self.own]
        noise = self.noise(values)
        s = self.gain * own
        d = -self.weight * s * self.cross[:, m] / (noise * (noise + s)) / _unit()
        return np.bincount(self.opp_state[:, m], weights=d, minlength=len(values[j]))

    def jacobian(self, values) -> tuple[float, dict]:
        """The rate and its partials in every user's powers, sharing one noise pass."""
        own = np.asarray(values[self.user])[self.own]
        noise = self.noise(values)
        s = self.gain * own
        z = noise + s
        unit = _unit()
        r = float(np.log(z / noise) @ self.weight) / unit
        parts = {self.user: np.bincount(self.own, weights=self.weight * self.gain / z / unit,
                                        minlength=self.n_own)}
        common = -self.weight * s / (noise * z) / unit
        for m, j in enumerate(self.opponents):
            parts[j] = np.bincount(self.opp_state[:, m], weights=common * self.cross[:, m],
                                   minlength=len(values[j]))
        return r, parts

    def curvature(self, values) -> np.ndarray:
        """Diagonal of the Hessian of the rate in the user's own powers."""
        own = np.asarray(values[self.user])[..., self.own]
        z = self.noise(values) + self.gain * own
        d = -self.weight * (self.gain / z) ** 2 / _unit()
        return np.bincount(self.own, weights=d, minlength=self.n_own)


def _check_cap(model: ChannelModel, count: int):
    if count > model.state_cap:
        raise EnumerationTooLarge(f"rate enumeration has {count} configurations, "
                                  f"exceeding the cap of {model.state_cap}")


def _full_table(model: ChannelModel, i: int) -> RateTable:
    space = model.states
    opp = tuple(j for j in range(model.n_users) if j != i)
    k = np.arange(len(space), dtype=np.intp)
    cross = space.gains[:, i, list(opp)] if opp else np.zeros((len(space), 0))
    return RateTable(i, len(space), space.prob.copy(), k,
                     model.alpha[i] * space.gains[:, i, i], opp, cross,
                     np.tile(k[:, None], (1, len(opp))))


def _incident_laws(model: ChannelModel, u: int):
    """Support tuples and probabilities of user ``u``'s incident row."""
    shape = incident_shape(model, u)
    digits = np.array(list(itertools.product(*[range(s) for s in shape])),
                      dtype=np.intp).reshape(-1, len(shape))
    prob = np.ones(len(digits))
    gains = np.empty(digits.shape)
    for j in range(model.n_users):
        lk = model.links[u][j]
        prob *= lk.probs[digits[:, j]]
        gains[:, j] = lk.support[digits[:, j]]
    return gains, prob


def _incident_table(model: ChannelModel, i: int) -> RateTable:
    n = model.n_users
    laws = [_incident_laws(model, u) for u in range(n)]
    sizes = [len(p) for _, p in laws]
    count = int(np.prod(sizes))
    _check_cap(model, count)
    combo = np.array(list(itertools.product(*[range(s) for s in sizes])),
                     dtype=np.intp).reshape(count, n)
    weight = np.ones(count)
    for u in range(n):
        weight *= laws[u][1][combo[:, u]]
    opp = tuple(j for j in range(n) if j != i)
    row = laws[i][0][combo[:, i]]
    return RateTable(i, sizes[i], weight, combo[:, i].copy(), model.alpha[i] * row[:, i], opp,
                     row[:, list(opp)] if opp else np.zeros((count, 0)),
                     combo[:, list(opp)] if opp else np.zeros((count, 0), dtype=np.intp))


def _direct_table(model: ChannelModel, i: int) -> RateTable:
    n = model.n_users
    opp = tuple(j for j in range(n) if j != i)
    axes = [model.links[i][i]]
    for j in opp:
        axes += [model.links[i][j], model.links[j][j]]
    count = int(np.prod([lk.support.size for lk in axes]))
    _check_cap(model, count)
    combo = np.array(list(itertools.product(*[range(lk.support.size) for lk in axes])),
                     dtype=np.intp).reshape(count, len(axes))
    weight = np.ones(count)
    for c, lk in enumerate(axes):
        weight *= lk.probs[combo[:, c]]
    cross = np.empty((count, len(opp)))
    opp_state = np.empty((count, len(opp)), dtype=np.intp)
    for m, j in enumerate(opp):
        cross[:, m] = model.links[i][j].support[combo[:, 1 + 2 * m]]
        opp_state[:, m] = combo[:, 2 + 2 * m]
    own = combo[:, 0].copy()
    return RateTable(i, model.links[i][i].support.size, weight, own,
                     model.alpha[i] * model.links[i][i].support[own], opp, cross, opp_state)


_BUILDERS = {Variant.FULL: _full_table, Variant.INCIDENT: _incident_table,
             Variant.DIRECT: _direct_table}


@lru_cache(maxsize=256)
def _tables_cached(model: ChannelModel, variant: Variant) -> tuple:
    return tuple(_BUILDERS[variant](model, i) for i in range(model.n_users))


def rate_tables(model: ChannelModel, variant) -> tuple:
    return _tables_cached(model, Variant.parse(variant))


def _expect(profile: PolicyProfile, variant: Variant):
    if profile.variant is not variant:
        raise ValueError(f"expected a {variant.value} profile, got {profile.variant.value}")


def rate_full(profile: PolicyProfile, i: int) -> float:
    _expect(profile, Variant.FULL)
    return float(rate_tables(profile.model, Variant.FULL)[i].rate(profile.values))


def rate_incident(profile: PolicyProfile, i: int) -> float:
    _expect(profile, Variant.INCIDENT)
    return float(rate_tables(profile.model, Variant.INCIDENT)[i].rate(profile.values))


def rate_direct(profile: PolicyProfile, i: int) -> float:
    _expect(profile, Variant.DIRECT)
    return float(rate_tables(profile.model, Variant.DIRECT)[i].rate(profile.values))


def rate(profile: PolicyProfile, i: int) -> float:
    return float(rate_tables(profile.model, profile.variant)[i].rate(profile.values))


def rates(profile: PolicyProfile) -> np.ndarray:
    tabs = rate_tables(profile.model, profile.variant)
    return np.array([float(t.rate(profile.values)) for t in tabs])


def grad_rate(profile: PolicyProfile, i: int) -> np.ndarray:
    """Partial derivatives of user ``i``'s rate in its own powers."""
    return rate_tables(profile.model, profile.variant)[i].grad(profile.values)


def partial_rate(profile: PolicyProfile, j: int, i: int) -> np.ndarray:
    """Partial derivatives of user ``j``'s rate in user ``i``'s powers."""
    tab = rate_tables(profile.model, profile.variant)[j]
    if i == j:
        return tab.grad(profile.values)
    return tab.cross_grad(profile.values, i)


@dataclass
class RateReport:
    rates: np.ndarray
    sum_rate: float = field(init=False)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.sum_rate = float(self.rates.sum())

    @classmethod
    def of(cls, profile: PolicyProfile) -> "RateReport":
        return cls(rates(profile))

    def csv_rows(self, game: str, snr_db: float) -> list[list]:
        return [[game, snr_db, i, float(r), self.sum_rate] for i, r in enumerate(self.rates)]

    def to_csv(self, game: str, snr_db: float) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["game", "snr_db", "user", "rate", "sum_rate"])
        w.writerows(self.csv_rows(game, snr_db))
        return buf.getvalue()


def effective_noise(model: ChannelModel, indexer: InfoIndexer, i: int) -> np.ndarray:
    """Per info state: ``1 + interference`` with opponents at their budgets.

    Incident uses the realized cross gains of the info state, direct their
    means.
    """
    variant = indexer.variant
    others = [j for j in range(model.n_users) if j != i]
    if variant is Variant.INCIDENT:
        shape = incident_shape(model, i)
        digits = np.unravel_index(np.arange(indexer.size(i)), shape)
        noise = np.ones(indexer.size(i))
        for j in others:
            noise += model.links[i][j].support[digits[j]] * model.budgets[j]
        return noise
    if variant is Variant.DIRECT:
        mean = 1.0 + sum(model.mean_gain(i, j) * model.budgets[j] for j in others)
        return np.full(indexer.size(i), mean)
    raise ValueError("lower bounds are defined for the incident and direct games only")


def lower_bound_rate(policy_i: PowerPolicy, model: ChannelModel, indexer: InfoIndexer) -> float:
    """Jensen bound on user ``i``'s rate that ignores the opponents' policies."""
    i = policy_i.user
    noise = effective_noise(model, indexer, i)
    g = model.alpha[i] * indexer.own_gain[i]
    return float(indexer.marginals[i] @ np.log1p(g * policy_i.values / noise) / _unit())


def lower_bound_maximizer(model: ChannelModel, i: int, indexer: InfoIndexer) -> PowerPolicy:
    noise = effective_noise(model, indexer, i)
    base = -noise / (model.alpha[i] * indexer.own_gain[i])
    return water_fill(base, indexer, model.budgets[i], user=i)
