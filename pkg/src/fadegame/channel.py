"""Finite-state fading interference channel.

Gains are stored as power gains ``|h_ij|^2``.  Row ``i`` of a gain matrix
holds the links terminating at receiver ``i`` (entry ``(i, j)`` is the gain
from transmitter ``j`` to receiver ``i``).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DEFAULT_STATE_CAP = 1_000_000
PROB_TOL = 1e-12


class Variant(str, enum.Enum):
    """Information structure available to each transmitter."""

    FULL = "full"
    INCIDENT = "incident"
    DIRECT = "direct"

    @classmethod
    def parse(cls, value: "Variant | str") -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown variant {value!r}; expected one of "
                             f"{[v.value for v in cls]}") from None


class EnumerationTooLarge(ValueError):
    """Raised when a cartesian enumeration would exceed its cap."""


@dataclass(frozen=True)
class Link:
    support: np.ndarray
    probs: np.ndarray


def _as_link(support, probs, name: str, *, strictly_positive: bool) -> Link:
    s = np.asarray(support, dtype=float).ravel()
    p = np.asarray(probs, dtype=float).ravel()
    if s.size == 0 or s.size != p.size:
        raise ValueError(f"{name}: support and probabilities must be nonempty "
                         f"and of equal length")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(p))):
        raise ValueError(f"{name}: non-finite entry")
    if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{name}: probabilities must be nonnegative and sum "
                         f"to 1 (got sum {p.sum()!r})")
    if strictly_positive and np.any(s <= 0):
        raise ValueError(f"{name}: direct gains must be strictly positive")
    if np.any(s < 0):
        raise ValueError(f"{name}: gains must be nonnegative")
    if np.unique(s).size != s.size:
        raise ValueError(f"{name}: support values must be distinct")
    s.setflags(write=False)
    p.setflags(write=False)
    return Link(s, p)


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """N-pair interference channel with independent finite-support links.

    Parameters
    ----------
    direct_support, direct_probs
        Per-user lists: support of ``|h_ii|^2`` and its distribution.
    cross_support, cross_probs
        ``N x N`` nested lists; entry ``[i][j]`` (``i != j``) is the support
        of ``|h_ij|^2``.  Diagonal entries are ignored.
    budgets
        Average power limits (noise power normalized to 1).
    alpha
        Modulation constants, default all ones.
    """

    direct_support: tuple
    direct_probs: tuple
    cross_support: tuple
    cross_probs: tuple
    budgets: np.ndarray
    alpha: np.ndarray = None
    state_cap: int = DEFAULT_STATE_CAP
    links: tuple = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.direct_support)
        if n < 1:
            raise ValueError("need at least one user")
        if len(self.direct_probs) != n:
            raise ValueError("direct_probs must have one entry per user")
        budgets = np.asarray(self.budgets, dtype=float).ravel()
        if budgets.size == 1 and n > 1:
            budgets = np.full(n, budgets[0])
        if budgets.size != n or np.any(~np.isfinite(budgets)) or np.any(budgets <= 0):
            raise ValueError("budgets must be N strictly positive numbers")
        alpha = np.ones(n) if self.alpha is None else np.asarray(self.alpha, float).ravel()
        if alpha.size == 1 and n > 1:
            alpha = np.full(n, alpha[0])
        if alpha.size != n or np.any(alpha <= 0):
            raise ValueError("alpha must be N strictly positive numbers")
        budgets.setflags(write=False)
        alpha.setflags(write=False)
        object.__setattr__(self, "budgets", budgets)
        object.__setattr__(self, "alpha", alpha)

        if n > 1 and (len(self.cross_support) != n or len(self.cross_probs) != n):
            raise ValueError("cross_support/cross_probs must be N x N")
        links = []
        for i in range(n):
            row = []
            for j in range(n):
                if i == j:
                    row.append(_as_link(self.direct_support[i], self.direct_probs[i],
                                        f"direct[{i}]", strictly_positive=True))
                else:
                    row.append(_as_link(self.cross_support[i][j], self.cross_probs[i][j],
                                        f"cross[{i}][{j}]", strictly_positive=False))
            links.append(tuple(row))
        object.__setattr__(self, "links", tuple(links))

    @classmethod
    def symmetric(cls, n_users: int, direct, cross, budgets, *, direct_probs=None,
                  cross_probs=None, **kwargs) -> "ChannelModel":
        """Model where every direct link shares one law and every cross link another."""
        direct = list(direct)
        cross = list(cross)
        dp = list(direct_probs) if direct_probs is not None else [1 / len(direct)] * len(direct)
        cp = list(cross_probs) if cross_probs is not None else [1 / len(cross)] * len(cross)
        return cls(
            direct_support=tuple(direct for _ in range(n_users)),
            direct_probs=tuple(dp for _ in range(n_users)),
            cross_support=tuple(tuple(cross for _ in range(n_users)) for _ in range(n_users)),
            cross_probs=tuple(tuple(cp for _ in range(n_users)) for _ in range(n_users)),
            budgets=budgets,
            **kwargs,
        )

    def with_budgets(self, budgets) -> "ChannelModel":
        return ChannelModel(self.direct_support, self.direct_probs, self.cross_support,
                            self.cross_probs, budgets, self.alpha, self.state_cap)

    @property
    def n_users(self) -> int:
        return len(self.links)

    def link(self, i: int, j: int) -> Link:
        return self.links[i][j]

    def n_states(self) -> int:
        count = 1
        for row in self.links:
            for lk in row:
                count *= lk.support.size
        return count

    def mean_gain(self, i: int, j: int) -> float:
        lk = self.links[i][j]
        return float(lk.support @ lk.probs)

    @cached_property
    def states(self) -> "StateSpace":
        return enumerate_states(self)


@dataclass(frozen=True)
class JointState:
    gains: np.ndarray
    prob: float


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Materialized enumeration of joint channel states.

    ``gains[k]`` is the N x N gain matrix of state ``k``, ``link_index[k]``
    the per-link support indices and ``prob[k]`` its probability.
    """

    gains: np.ndarray
    link_index: np.ndarray
    prob: np.ndarray

    def __len__(self) -> int:
        return self.prob.size

    def __getitem__(self, k: int) -> JointState:
        return JointState(self.gains[k], float(self.prob[k]))

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]


def enumerate_states(model: ChannelModel, cap: int | None = None) -> StateSpace:
    """Cartesian product over every link support, row-major over ``(i, j)``."""
    cap = model.state_cap if cap is None else cap
    count = model.n_states()
    if count > cap:
        raise EnumerationTooLarge(f"joint state enumeration has {count} states, "
                                  f"exceeding the cap of {cap}")
    n = model.n_users
    flat = [model.links[i][j] for i in range(n) for j in range(n)]
    idx = np.array(list(itertools.product(*[range(lk.support.size) for lk in flat])),
                   dtype=np.intp).reshape(count, n * n)
    gains = np.empty((count, n * n))
    prob = np.ones(count)
    for col, lk in enumerate(flat):
        gains[:, col] = lk.support[idx[:, col]]
        prob *= lk.probs[idx[:, col]]
    gains = gains.reshape(count, n, n)
    idx = idx.reshape(count, n, n)
    for arr in (gains, idx, prob):
        arr.setflags(write=False)
    return StateSpace(gains, idx, prob)


@dataclass(frozen=True, eq=False)
class InfoIndexer:
    """Per-user map from joint-state index to information-state index.

    ``maps[i][k]`` is user ``i``'s info state in joint state ``k``;
    ``marginals[i]`` is the distribution of user ``i``'s info state;
    ``own_gain[i][s]`` is ``|h_ii|^2`` in info state ``s``.
    """

    variant: Variant
    maps: tuple
    marginals: tuple
    own_gain: tuple

    @property
    def n_users(self) -> int:
        return len(self.maps)

    def size(self, i: int) -> int:
        return self.marginals[i].size

    def sizes(self) -> list[int]:
        return [m.size for m in self.marginals]

    def lift(self, i: int, values: np.ndarray) -> np.ndarray:
        """Expand a policy over info states to one over joint states."""
        return np.asarray(values)[..., self.maps[i]]


def incident_shape(model: ChannelModel, i: int) -> tuple[int, ...]:
    return tuple(model.links[i][j].support.size for j in range(model.n_users))


def build_indexer(model: ChannelModel, variant: Variant | str) -> InfoIndexer:
    variant = Variant.parse(variant)
    space = model.states
    n = model.n_users
    maps, marginals, own = [], [], []
    for i in range(n):
        if variant is Variant.FULL:
            m = np.arange(len(space), dtype=np.intp)
            size = len(space)
            g = space.gains[:, i, i].copy()
        elif variant is Variant.INCIDENT:
            shape = incident_shape(model, i)
            m = np.ravel_multi_index(tuple(space.link_index[:, i, j] for j in range(n)), shape)
            size = int(np.prod(shape))
            direct_idx = np.unravel_index(np.arange(size), shape)[i]
            g = model.links[i][i].support[direct_idx]
        else:
            m = space.link_index[:, i, i].astype(np.intp)
            size = model.links[i][i].support.size
            g = model.links[i][i].support.copy()
        marg = np.bincount(m, weights=space.prob, minlength=size)
        for arr in (m, marg, g):
            arr.setflags(write=False)
        maps.append(m)
        marginals.append(marg)
        own.append(g)
    return InfoIndexer(variant, tuple(maps), tuple(marginals), tuple(own))
