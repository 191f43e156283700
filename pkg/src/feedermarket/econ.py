"""Player economics: saturating quadratic utility, quadratic generation cost,
surpluses and closed-form best responses to a posted price.

Every function here is pure; nothing is cached or mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Union


class DomainError(ValueError):
    """Raised when an economic function is called outside its domain."""


class OneSidedMarket(ValueError):
    """A clearing was requested with no sellers or no buyers."""


@dataclass(frozen=True)
class ConsumerParams:
    """Buyer with utility ``omega*d - mu*d**2`` saturating at ``omega/(2*mu)``."""

    id: str
    area_id: int
    omega: float
    mu: float
    d_min: float = 0.0
    d_max: float = float("inf")

    @property
    def knee(self) -> float:
        return self.omega / (2.0 * self.mu)

    def validate(self) -> None:
        if not self.mu > 0:
            raise DomainError(f"consumer {self.id}: mu must be > 0 (got {self.mu})")
        if not self.omega > 0:
            raise DomainError(f"consumer {self.id}: omega must be > 0 (got {self.omega})")
        if not 0 <= self.d_min <= self.d_max:
            raise DomainError(
                f"consumer {self.id}: need 0 <= d_min <= d_max (got {self.d_min}, {self.d_max})"
            )


@dataclass(frozen=True)
class ProsumerParams:
    """Seller with generation cost ``a*s**2 + b*s + gamma``."""

    id: str
    area_id: int
    a: float
    b: float
    gamma: float = 0.0
    s_min: float = 0.0
    s_max: float = float("inf")

    def validate(self) -> None:
        if not self.a > 0:
            raise DomainError(f"prosumer {self.id}: a must be > 0 (got {self.a})")
        if not self.b >= 0:
            raise DomainError(f"prosumer {self.id}: b must be >= 0 (got {self.b})")
        if not self.gamma >= 0:
            raise DomainError(f"prosumer {self.id}: gamma must be >= 0 (got {self.gamma})")
        if not 0 <= self.s_min <= self.s_max:
            raise DomainError(
                f"prosumer {self.id}: need 0 <= s_min <= s_max (got {self.s_min}, {self.s_max})"
            )


Player = Union[ConsumerParams, ProsumerParams]


@dataclass(frozen=True)
class PlayerAllocation:
    """Quantity a player trades in the intra-area and inter-area markets."""

    player_id: str
    q_intra: float
    q_inter: float = 0.0

    @property
    def q_total(self) -> float:
        return self.q_intra + self.q_inter


def _check_nonneg(name: str, x: float) -> None:
    if x < 0:
        raise DomainError(f"{name} must be >= 0 (got {x})")


def utility_value(c: ConsumerParams, d: float) -> float:
    _check_nonneg("demand", d)
    if d >= c.knee:
        return c.omega * c.omega / (4.0 * c.mu)
    return c.omega * d - c.mu * d * d


def cost_value(p: ProsumerParams, s: float) -> float:
    _check_nonneg("supply", s)
    return p.a * s * s + p.b * s + p.gamma


def consumer_surplus(c: ConsumerParams, d: float, lam: float) -> float:
    _check_nonneg("price", lam)
    return utility_value(c, d) - lam * d


def prosumer_surplus(p: ProsumerParams, s: float, lam: float) -> float:
    _check_nonneg("price", lam)
    return lam * s - cost_value(p, s)


def _clamp(x: float, lo: float, hi: float) -> float:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def consumer_best_response(
    c: ConsumerParams, lam: float, committed: float = 0.0, lo: float = 0.0, hi: float | None = None
) -> float:
    """Incremental demand maximizing ``U(committed + q) - lam*q`` on ``[lo, hi]``.

    ``hi`` defaults to ``d_max - committed``. At ``lam == 0`` the whole ray
    beyond the knee is optimal; the clamp of the knee is returned.
    """
    if hi is None:
        hi = c.d_max - committed
    if hi < lo:
        raise DomainError(f"consumer {c.id}: empty response interval [{lo}, {hi}]")
    return _clamp((c.omega - lam) / (2.0 * c.mu) - committed, lo, hi)


def prosumer_best_response(
    p: ProsumerParams, lam: float, committed: float = 0.0, lo: float = 0.0, hi: float | None = None
) -> float:
    """Incremental supply maximizing ``lam*q - (C(committed + q) - C(committed))``."""
    if hi is None:
        hi = p.s_max - committed
    if hi < lo:
        raise DomainError(f"prosumer {p.id}: empty response interval [{lo}, {hi}]")
    return _clamp((lam - p.b) / (2.0 * p.a) - committed, lo, hi)


def residual_capacity(cap: float, committed: float) -> float:
    """Largest ``q >= 0`` with ``committed + q <= cap`` holding in floating point."""
    hi = max(0.0, cap - committed)
    while hi > 0 and committed + hi > cap:
        hi = math.nextafter(hi, 0.0)
    return hi


def consumer_marginal(c: ConsumerParams, d: float) -> float:
    return c.omega - 2.0 * c.mu * d


def prosumer_marginal(p: ProsumerParams, s: float) -> float:
    return p.b + 2.0 * p.a * s


def social_welfare(
    consumers: Iterable[tuple[ConsumerParams, float]],
    prosumers: Iterable[tuple[ProsumerParams, float]],
    tol: float = 1e-9,
) -> float:
    """Total utility minus total cost for ``(params, total quantity)`` pairs.

    Quantities outside a player's ``[min, max]`` by more than ``tol`` raise.
    """
    total = 0.0
    for c, d in consumers:
        if d < c.d_min - tol or d > c.d_max + tol:
            raise DomainError(f"consumer {c.id}: demand {d} outside [{c.d_min}, {c.d_max}]")
        total += utility_value(c, max(d, 0.0))
    for p, s in prosumers:
        if s < p.s_min - tol or s > p.s_max + tol:
            raise DomainError(f"prosumer {p.id}: supply {s} outside [{p.s_min}, {p.s_max}]")
        total -= cost_value(p, max(s, 0.0))
    return total


@dataclass(frozen=True)
class Participant:
    """A player entering one clearing, with its prior commitment and bounds
    on the quantity it may add in this clearing."""

    player: Player
    committed: float = 0.0
    lo: float = 0.0
    hi: float = float("inf")

    @property
    def id(self) -> str:
        return self.player.id

    @property
    def is_seller(self) -> bool:
        return isinstance(self.player, ProsumerParams)

    def respond(self, lam: float, coupled: bool = True) -> float:
        committed = self.committed if coupled else 0.0
        if self.is_seller:
            return prosumer_best_response(self.player, lam, committed, self.lo, self.hi)
        return consumer_best_response(self.player, lam, committed, self.lo, self.hi)
