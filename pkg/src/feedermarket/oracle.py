"""Single-price equilibrium by bisection on aggregate excess supply.

Best responses are piecewise linear and monotone in the price, so excess
supply is nondecreasing and a sign change inside ``[0, max omega]`` pins the
clearing price. Used as ground truth for the dual-ascent engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .econ import OneSidedMarket, Participant

__all__ = ["EquilibriumResult", "OneSidedMarket", "aggregate_excess", "bisect_equilibrium"]


@dataclass(frozen=True)
class EquilibriumResult:
    price: float
    traded: float
    residual: float  # excess supply at ``price``
    bracket_width: float


def aggregate_excess(
    sellers: Sequence[Participant],
    buyers: Sequence[Participant],
    lam: float,
    coupled: bool = True,
) -> float:
    supply = sum(p.respond(lam, coupled) for p in sellers)
    demand = sum(p.respond(lam, coupled) for p in buyers)
    return supply - demand


def bisect_equilibrium(
    sellers: Sequence[Participant],
    buyers: Sequence[Participant],
    tol_price: float = 1e-10,
    coupled: bool = True,
) -> EquilibriumResult:
    """Bisect the excess-supply curve on ``[0, max omega]``.

    Returns price 0 when supply already covers demand at zero price. On a
    flat zero segment the lowest clearing price is approached, which is also
    where dual ascent started from zero comes to rest.
    """
    if not sellers or not buyers:
        raise OneSidedMarket(
            f"need sellers and buyers (got {len(sellers)} sellers, {len(buyers)} buyers)"
        )
    if tol_price <= 0:
        raise ValueError("tol_price must be > 0")

    def excess(lam: float) -> float:
        return aggregate_excess(sellers, buyers, lam, coupled)

    lo, hi = 0.0, max(b.player.omega for b in buyers)
    if excess(lo) >= 0:
        price, width = 0.0, 0.0
    else:
        while hi - lo > tol_price:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if excess(mid) < 0:
                lo = mid
            else:
                hi = mid
        price, width = 0.5 * (lo + hi), hi - lo

    supply = sum(p.respond(price, coupled) for p in sellers)
    demand = sum(p.respond(price, coupled) for p in buyers)
    return EquilibriumResult(
        price=price, traded=min(supply, demand), residual=supply - demand, bracket_width=width
    )
