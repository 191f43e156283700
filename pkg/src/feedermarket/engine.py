"""Dual-ascent market clearing.

A clearing posts a price, collects best responses, and moves the price by
``eta * (demand - supply)`` (projected to be nonnegative) until two
successive prices agree within ``epsilon``. The two-step procedure clears
every area on its own, then lets sellers of cheaper areas serve buyers of
the dearest area in a synthetic cross-area market labelled ``"C"``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Sequence, Union

from .econ import (
    ConsumerParams,
    DomainError,
    OneSidedMarket,
    Participant,
    PlayerAllocation,
    ProsumerParams,
    consumer_marginal,
    prosumer_marginal,
    residual_capacity,
    social_welfare,
)

if TYPE_CHECKING:
    from .scenario import Scenario

INTER_AREA = "C"
SINGLE_MARKET = "T"

STEP2_SELECTIONS = ("paper_rule", "all_residual")
STEP2_RESPONSES = ("coupled", "literal")


@dataclass(frozen=True)
class SolverConfig:
    """Dual-ascent settings shared by every clearing of a run.

    ``eta`` is either ``"auto"`` (see :func:`default_step_size`) or a fixed
    positive step size.
    """

    eta: Union[str, float] = "auto"
    epsilon: float = 1e-8
    max_iters: int = 10_000
    lambda_init: float = 0.0
    step2_selection: str = "paper_rule"
    step2_response: str = "coupled"

    def validate(self) -> None:
        if self.eta != "auto":
            if isinstance(self.eta, bool) or not isinstance(self.eta, (int, float)) or not self.eta > 0:
                raise DomainError(f"eta must be 'auto' or a positive number (got {self.eta!r})")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0 (got {self.epsilon})")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise DomainError(f"max_iters must be an integer >= 1 (got {self.max_iters})")
        if not self.lambda_init >= 0:
            raise DomainError(f"lambda_init must be >= 0 (got {self.lambda_init})")
        if self.step2_selection not in STEP2_SELECTIONS:
            raise DomainError(f"step2_selection must be one of {STEP2_SELECTIONS}")
        if self.step2_response not in STEP2_RESPONSES:
            raise DomainError(f"step2_response must be one of {STEP2_RESPONSES}")

    @property
    def coupled(self) -> bool:
        return self.step2_response == "coupled"


@dataclass(frozen=True)
class TrajectoryPoint:
    iteration: int
    lam: float
    supply: float
    demand: float


@dataclass
class ClearingOutcome:
    """Result of one clearing.

    ``price`` is the last price broadcast to players and ``supply``/``demand``
    hold their responses to it. ``final_step`` is the size of the update that
    was computed after the last round; convergence means it is within
    ``epsilon``.
    """

    label: Union[int, str]
    price: float
    supply: dict[str, float]
    demand: dict[str, float]
    trajectory: list[TrajectoryPoint]
    iterations: int
    converged: bool
    eta: float
    final_step: float
    wall_time: float = 0.0
    one_sided: bool = False

    @property
    def total_supply(self) -> float:
        return sum(self.supply.values())

    @property
    def total_demand(self) -> float:
        return sum(self.demand.values())

    def comparable(self) -> tuple:
        """Everything except wall time, for determinism checks."""
        return (
            self.label,
            self.price,
            tuple(self.supply.items()),
            tuple(self.demand.items()),
            tuple(self.trajectory),
            self.iterations,
            self.converged,
            self.eta,
            self.final_step,
            self.one_sided,
        )


@dataclass
class MarketResult:
    """Composed allocations and welfare of a 1SMC or 2SMC run."""

    mode: str
    area_outcomes: dict[int, ClearingOutcome]
    inter_outcome: ClearingOutcome | None
    step2_invited: tuple[str, ...]
    allocations: dict[str, PlayerAllocation]
    welfare: float
    step1_welfare: float
    traded_energy: float
    step1_traded_energy: float
    timing: dict[str, float] = field(default_factory=dict)

    @property
    def clearings(self) -> list[ClearingOutcome]:
        out = list(self.area_outcomes.values())
        if self.inter_outcome is not None:
            out.append(self.inter_outcome)
        return out

    @property
    def converged(self) -> bool:
        return all(o.converged for o in self.clearings)

    @property
    def composed_time(self) -> float:
        return self.timing.get("composed", 0.0)

    def comparable(self) -> tuple:
        return (
            self.mode,
            tuple(o.comparable() for o in self.clearings),
            tuple(self.allocations.items()),
            self.welfare,
            self.step1_welfare,
            self.traded_energy,
        )


# The two-step result is the general form; a single-market run fills only
# ``area_outcomes`` with the one clearing labelled "T".
TwoStepOutcome = MarketResult


def price_update(lam: float, eta: float, agg_supply: float, agg_demand: float) -> float:
    """Projected dual-ascent step: raise the price when demand exceeds supply."""
    if not eta > 0:
        raise DomainError(f"eta must be > 0 (got {eta})")
    return max(0.0, lam + eta * (agg_demand - agg_supply))


def default_step_size(participants: Sequence[Participant]) -> float:
    """Reciprocal of the largest possible slope of aggregate excess supply.

    Each buyer contributes at most ``1/(2 mu)`` and each seller ``1/(2 a)``
    per unit of price, so with this step the price map is monotone and
    nonexpansive and iterates started below the clearing price never
    overshoot it.
    """
    if not participants:
        raise DomainError("default_step_size needs at least one participant")
    slope = 0.0
    for p in participants:
        if p.is_seller:
            slope += 1.0 / (2.0 * p.player.a)
        else:
            slope += 1.0 / (2.0 * p.player.mu)
    return 1.0 / slope


def resolve_step_size(cfg: SolverConfig, participants: Sequence[Participant]) -> float:
    if cfg.eta == "auto":
        return default_step_size(participants)
    return float(cfg.eta)


def clear_market(
    sellers: Sequence[Participant],
    buyers: Sequence[Participant],
    cfg: SolverConfig,
    coupled: bool = True,
    label: Union[int, str] = 0,
) -> ClearingOutcome:
    """Run the price loop for one market until successive prices agree.

    Players respond in the given order, so aggregates and the whole
    trajectory are reproducible bit for bit.
    """
    if not sellers or not buyers:
        raise OneSidedMarket(
            f"market {label!r} is one-sided ({len(sellers)} sellers, {len(buyers)} buyers)"
        )
    eta = resolve_step_size(cfg, list(sellers) + list(buyers))
    start = time.perf_counter()

    lam = cfg.lambda_init
    trajectory: list[TrajectoryPoint] = []
    converged = False
    step = float("inf")
    s_q: list[float] = []
    d_q: list[float] = []
    for k in range(cfg.max_iters):
        s_q = [p.respond(lam, coupled) for p in sellers]
        d_q = [p.respond(lam, coupled) for p in buyers]
        supply = 0.0
        for q in s_q:
            supply += q
        demand = 0.0
        for q in d_q:
            demand += q
        trajectory.append(TrajectoryPoint(k, lam, supply, demand))
        nxt = price_update(lam, eta, supply, demand)
        step = abs(nxt - lam)
        if step <= cfg.epsilon:
            converged = True
            break
        lam = nxt

    return ClearingOutcome(
        label=label,
        price=lam,
        supply={p.id: q for p, q in zip(sellers, s_q)},
        demand={p.id: q for p, q in zip(buyers, d_q)},
        trajectory=trajectory,
        iterations=len(trajectory),
        converged=converged,
        eta=eta,
        final_step=step,
        wall_time=time.perf_counter() - start,
    )


def one_sided_outcome(
    label: Union[int, str],
    supply: dict[str, float],
    demand: dict[str, float],
    choke: float,
    cfg: SolverConfig,
) -> ClearingOutcome:
    """Zero-trade stand-in for an area that has only one side.

    Players sit at their lower bounds. The recorded price is where dual
    ascent would settle: ``choke`` (the highest buyer omega, where demand
    vanishes) when there are only buyers, the initial price otherwise.
    """
    price = choke if demand and not supply else cfg.lambda_init
    return ClearingOutcome(
        label=label,
        price=price,
        supply=dict(supply),
        demand=dict(demand),
        trajectory=[],
        iterations=0,
        converged=True,
        eta=0.0,
        final_step=0.0,
        one_sided=True,
    )


def _area_participants(scenario: Scenario, area: int) -> tuple[list[Participant], list[Participant]]:
    sellers = [Participant(p, 0.0, p.s_min, p.s_max) for p in scenario.prosumers if p.area_id == area]
    buyers = [Participant(c, 0.0, c.d_min, c.d_max) for c in scenario.consumers if c.area_id == area]
    return sellers, buyers


def dearest_area(prices: dict, epsilon: float) -> int | None:
    """Highest-price area (lowest id on ties), or None when prices agree
    within ``epsilon`` and there is nothing to gain across areas."""
    if len(prices) < 2 or max(prices.values()) - min(prices.values()) <= epsilon:
        return None
    top_price = max(prices.values())
    return min(a for a, lam in prices.items() if lam == top_price)


def select_step2_participants(
    scenario: Scenario,
    area_outcomes: dict[int, ClearingOutcome],
    rule: str = "paper_rule",
    epsilon: float = 1e-8,
) -> tuple[list[Participant], list[Participant]]:
    """Pick the cross-area market's players and their residual bounds.

    ``paper_rule`` takes buyers from the highest-price area (lowest area id
    on ties) and sellers from every other area. ``all_residual`` admits
    everyone and lets the coupled responses decide who trades. Both lists
    are empty when all area prices agree within ``epsilon``.
    """
    if rule not in STEP2_SELECTIONS:
        raise DomainError(f"unknown step-2 selection rule {rule!r}")
    priced = {a: o.price for a, o in area_outcomes.items() if o.supply or o.demand}
    top = dearest_area(priced, epsilon)
    if top is None:
        return [], []

    def committed(pid: str, area: int, seller: bool) -> float:
        o = area_outcomes[area]
        return (o.supply if seller else o.demand)[pid]

    sellers = []
    for p in scenario.prosumers:
        if p.area_id not in priced or (rule == "paper_rule" and p.area_id == top):
            continue
        k = committed(p.id, p.area_id, True)
        sellers.append(Participant(p, k, 0.0, residual_capacity(p.s_max, k)))
    buyers = []
    for c in scenario.consumers:
        if c.area_id not in priced or (rule == "paper_rule" and c.area_id != top):
            continue
        k = committed(c.id, c.area_id, False)
        buyers.append(Participant(c, k, 0.0, residual_capacity(c.d_max, k)))
    return sellers, buyers


def opts_in(p: Participant, floor: float, ceiling: float, coupled: bool = True) -> bool:
    """Whether an invited player can gain from any cross-area price.

    Coupled cross-area prices never leave ``[floor, ceiling]`` (the cheapest
    seller area and the dearest buyer area), so a seller whose marginal cost
    at its commitment is already at the ceiling, a buyer whose marginal
    utility is already at the floor, or anyone without spare capacity would
    answer zero throughout. The check uses only the player's own data and
    the two prices. Literal responses can push the price past the ceiling,
    so in that mode only capacity is checked.
    """
    if p.hi <= p.lo:
        return False
    if not coupled:
        return True
    if p.is_seller:
        return prosumer_marginal(p.player, p.committed) < ceiling
    return consumer_marginal(p.player, p.committed) > floor


def price_window(
    area_outcomes: dict, sellers: Sequence[Participant], buyers: Sequence[Participant]
) -> tuple[float, float]:
    floor = min(area_outcomes[p.player.area_id].price for p in sellers)
    ceiling = max(area_outcomes[p.player.area_id].price for p in buyers)
    return floor, ceiling


def _require_two_sided(scenario: Scenario) -> None:
    if not scenario.prosumers or not scenario.consumers:
        raise OneSidedMarket(
            f"scenario {scenario.name!r} has {len(scenario.prosumers)} prosumers and "
            f"{len(scenario.consumers)} consumers; no trade is possible"
        )


def compose(
    scenario: Scenario,
    mode: str,
    area_outcomes: dict[int, ClearingOutcome],
    inter_outcome: ClearingOutcome | None,
    step2_invited: Sequence[str] = (),
) -> MarketResult:
    """Sum intra- and inter-area quantities per player and score the result."""
    inter_s = inter_outcome.supply if inter_outcome else {}
    inter_d = inter_outcome.demand if inter_outcome else {}
    intra: dict[str, float] = {}
    for o in area_outcomes.values():
        intra.update(o.supply)
        intra.update(o.demand)

    allocations: dict[str, PlayerAllocation] = {}
    for p in scenario.prosumers:
        allocations[p.id] = PlayerAllocation(p.id, intra[p.id], inter_s.get(p.id, 0.0))
    for c in scenario.consumers:
        allocations[c.id] = PlayerAllocation(c.id, intra[c.id], inter_d.get(c.id, 0.0))

    welfare = social_welfare(
        [(c, allocations[c.id].q_total) for c in scenario.consumers],
        [(p, allocations[p.id].q_total) for p in scenario.prosumers],
    )
    step1_welfare = social_welfare(
        [(c, intra[c.id]) for c in scenario.consumers],
        [(p, intra[p.id]) for p in scenario.prosumers],
    )
    traded = sum(allocations[c.id].q_total for c in scenario.consumers)
    step1_traded = sum(intra[c.id] for c in scenario.consumers)

    step1_times = [o.wall_time for o in area_outcomes.values()]
    step2_time = inter_outcome.wall_time if inter_outcome else 0.0
    timing = {
        "step1_max": max(step1_times, default=0.0),
        "step1_total": sum(step1_times),
        "step2": step2_time,
        "composed": max(step1_times, default=0.0) + step2_time,
    }
    return MarketResult(
        mode=mode,
        area_outcomes=area_outcomes,
        inter_outcome=inter_outcome,
        step2_invited=tuple(step2_invited),
        allocations=allocations,
        welfare=welfare,
        step1_welfare=step1_welfare,
        traded_energy=traded,
        step1_traded_energy=step1_traded,
        timing=timing,
    )


def clear_areas(scenario: Scenario, cfg: SolverConfig) -> dict[int, ClearingOutcome]:
    """Step 1: clear each area independently, reduced in area-id order."""
    outcomes: dict[int, ClearingOutcome] = {}
    for area in sorted(scenario.areas):
        sellers, buyers = _area_participants(scenario, area)
        if sellers and buyers:
            outcomes[area] = clear_market(sellers, buyers, cfg, True, area)
        else:
            outcomes[area] = one_sided_outcome(
                area,
                {p.id: p.lo for p in sellers},
                {p.id: p.lo for p in buyers},
                max((b.player.omega for b in buyers), default=0.0),
                cfg,
            )
    return outcomes


def run_2smc(scenario: Scenario, cfg: SolverConfig | None = None) -> MarketResult:
    """Two-step clearing: every area alone, then the cross-area market."""
    cfg = cfg or scenario.solver
    cfg.validate()
    _require_two_sided(scenario)
    area_outcomes = clear_areas(scenario, cfg)
    sellers, buyers = select_step2_participants(
        scenario, area_outcomes, cfg.step2_selection, cfg.epsilon
    )
    invited = [p.id for p in (*sellers, *buyers)]
    inter = None
    if sellers and buyers:
        floor, ceiling = price_window(area_outcomes, sellers, buyers)
        sellers = [p for p in sellers if opts_in(p, floor, ceiling, cfg.coupled)]
        buyers = [p for p in buyers if opts_in(p, floor, ceiling, cfg.coupled)]
        if sellers and buyers:
            inter = clear_market(sellers, buyers, cfg, cfg.coupled, INTER_AREA)
    return compose(scenario, "2smc", area_outcomes, inter, invited)


def run_1smc(scenario: Scenario, cfg: SolverConfig | None = None) -> MarketResult:
    """Clear every player of every area in one market with a single price."""
    cfg = cfg or scenario.solver
    cfg.validate()
    _require_two_sided(scenario)
    sellers = [Participant(p, 0.0, p.s_min, p.s_max) for p in scenario.prosumers]
    buyers = [Participant(c, 0.0, c.d_min, c.d_max) for c in scenario.consumers]
    outcome = clear_market(sellers, buyers, cfg, True, SINGLE_MARKET)
    return compose(scenario, "1smc", {SINGLE_MARKET: outcome}, None)


def step1_only(result: MarketResult) -> MarketResult:
    """Copy of a two-step result with the cross-area trades removed."""
    allocations = {
        pid: PlayerAllocation(pid, a.q_intra, 0.0) for pid, a in result.allocations.items()
    }
    return replace(
        result,
        inter_outcome=None,
        allocations=allocations,
        welfare=result.step1_welfare,
        traded_energy=result.step1_traded_energy,
    )
