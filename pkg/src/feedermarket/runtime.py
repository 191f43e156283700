"""Message-passing simulation of the two-step clearing.

One asyncio task per player (its smart meter) and one per area data centre.
Centres broadcast prices and wait at a barrier for every reply of the
round; players answer with their own best response and never see anyone
else's data. After step 1 the centres swap area results, the centre of
the dearest area becomes coordinator of the cross-area market ``"C"``, and
the same loop runs there with the players that opt in.

Sums inside centres follow scenario order, so the outcome matches
:func:`feedermarket.engine.run_2smc` bit for bit.
"""

from __future__ import annotations

import asyncio
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .econ import ConsumerParams, Participant, ProsumerParams, residual_capacity
from .engine import (
    INTER_AREA,
    ClearingOutcome,
    MarketResult,
    SolverConfig,
    TrajectoryPoint,
    _require_two_sided,
    compose,
    dearest_area,
    one_sided_outcome,
    opts_in,
    price_update,
)
from .scenario import Scenario

Label = Union[int, str]


class ProtocolError(RuntimeError):
    """A reply went missing or arrived for the wrong round."""


# --- messages ---------------------------------------------------------------


@dataclass(frozen=True)
class PriceSignal:
    area: Label
    k: int
    lam: float


@dataclass(frozen=True)
class QuantityReply:
    player_id: str
    area: Label
    k: int
    quantity: float


@dataclass(frozen=True)
class AreaResult:
    area: int
    lam: float
    converged: bool
    traded: bool  # False for an empty area, which takes no part in ranking


@dataclass(frozen=True)
class InviteEntry:
    player_id: str
    area: int
    lo: float
    hi: float


@dataclass(frozen=True)
class Step2Invite:
    """Centre to coordinator: the sender's invited players and residual
    bounds. Coordinator to player: that player's own entry only."""

    source: int
    participants: tuple[InviteEntry, ...]
    floor: float = 0.0
    ceiling: float = 0.0


@dataclass(frozen=True)
class JoinReply:
    player_id: str
    joined: bool


Message = Union[PriceSignal, QuantityReply, AreaResult, Step2Invite, JoinReply]

_STOP = object()


@dataclass(frozen=True)
class TraceRecord:
    index: int
    area: Label
    sender: str
    recipient: str
    message: Message

    def csv_line(self) -> str:
        msg = self.message
        fields = [str(self.index), str(self.area), type(msg).__name__, self.sender, self.recipient]
        if isinstance(msg, Step2Invite):
            fields += [str(msg.source), repr(msg.floor), repr(msg.ceiling)]
            fields += [f"{e.player_id}:{e.lo!r}:{e.hi!r}" for e in msg.participants]
        else:
            for name in msg.__dataclass_fields__:
                val = getattr(msg, name)
                fields.append(repr(val) if isinstance(val, float) else str(val))
        return ",".join(fields)


@dataclass(frozen=True)
class RosterEntry:
    """What a data centre knows about a connected player: identity, side,
    quantity limits, price sensitivity (for the step size) and, for buyers,
    the choke price above which they buy nothing. No cost or utility curve."""

    player_id: str
    seller: bool
    area: int
    lo: float
    hi: float
    slope: float
    choke: float = 0.0


# --- network ----------------------------------------------------------------


class Network:
    """Mailboxes, optional message loss and the ordered trace."""

    def __init__(self, trace: bool = False, loss_rate: float = 0.0, seed: int = 0):
        self.boxes: dict[str, asyncio.Queue] = {}
        self.tracing = trace
        self.records: list[TraceRecord] = []
        self.loss_rate = loss_rate
        self._loss_rng = random.Random(seed ^ 0x5EED)

    def mailbox(self, address: str) -> asyncio.Queue:
        box = asyncio.Queue()
        self.boxes[address] = box
        return box

    def _log(self, area: Label, sender: str, recipient: str, msg: Message) -> None:
        if self.tracing:
            self.records.append(TraceRecord(len(self.records), area, sender, recipient, msg))

    def send(self, sender: str, recipient: str, msg: Message, area: Label = "coord") -> None:
        self._log(area, sender, recipient, msg)
        if self.loss_rate and isinstance(msg, QuantityReply) and self._loss_rng.random() < self.loss_rate:
            return
        self.boxes[recipient].put_nowait(msg)

    def broadcast(self, sender: str, recipients: list[str], msg: PriceSignal) -> None:
        self._log(msg.area, sender, "*", msg)
        for r in recipients:
            self.boxes[r].put_nowait(msg)

    def stop(self, address: str) -> None:
        self.boxes[address].put_nowait(_STOP)


def player_address(pid: str) -> str:
    return f"player:{pid}"


def centre_address(area: Label) -> str:
    return f"centre:{area}"


# --- actors -----------------------------------------------------------------


class PlayerActor:
    """Smart meter: holds its own parameters and answers price signals."""

    def __init__(self, params: Union[ProsumerParams, ConsumerParams], net: Network,
                 coupled: bool, rng: random.Random, max_yield: int):
        self.params = params
        self.address = player_address(params.id)
        self.inbox = net.mailbox(self.address)
        self.net = net
        self.coupled = coupled
        self.rng = rng
        self.max_yield = max_yield
        seller = isinstance(params, ProsumerParams)
        lo, hi = (params.s_min, params.s_max) if seller else (params.d_min, params.d_max)
        self.markets: dict[Label, Participant] = {params.area_id: Participant(params, 0.0, lo, hi)}
        self.committed = lo
        self.coordinator: Optional[str] = None

    async def _jitter(self) -> None:
        for _ in range(self.rng.randint(0, self.max_yield)):
            await asyncio.sleep(0)

    async def run(self) -> None:
        while True:
            msg = await self.inbox.get()
            if msg is _STOP:
                return
            await self._jitter()
            if isinstance(msg, PriceSignal):
                market = self.markets[msg.area]
                coupled = self.coupled if msg.area == INTER_AREA else True
                q = market.respond(msg.lam, coupled)
                if msg.area == self.params.area_id:
                    self.committed = q
                to = centre_address(self.params.area_id) if msg.area != INTER_AREA else self.coordinator
                self.net.send(self.address, to, QuantityReply(self.params.id, msg.area, msg.k, q), msg.area)
            elif isinstance(msg, Step2Invite):
                (entry,) = msg.participants
                self.coordinator = centre_address(msg.source)
                market = Participant(self.params, self.committed, entry.lo, entry.hi)
                joined = opts_in(market, msg.floor, msg.ceiling, self.coupled)
                if joined:
                    self.markets[INTER_AREA] = market
                self.net.send(self.address, self.coordinator, JoinReply(self.params.id, joined))


@dataclass
class DataCentreState:
    area: Label
    lam: float = 0.0
    k: int = 0
    pending: set = field(default_factory=set)
    outcome: Optional[ClearingOutcome] = None


class DataCentre:
    """Area coordinator: posts prices, aggregates replies, and may run the
    cross-area market when its area is the dearest."""

    def __init__(self, area: int, directory: dict[str, RosterEntry], net: Network,
                 cfg: SolverConfig, all_areas: list[int], reply_timeout: float):
        # ``directory`` lists every player in scenario order; a centre clears
        # only its own, and as coordinator uses the rest to rank invitees.
        self.area = area
        self.directory = directory
        self.roster = [e for e in directory.values() if e.area == area]
        self.address = centre_address(area)
        self.inbox = net.mailbox(self.address)
        self.net = net
        self.cfg = cfg
        self.all_areas = all_areas
        self.reply_timeout = reply_timeout
        self.state = DataCentreState(area)
        self.early: list = []

    async def _receive(self, want: type, missing: set[str]):
        for i, msg in enumerate(self.early):
            if isinstance(msg, want):
                return self.early.pop(i)
        while True:
            # Only player replies time out; other centres may still be clearing.
            timeout = self.reply_timeout if want in (QuantityReply, JoinReply) else None
            try:
                msg = await asyncio.wait_for(self.inbox.get(), timeout)
            except asyncio.TimeoutError:
                raise ProtocolError(
                    f"centre {self.state.area}: no {want.__name__} from {sorted(missing)} "
                    f"(round {self.state.k})"
                ) from None
            if isinstance(msg, want):
                return msg
            self.early.append(msg)

    async def clear(self, label: Label, entries: list[RosterEntry], coupled: bool) -> ClearingOutcome:
        """The dual-ascent loop, with players reached only through messages."""
        cfg = self.cfg
        sellers = [e for e in entries if e.seller]
        buyers = [e for e in entries if not e.seller]
        if cfg.eta == "auto":
            slope = 0.0
            for e in (*sellers, *buyers):
                slope += e.slope
            eta = 1.0 / slope
        else:
            eta = float(cfg.eta)
        addresses = [player_address(e.player_id) for e in (*sellers, *buyers)]
        st = self.state = DataCentreState(label, cfg.lambda_init)
        start = time.perf_counter()

        trajectory: list[TrajectoryPoint] = []
        converged = False
        step = float("inf")
        replies: dict[str, float] = {}
        for k in range(cfg.max_iters):
            st.k = k
            self.net.broadcast(self.address, addresses, PriceSignal(label, k, st.lam))
            st.pending = {e.player_id for e in entries}
            replies = {}
            while st.pending:
                msg = await self._receive(QuantityReply, st.pending)
                if msg.k != k or msg.area != label or msg.player_id not in st.pending:
                    raise ProtocolError(
                        f"centre {label}: unexpected reply {msg} in round {k}"
                    )
                st.pending.discard(msg.player_id)
                replies[msg.player_id] = msg.quantity
            supply = 0.0
            for e in sellers:
                supply += replies[e.player_id]
            demand = 0.0
            for e in buyers:
                demand += replies[e.player_id]
            trajectory.append(TrajectoryPoint(k, st.lam, supply, demand))
            nxt = price_update(st.lam, eta, supply, demand)
            step = abs(nxt - st.lam)
            if step <= cfg.epsilon:
                converged = True
                break
            st.lam = nxt

        st.outcome = ClearingOutcome(
            label=label,
            price=st.lam,
            supply={e.player_id: replies[e.player_id] for e in sellers},
            demand={e.player_id: replies[e.player_id] for e in buyers},
            trajectory=trajectory,
            iterations=len(trajectory),
            converged=converged,
            eta=eta,
            final_step=step,
            wall_time=time.perf_counter() - start,
        )
        return st.outcome

    def _trivial(self) -> ClearingOutcome:
        return one_sided_outcome(
            self.area,
            {e.player_id: e.lo for e in self.roster if e.seller},
            {e.player_id: e.lo for e in self.roster if not e.seller},
            max((e.choke for e in self.roster if not e.seller), default=0.0),
            self.cfg,
        )

    async def run(self) -> tuple[ClearingOutcome, Optional[ClearingOutcome], list[str]]:
        has_sellers = any(e.seller for e in self.roster)
        has_buyers = any(not e.seller for e in self.roster)
        if has_sellers and has_buyers:
            outcome = await self.clear(self.area, self.roster, True)
        else:
            outcome = self._trivial()
        committed = {**outcome.supply, **outcome.demand}

        result = AreaResult(self.area, outcome.price, outcome.converged, bool(self.roster))
        for other in self.all_areas:
            if other != self.area:
                self.net.send(self.address, centre_address(other), result)
        prices = {self.area: outcome.price} if result.traded else {}
        for _ in range(len(self.all_areas) - 1):
            msg = await self._receive(AreaResult, set())
            if msg.traded:
                prices[msg.area] = msg.lam

        top = dearest_area(prices, self.cfg.epsilon)
        if top is None or not result.traded:
            if top is not None and self.area == top:
                raise AssertionError("dearest area must have players")
            return outcome, None, []

        rule = self.cfg.step2_selection
        invited = []
        for e in self.roster:
            if rule == "paper_rule" and (e.seller == (self.area == top)):
                continue
            cap = e.hi
            k = committed[e.player_id]
            invited.append(InviteEntry(e.player_id, e.area, 0.0, residual_capacity(cap, k)))
        self.net.send(self.address, centre_address(top), Step2Invite(self.area, tuple(invited)))

        if self.area != top:
            return outcome, None, []
        inter, invited_ids = await self.coordinate(prices)
        return outcome, inter, invited_ids

    async def coordinate(self, prices: dict[int, float]) -> tuple[Optional[ClearingOutcome], list[str]]:
        """Run the cross-area market from the dearest area's centre."""
        reports: dict[int, Step2Invite] = {}
        expected = len(prices)
        while len(reports) < expected:
            msg = await self._receive(Step2Invite, set())
            reports[msg.source] = msg
        entries = {e.player_id: e for r in reports.values() for e in r.participants}
        ranked = [entries[pid] for pid in self.directory if pid in entries]
        sellers = [e for e in ranked if self.directory[e.player_id].seller]
        buyers = [e for e in ranked if not self.directory[e.player_id].seller]
        invited_ids = [e.player_id for e in (*sellers, *buyers)]
        if not sellers or not buyers:
            return None, invited_ids

        floor = min(prices[e.area] for e in sellers)
        ceiling = max(prices[e.area] for e in buyers)
        for e in (*sellers, *buyers):
            self.net.send(self.address, player_address(e.player_id),
                          Step2Invite(self.area, (e,), floor, ceiling))
        joined: dict[str, bool] = {}
        while len(joined) < len(entries):
            missing = set(entries) - set(joined)
            msg = await self._receive(JoinReply, missing)
            joined[msg.player_id] = msg.joined

        active = []
        for e in (*sellers, *buyers):
            if joined[e.player_id]:
                r = self.directory[e.player_id]
                active.append(RosterEntry(e.player_id, r.seller, e.area, e.lo, e.hi, r.slope))
        if not any(e.seller for e in active) or all(e.seller for e in active):
            return None, invited_ids
        return await self.clear(INTER_AREA, active, self.cfg.step2_response == "coupled"), invited_ids


# --- driver -----------------------------------------------------------------


@dataclass
class DistributedRun:
    result: MarketResult
    trace: list[TraceRecord]

    def message_trace(self) -> dict[Label, list[TraceRecord]]:
        return message_trace(self)


def _roster_entry(p: Union[ProsumerParams, ConsumerParams]) -> RosterEntry:
    if isinstance(p, ProsumerParams):
        return RosterEntry(p.id, True, p.area_id, p.s_min, p.s_max, 1.0 / (2.0 * p.a))
    return RosterEntry(p.id, False, p.area_id, p.d_min, p.d_max, 1.0 / (2.0 * p.mu), p.omega)


async def _run(scenario: Scenario, cfg: SolverConfig, net: Network, seed: int,
               max_yield: int, reply_timeout: float):
    rng = random.Random(seed)
    players = [
        PlayerActor(p, net, cfg.coupled, random.Random(rng.getrandbits(64)), max_yield)
        for p in (*scenario.prosumers, *scenario.consumers)
    ]
    directory = {p.id: _roster_entry(p) for p in (*scenario.prosumers, *scenario.consumers)}
    areas = sorted(scenario.areas)
    centres = [DataCentre(area, directory, net, cfg, areas, reply_timeout) for area in areas]

    player_tasks = [asyncio.ensure_future(p.run()) for p in players]
    try:
        results = await asyncio.gather(*(c.run() for c in centres))
    finally:
        for p in players:
            net.stop(p.address)
        await asyncio.gather(*player_tasks, return_exceptions=True)

    area_outcomes = {area: r[0] for area, r in zip(areas, results)}
    inter, invited = None, []
    for _, c_inter, c_invited in results:
        if c_inter is not None or c_invited:
            inter, invited = c_inter, c_invited
    return area_outcomes, inter, invited


def run_distributed(
    scenario: Scenario,
    cfg: SolverConfig | None = None,
    trace: bool = False,
    seed: int = 0,
    max_yield: int = 3,
    loss_rate: float = 0.0,
    reply_timeout: float = 30.0,
) -> DistributedRun:
    """Run the two-step clearing as a message protocol between actors.

    ``seed`` only perturbs the interleaving of actors; the outcome does not
    depend on it. ``loss_rate`` drops quantity replies for fault-injection
    tests, which then surface as :class:`ProtocolError`.
    """
    cfg = cfg or scenario.solver
    cfg.validate()
    _require_two_sided(scenario)
    net = Network(trace=trace, loss_rate=loss_rate, seed=seed)
    area_outcomes, inter, invited = asyncio.run(
        _run(scenario, cfg, net, seed, max_yield, reply_timeout)
    )
    result = compose(scenario, "2smc", area_outcomes, inter, invited)
    return DistributedRun(result, net.records)


def message_trace(run: DistributedRun) -> dict[Label, list[TraceRecord]]:
    """Per-clearing logs of price broadcasts and quantity replies, plus the
    centre-to-centre and invitation traffic under ``"coord"``."""
    logs: dict[Label, list[TraceRecord]] = {}
    for rec in run.trace:
        logs.setdefault(rec.area, []).append(rec)
    return logs


def write_trace(run: DistributedRun, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w") as fh:
        fh.write("index,area,variant,sender,recipient,payload\n")
        for rec in run.trace:
            fh.write(rec.csv_line() + "\n")
    return p
