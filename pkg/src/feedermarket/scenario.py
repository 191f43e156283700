"""Scenario files, synthetic populations and result files.

A scenario is one JSON document::

    {"name": ..., "areas": [1, 2, ...],
     "prosumers": [{"id", "area", "a", "b", "gamma", "s_min", "s_max"}, ...],
     "consumers": [{"id", "area", "omega", "mu", "d_min", "d_max"}, ...],
     "solver": {"eta", "epsilon", "max_iters", "lambda_init",
                "step2_selection", "step2_response"}}

Results go to a directory as ``summary.json``, one
``trajectory_<clearing>.csv`` per clearing and ``allocations.csv``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from .econ import (
    ConsumerParams,
    DomainError,
    ProsumerParams,
    consumer_surplus,
    prosumer_surplus,
)
from .engine import MarketResult, SolverConfig


class ScenarioError(ValueError):
    """A scenario file could not be parsed or failed validation."""


_PROSUMER_FIELDS = {"id", "area", "a", "b", "gamma", "s_min", "s_max"}
_CONSUMER_FIELDS = {"id", "area", "omega", "mu", "d_min", "d_max"}
_SOLVER_FIELDS = {"eta", "epsilon", "max_iters", "lambda_init", "step2_selection", "step2_response"}
_TOP_FIELDS = {"name", "areas", "prosumers", "consumers", "solver"}


@dataclass(frozen=True)
class Scenario:
    name: str
    areas: tuple[int, ...]
    consumers: tuple[ConsumerParams, ...]
    prosumers: tuple[ProsumerParams, ...]
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self) -> None:
        """Check parameter invariants and cross references.

        Raises:
            ScenarioError: naming the first offending player or field.
        """
        if len(set(self.areas)) != len(self.areas):
            raise ScenarioError(f"duplicate area ids in {list(self.areas)}")
        seen: set[str] = set()
        for player in (*self.prosumers, *self.consumers):
            kind = "prosumer" if isinstance(player, ProsumerParams) else "consumer"
            if player.id in seen:
                raise ScenarioError(f"duplicate player id {player.id!r}")
            seen.add(player.id)
            if player.area_id not in self.areas:
                raise ScenarioError(f"{kind} {player.id}: unknown area {player.area_id}")
            try:
                player.validate()
            except DomainError as exc:
                raise ScenarioError(str(exc)) from None
        try:
            self.solver.validate()
        except DomainError as exc:
            raise ScenarioError(f"solver: {exc}") from None

    def players_in(self, area: int) -> tuple[list[ProsumerParams], list[ConsumerParams]]:
        return (
            [p for p in self.prosumers if p.area_id == area],
            [c for c in self.consumers if c.area_id == area],
        )

    def one_sided_areas(self) -> list[int]:
        out = []
        for area in self.areas:
            sellers, buyers = self.players_in(area)
            if bool(sellers) != bool(buyers):
                out.append(area)
        return out

    def player(self, pid: str) -> Union[ProsumerParams, ConsumerParams]:
        for p in (*self.prosumers, *self.consumers):
            if p.id == pid:
                return p
        raise KeyError(pid)

    def with_solver(self, **changes: Any) -> "Scenario":
        from dataclasses import replace

        return replace(self, solver=replace(self.solver, **changes))


def _num(obj: dict, key: str, where: str, default: Optional[float] = None) -> float:
    if key not in obj:
        if default is None:
            raise ScenarioError(f"{where}: missing field {key!r}")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioError(f"{where}: field {key!r} must be a number (got {val!r})")
    return float(val)


def _check_keys(obj: Any, allowed: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")


def scenario_from_dict(doc: dict) -> Scenario:
    _check_keys(doc, _TOP_FIELDS, "scenario")
    for key in ("areas", "prosumers", "consumers"):
        if key not in doc:
            raise ScenarioError(f"scenario: missing field {key!r}")

    prosumers = []
    for i, obj in enumerate(doc["prosumers"]):
        where = f"prosumer {obj.get('id', f'#{i}') if isinstance(obj, dict) else f'#{i}'}"
        _check_keys(obj, _PROSUMER_FIELDS, where)
        if "id" not in obj or "area" not in obj:
            raise ScenarioError(f"{where}: 'id' and 'area' are required")
        prosumers.append(
            ProsumerParams(
                id=str(obj["id"]),
                area_id=obj["area"],
                a=_num(obj, "a", where),
                b=_num(obj, "b", where),
                gamma=_num(obj, "gamma", where, 0.0),
                s_min=_num(obj, "s_min", where, 0.0),
                s_max=_num(obj, "s_max", where),
            )
        )
    consumers = []
    for i, obj in enumerate(doc["consumers"]):
        where = f"consumer {obj.get('id', f'#{i}') if isinstance(obj, dict) else f'#{i}'}"
        _check_keys(obj, _CONSUMER_FIELDS, where)
        if "id" not in obj or "area" not in obj:
            raise ScenarioError(f"{where}: 'id' and 'area' are required")
        consumers.append(
            ConsumerParams(
                id=str(obj["id"]),
                area_id=obj["area"],
                omega=_num(obj, "omega", where),
                mu=_num(obj, "mu", where),
                d_min=_num(obj, "d_min", where, 0.0),
                d_max=_num(obj, "d_max", where),
            )
        )

    solver_doc = doc.get("solver", {})
    _check_keys(solver_doc, _SOLVER_FIELDS, "solver")
    defaults = SolverConfig()
    eta = solver_doc.get("eta", defaults.eta)
    if eta != "auto":
        eta = _num(solver_doc, "eta", "solver")
    max_iters = solver_doc.get("max_iters", defaults.max_iters)
    if isinstance(max_iters, bool) or not isinstance(max_iters, int):
        raise ScenarioError(f"solver: max_iters must be an integer (got {max_iters!r})")
    solver = SolverConfig(
        eta=eta,
        epsilon=_num(solver_doc, "epsilon", "solver", defaults.epsilon),
        max_iters=max_iters,
        lambda_init=_num(solver_doc, "lambda_init", "solver", defaults.lambda_init),
        step2_selection=solver_doc.get("step2_selection", defaults.step2_selection),
        step2_response=solver_doc.get("step2_response", defaults.step2_response),
    )
    scenario = Scenario(
        name=str(doc.get("name", "scenario")),
        areas=tuple(doc["areas"]),
        consumers=tuple(consumers),
        prosumers=tuple(prosumers),
        solver=solver,
    )
    scenario.validate()
    return scenario


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "name": scenario.name,
        "areas": list(scenario.areas),
        "prosumers": [
            {"id": p.id, "area": p.area_id, "a": p.a, "b": p.b, "gamma": p.gamma,
             "s_min": p.s_min, "s_max": p.s_max}
            for p in scenario.prosumers
        ],
        "consumers": [
            {"id": c.id, "area": c.area_id, "omega": c.omega, "mu": c.mu,
             "d_min": c.d_min, "d_max": c.d_max}
            for c in scenario.consumers
        ],
        "solver": asdict(scenario.solver),
    }


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("feedermarket") / "data" / name))


def resolve_scenario_path(path: Union[str, Path]) -> Path:
    """Return ``path`` if it exists, else the bundled file of that name."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (p.name, f"{p.name}.json"):
        bundled = bundled_path(candidate)
        if bundled.exists():
            return bundled
    return p


def load_scenario(path: Union[str, Path]) -> Scenario:
    p = resolve_scenario_path(path)
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: not valid JSON ({exc})") from None
    return scenario_from_dict(doc)


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")
    return p


def table1() -> Scenario:
    """The bundled 20-player, three-area case study."""
    return load_scenario(bundled_path("table1.json"))


@dataclass(frozen=True)
class PopulationSpec:
    """Seeded recipe for a synthetic scenario.

    Counts are either totals (dealt round-robin over areas) or explicit
    per-area lists. Default ranges span the bundled case-study parameters;
    they are a reconstruction, not published data.
    """

    num_areas: int = 10
    sellers: Union[int, Sequence[int]] = 900
    buyers: Union[int, Sequence[int]] = 1100
    a_range: tuple[float, float] = (0.001, 0.008)
    b_range: tuple[float, float] = (2.0, 9.0)
    omega_range: tuple[float, float] = (7.0, 20.0)
    mu_range: tuple[float, float] = (0.04, 0.15)
    cap_range: tuple[float, float] = (30.0, 200.0)
    seed: int = 42
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self) -> None:
        if self.num_areas < 1:
            raise DomainError(f"num_areas must be >= 1 (got {self.num_areas})")
        for name in ("sellers", "buyers"):
            counts = getattr(self, name)
            if isinstance(counts, int):
                if counts < 0:
                    raise DomainError(f"{name} must be >= 0 (got {counts})")
            else:
                if len(counts) != self.num_areas or any(n < 0 for n in counts):
                    raise DomainError(f"{name} per area must be {self.num_areas} counts >= 0")
        for name, floor in (("a_range", 0.0), ("b_range", None), ("omega_range", 0.0),
                            ("mu_range", 0.0), ("cap_range", None)):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise DomainError(f"{name} is empty: {(lo, hi)}")
            if floor is not None and not lo > floor:
                raise DomainError(f"{name} lower end must be > {floor} (got {lo})")
            if floor is None and lo < 0:
                raise DomainError(f"{name} lower end must be >= 0 (got {lo})")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must fit in 64 bits")


def _area_of(counts: Union[int, Sequence[int]], num_areas: int) -> list[int]:
    if isinstance(counts, int):
        return [1 + i % num_areas for i in range(counts)]
    return [area for area, n in enumerate(counts, start=1) for _ in range(n)]


def generate_population(spec: PopulationSpec) -> Scenario:
    """Draw every parameter uniformly from its range with a seeded PCG64."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    seller_areas = _area_of(spec.sellers, spec.num_areas)
    buyer_areas = _area_of(spec.buyers, spec.num_areas)
    n_s, n_b = len(seller_areas), len(buyer_areas)

    a = rng.uniform(*spec.a_range, size=n_s)
    b = rng.uniform(*spec.b_range, size=n_s)
    s_cap = rng.uniform(*spec.cap_range, size=n_s)
    omega = rng.uniform(*spec.omega_range, size=n_b)
    mu = rng.uniform(*spec.mu_range, size=n_b)
    d_cap = rng.uniform(*spec.cap_range, size=n_b)

    width = max(len(str(n_s)), len(str(n_b)))
    prosumers = tuple(
        ProsumerParams(f"P{i + 1:0{width}d}", seller_areas[i], float(a[i]), float(b[i]),
                       0.0, 0.0, float(s_cap[i]))
        for i in range(n_s)
    )
    consumers = tuple(
        ConsumerParams(f"C{j + 1:0{width}d}", buyer_areas[j], float(omega[j]), float(mu[j]),
                       0.0, float(d_cap[j]))
        for j in range(n_b)
    )
    scenario = Scenario(
        name=f"generated-{spec.num_areas}a-{n_s}s-{n_b}b-seed{spec.seed}",
        areas=tuple(range(1, spec.num_areas + 1)),
        consumers=consumers,
        prosumers=prosumers,
        solver=spec.solver,
    )
    scenario.validate()
    return scenario


def _clearing_summary(outcome) -> dict:
    return {
        "price": outcome.price,
        "iterations": outcome.iterations,
        "converged": outcome.converged,
        "one_sided": outcome.one_sided,
        "eta": outcome.eta,
        "final_step": outcome.final_step,
        "supply": outcome.total_supply,
        "demand": outcome.total_demand,
        "wall_time": outcome.wall_time,
    }


def summary_dict(scenario: Scenario, result: MarketResult) -> dict:
    doc: dict[str, Any] = {
        "scenario": scenario.name,
        "mode": result.mode,
        "converged": result.converged,
        "welfare": result.welfare,
        "traded_energy": result.traded_energy,
    }
    if result.mode == "2smc":
        doc["area_prices"] = {str(a): o.price for a, o in result.area_outcomes.items()}
        doc["lambda_C"] = result.inter_outcome.price if result.inter_outcome else None
        doc["step1_welfare"] = result.step1_welfare
        doc["step1_traded_energy"] = result.step1_traded_energy
    else:
        doc["lambda_T"] = next(iter(result.area_outcomes.values())).price
    doc["clearings"] = {str(o.label): _clearing_summary(o) for o in result.clearings}
    doc["timing"] = dict(result.timing)
    return doc


def player_surplus(scenario: Scenario, result: MarketResult, pid: str) -> float:
    """Surplus of a player paying (or earning) each clearing's own price."""
    player = scenario.player(pid)
    alloc = result.allocations[pid]
    if result.mode == "2smc":
        intra_price = result.area_outcomes[player.area_id].price
    else:
        intra_price = next(iter(result.area_outcomes.values())).price
    inter_price = result.inter_outcome.price if result.inter_outcome else 0.0
    paid = intra_price * alloc.q_intra + inter_price * alloc.q_inter
    if isinstance(player, ProsumerParams):
        return prosumer_surplus(player, alloc.q_total, 0.0) + paid
    return consumer_surplus(player, alloc.q_total, 0.0) - paid


def write_results(scenario: Scenario, result: MarketResult, out_dir: Union[str, Path]) -> list[Path]:
    """Write summary, per-clearing trajectories and per-player allocations."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    summary = out / "summary.json"
    summary.write_text(json.dumps(summary_dict(scenario, result), indent=2) + "\n")
    written.append(summary)

    for o in result.clearings:
        path = out / f"trajectory_{o.label}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "lambda", "supply", "demand"])
            for pt in o.trajectory:
                w.writerow([pt.iteration, repr(pt.lam), repr(pt.supply), repr(pt.demand)])
        written.append(path)

    path = out / "allocations.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["player_id", "side", "area", "q_intra", "q_inter", "q_total", "surplus"])
        for player in (*scenario.prosumers, *scenario.consumers):
            alloc = result.allocations[player.id]
            side = "seller" if isinstance(player, ProsumerParams) else "buyer"
            w.writerow([
                player.id, side, player.area_id, repr(alloc.q_intra), repr(alloc.q_inter),
                repr(alloc.q_total), repr(player_surplus(scenario, result, player.id)),
            ])
    written.append(path)
    return written
