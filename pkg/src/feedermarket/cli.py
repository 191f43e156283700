"""Command-line entry point.

Exit codes: 0 converged, 1 bad input, 2 a clearing hit ``max_iters``
(results are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .econ import DomainError, OneSidedMarket
from .engine import MarketResult, run_1smc, run_2smc
from .runtime import run_distributed, write_trace
from .scenario import (
    PopulationSpec,
    ScenarioError,
    generate_population,
    load_scenario,
    save_scenario,
    summary_dict,
    write_results,
)

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


def _pct(new: float, base: float) -> str:
    if base == 0:
        return "0%" if new == 0 else "n/a"
    delta = 100.0 * (new - base) / abs(base)
    sign = "+" if delta >= 0 else "-"
    return f"{sign} {abs(delta):.2f}%"


def _print_summary(doc: dict) -> None:
    print(f"scenario {doc['scenario']}  mode {doc['mode']}  converged {doc['converged']}")
    if "area_prices" in doc:
        for area, lam in doc["area_prices"].items():
            print(f"  lambda_{area} = {lam:.6f}")
        lam_c = doc["lambda_C"]
        print(f"  lambda_C = {lam_c:.6f}" if lam_c is not None else "  lambda_C = (no cross-area trade)")
    else:
        print(f"  lambda_T = {doc['lambda_T']:.6f}")
    print(f"  welfare = {doc['welfare']:.4f}")
    print(f"  traded energy = {doc['traded_energy']:.4f} kWh")
    print(f"  time = {doc['timing']['composed']:.4f} s")


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    if args.distributed:
        if args.mode != "2smc":
            raise UsageError("--distributed simulates the two-step protocol; use --mode 2smc")
        run = run_distributed(scenario, trace=args.trace, seed=args.seed)
        result = run.result
    else:
        if args.trace:
            print("note: --trace records messages only with --distributed; trace is empty",
                  file=sys.stderr)
        run = None
        result = run_2smc(scenario) if args.mode == "2smc" else run_1smc(scenario)

    out = Path(args.out)
    write_results(scenario, result, out)
    if run is not None and args.trace:
        write_trace(run, out / "trace.csv")
    _print_summary(summary_dict(scenario, result))
    print(f"results written to {out}")
    if not result.converged:
        print("warning: a clearing stopped at max_iters without converging", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def comparison_rows(two: MarketResult, one: MarketResult) -> list[tuple[str, float, float, str]]:
    return [
        ("Social Welfare", two.welfare, one.welfare, _pct(two.welfare, one.welfare)),
        ("Traded Energy (kWh)", two.traded_energy, one.traded_energy,
         _pct(two.traded_energy, one.traded_energy)),
        ("Computational Time (s)", two.composed_time, one.composed_time,
         _pct(two.composed_time, one.composed_time)),
    ]


def _format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in header]]
    for row in rows:
        cells.append([f"{v:.6g}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_compare(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    two = run_2smc(scenario)
    one = run_1smc(scenario)
    rows = comparison_rows(two, one)
    print(_format_table(["", "2SMC", "1SMC", "Percentage of variation"], rows))
    print(f"(2SMC before cross-area trading: welfare {two.step1_welfare:.6g}, "
          f"traded {two.step1_traded_energy:.6g} kWh)")
    if args.out:
        out = Path(args.out)
        write_results(scenario, two, out / "2smc")
        write_results(scenario, one, out / "1smc")
        doc = {
            "scenario": scenario.name,
            "rows": [{"metric": m, "2smc": a, "1smc": b, "variation": v} for m, a, b, v in rows],
            "step1_welfare": two.step1_welfare,
            "step1_traded_energy": two.step1_traded_energy,
        }
        (out / "comparison.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(f"results written to {out}")
    if not (two.converged and one.converged):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    if args.areas < 1 or args.sellers < 0 or args.buyers < 0 or args.sellers + args.buyers == 0:
        raise UsageError("need --areas >= 1 and nonnegative, not both zero, --sellers/--buyers")
    spec = PopulationSpec(num_areas=args.areas, sellers=args.sellers, buyers=args.buyers,
                          seed=args.seed)
    scenario = generate_population(spec)
    path = save_scenario(scenario, args.out)
    one_sided = scenario.one_sided_areas()
    print(f"wrote {path}: {len(scenario.prosumers)} prosumers, {len(scenario.consumers)} consumers, "
          f"{len(scenario.areas)} areas")
    if one_sided:
        print(f"note: one-sided areas {one_sided}", file=sys.stderr)
    return EXIT_OK


def split_size(size: int) -> tuple[int, int]:
    """Sellers and buyers for a population of ``size`` in the 900:1100 mix."""
    sellers = round(size * 0.45)
    return sellers, size - sellers


def bench_rows(sizes: Sequence[int], seed: int, areas: int, repeat: int) -> list[dict]:
    rows = []
    for size in sizes:
        sellers, buyers = split_size(size)
        scenario = generate_population(
            PopulationSpec(num_areas=min(areas, size), sellers=sellers, buyers=buyers, seed=seed)
        )
        best_one = best_two = None
        for _ in range(repeat):
            one, two = run_1smc(scenario), run_2smc(scenario)
            if best_one is None or one.composed_time < best_one.composed_time:
                best_one = one
            if best_two is None or two.composed_time < best_two.composed_time:
                best_two = two
        iters = best_one.clearings[0].iterations
        rows.append({
            "size": size,
            "sellers": sellers,
            "buyers": buyers,
            "areas": len(scenario.areas),
            "time_1smc": best_one.composed_time,
            "iters_1smc": iters,
            "time_per_iter_1smc": best_one.composed_time / iters,
            "time_2smc": best_two.composed_time,
            "welfare_1smc": best_one.welfare,
            "welfare_2smc": best_two.welfare,
            "converged": best_one.converged and best_two.converged,
        })
    return rows


def cmd_bench(args: argparse.Namespace) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()] if args.sizes else []
    if not sizes or any(s < 2 for s in sizes):
        raise UsageError("--sizes needs a comma-separated list of sizes >= 2")
    rows = bench_rows(sizes, args.seed, args.areas, args.repeat)
    header = list(rows[0])
    print(_format_table(header, [[r[h] for h in header] for r in rows]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "bench.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=header)
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        print(f"raw data written to {out / 'bench.csv'}")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feedermarket",
        description="Clear feeder-based local energy markets with two-step dual ascent.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, scenario_required: bool) -> None:
        p.add_argument("--scenario", required=scenario_required,
                       help="scenario JSON file (or the name of a bundled one, e.g. table1.json)")
        p.add_argument("--seed", type=int, default=0,
                       help="seed (actor scheduling for --distributed, population for generate/bench)")

    p = sub.add_parser("run", help="clear one scenario and write results")
    common(p, True)
    p.add_argument("--mode", choices=["2smc", "1smc"], default="2smc",
                   help="two-step (per area, then cross-area) or one single market")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--distributed", action="store_true",
                   help="run the message-passing actor simulation instead of the in-process engine")
    p.add_argument("--trace", action="store_true",
                   help="with --distributed, also write trace.csv with every message")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run 2SMC and 1SMC and tabulate welfare, energy and time")
    common(p, True)
    p.add_argument("--out", help="directory for both result sets and comparison.json")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("generate", help="write a seeded synthetic scenario")
    p.add_argument("--areas", type=int, default=10, help="number of areas (default 10)")
    p.add_argument("--sellers", type=int, default=900, help="prosumers in total (default 900)")
    p.add_argument("--buyers", type=int, default=1100, help="consumers in total (default 1100)")
    p.add_argument("--seed", type=int, default=42, help="generator seed (default 42)")
    p.add_argument("--out", required=True, help="scenario file to write")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="time both modes on generated populations of several sizes")
    p.add_argument("--sizes", default="20,200,2000", help="comma-separated player counts")
    p.add_argument("--seed", type=int, default=42, help="generator seed (default 42)")
    p.add_argument("--areas", type=int, default=10, help="areas per population (default 10)")
    p.add_argument("--repeat", type=int, default=3, help="keep the fastest of N runs (default 3)")
    p.add_argument("--out", help="directory for bench.csv")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, OneSidedMarket, DomainError, UsageError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
