"""End-to-end acceptance checks, one test per criterion."""

import filecmp
import json
import time

import numpy as np

from feedermarket.econ import (
    ConsumerParams,
    Participant,
    ProsumerParams,
    consumer_best_response,
    consumer_marginal,
    prosumer_best_response,
    prosumer_marginal,
    social_welfare,
)
from feedermarket.engine import (
    SolverConfig,
    clear_areas,
    clear_market,
    run_1smc,
    run_2smc,
    select_step2_participants,
    step1_only,
)
from feedermarket.oracle import bisect_equilibrium
from feedermarket.runtime import run_distributed
from feedermarket.scenario import (
    PopulationSpec,
    generate_population,
    load_scenario,
    save_scenario,
    table1,
    write_results,
)
from acceptance_report import report
from conftest import random_market, random_scenarios
from oracles import consumer_objective, grid_consumer, grid_prosumer, prosumer_objective

RANDOM_SCENARIOS = random_scenarios(50, seed=8)


def rel_err(x, ref):
    return abs(x - ref) / max(1.0, abs(ref))


def participants(players):
    out = []
    for p in players:
        lo, hi = (p.s_min, p.s_max) if isinstance(p, ProsumerParams) else (p.d_min, p.d_max)
        out.append(Participant(p, 0.0, lo, hi))
    return out


def oracle_optimum(scenario):
    sellers, buyers = participants(scenario.prosumers), participants(scenario.consumers)
    lam = bisect_equilibrium(sellers, buyers).price
    return social_welfare([(b.player, b.respond(lam)) for b in buyers],
                          [(s.player, s.respond(lam)) for s in sellers])


def test_criterion_1_table1_price_structure():
    sc = table1()
    start = time.perf_counter()
    r = run_2smc(sc)
    elapsed = time.perf_counter() - start
    lam = {a: o.price for a, o in r.area_outcomes.items()}
    lam_c = r.inter_outcome.price

    errors = {}
    for area in sc.areas:
        sellers, buyers = sc.players_in(area)
        ref = bisect_equilibrium(participants(sellers), participants(buyers)).price
        errors[area] = rel_err(lam[area], ref)
    sellers, buyers = select_step2_participants(sc, clear_areas(sc, sc.solver))
    errors["C"] = rel_err(lam_c, bisect_equilibrium(sellers, buyers).price)

    ordered = lam[2] > lam[1] and lam[2] > lam[3] and max(lam[1], lam[3]) < lam_c < lam[2]
    ok = ordered and max(errors.values()) <= 1e-3 and elapsed < 1.0
    report(1, "Table 1 price structure", ok,
           f"lambda 1/2/3/C = {lam[1]:.4f}/{lam[2]:.4f}/{lam[3]:.4f}/{lam_c:.4f}, "
           f"max oracle rel err {max(errors.values()):.1e} (tol 1e-3), {elapsed:.3f} s (< 1 s)")


def test_criterion_2_step2_participants():
    sc = table1()
    r = run_2smc(sc)
    invited = set(r.step2_invited)
    expected = {c.id for c in sc.consumers if c.area_id == 2}
    expected |= {p.id for p in sc.prosumers if p.area_id in (1, 3)}
    report(2, "step-2 participant set", invited == expected,
           f"invited {sorted(invited)}; expected {sorted(expected)}")


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(20240611)
    cfg = SolverConfig()
    start = time.perf_counter()
    worst_price = worst_traded = worst_balance = 0.0
    all_converged = True
    for _ in range(200):
        sellers, buyers = random_market(rng)
        o = clear_market(sellers, buyers, cfg)
        ref = bisect_equilibrium(sellers, buyers)
        all_converged &= o.converged
        worst_price = max(worst_price, rel_err(o.price, ref.price))
        worst_traded = max(worst_traded, abs(min(o.total_supply, o.total_demand) - ref.traded))
        if o.converged:
            slack = abs(o.total_supply - o.total_demand) - (cfg.epsilon / o.eta + 1e-9)
            worst_balance = max(worst_balance, slack)
    elapsed = time.perf_counter() - start
    ok = (all_converged and worst_price <= 1e-3 and worst_traded <= 1e-2
          and worst_balance <= 0 and elapsed < 60)
    report(3, "oracle equivalence (200 markets)", ok,
           f"worst price rel err {worst_price:.1e} (tol 1e-3), worst traded err {worst_traded:.1e} kWh "
           f"(tol 1e-2), balance within eps/eta: {worst_balance <= 0}, {elapsed:.1f} s (< 60 s)")


def test_criterion_4_welfare_sandwich():
    failures = []
    energy_ok = True
    worst_gap = 0.0
    for sc in [table1(), *RANDOM_SCENARIOS]:
        r = run_2smc(sc)
        base = step1_only(r)
        best = oracle_optimum(sc)
        gap = (r.welfare - best) / abs(best)
        worst_gap = max(worst_gap, gap)
        if not (base.welfare - 1e-9 <= r.welfare and gap <= 1e-6):
            failures.append(sc.name)
        energy_ok &= r.traded_energy >= base.traded_energy
    t1 = run_2smc(table1())
    one = run_1smc(table1())
    ok = not failures and energy_ok
    report(4, "welfare sandwich (51 scenarios)", ok,
           f"violations {failures or 'none'}, max excess over optimum {worst_gap:.1e} rel (tol 1e-6), "
           f"traded(2SMC) >= traded(step 1) everywhere: {energy_ok}; Table 1 welfare "
           f"2SMC {t1.welfare:.2f} vs 1SMC {one.welfare:.2f}")


def test_criterion_5_scaling_direction():
    start = time.perf_counter()
    sc = generate_population(PopulationSpec(num_areas=10, sellers=900, buyers=1100, seed=42))
    two = min(run_2smc(sc).composed_time for _ in range(3))
    one = min(run_1smc(sc).composed_time for _ in range(3))
    elapsed = time.perf_counter() - start
    ok = two < one and elapsed < 120
    report(5, "2000-player composed time", ok,
           f"2SMC {two:.3f} s vs 1SMC {one:.3f} s ({100 * (two - one) / one:+.0f}%), "
           f"best of 3, total {elapsed:.1f} s (< 120 s)")


def test_criterion_6_distributed_equivalence():
    mismatches = []
    for i, sc in enumerate([table1(), *RANDOM_SCENARIOS]):
        if run_distributed(sc, seed=i).result.comparable() != run_2smc(sc).comparable():
            mismatches.append(sc.name)
    report(6, "distributed == in-process (51 scenarios)", not mismatches,
           f"bit-exact mismatches: {mismatches or 'none'}")


def test_criterion_7_best_response_kkt():
    rng = np.random.default_rng(777)
    kkt_fail = grid_fail = 0
    for _ in range(1000):
        lam, k, lo = rng.uniform(0, 25), rng.uniform(0, 60), rng.uniform(0, 10)
        hi = lo + rng.uniform(0, 120)
        c = ConsumerParams("c", 1, rng.uniform(5, 20), rng.uniform(0.03, 0.2), 0, k + hi)
        p = ProsumerParams("p", 1, rng.uniform(0.001, 0.01), rng.uniform(0, 9), 0, 0, k + hi)
        qd = consumer_best_response(c, lam, k, lo, hi)
        qs = prosumer_best_response(p, lam, k, lo, hi)
        # consumers gain from more energy while marginal utility exceeds the price
        dv = consumer_marginal(c, k + qd) - lam
        sv = lam - prosumer_marginal(p, k + qs)
        for q, gain in ((qd, dv), (qs, sv)):
            if lo < q < hi:
                kkt_fail += abs(gain) > 1e-9 * max(1.0, lam)
            elif q == hi:
                kkt_fail += gain < -1e-9
            else:
                kkt_fail += gain > 1e-9
        grid_fail += consumer_objective(c, lam, k, qd) < grid_consumer(c, lam, k, lo, hi)[1] - 1e-6
        grid_fail += prosumer_objective(p, lam, k, qs) < grid_prosumer(p, lam, k, lo, hi)[1] - 1e-6
    report(7, "best-response KKT (1000 instances)", kkt_fail == 0 and grid_fail == 0,
           f"KKT violations {kkt_fail} (tol 1e-9), grid-search losses {grid_fail} (tol 1e-6)")


def _strip_timing(path):
    doc = json.loads(path.read_text())
    doc.pop("timing")
    for clearing in doc["clearings"].values():
        clearing.pop("wall_time")
    return doc


def test_criterion_8_determinism_and_round_trip(tmp_path):
    problems = []
    for sc in (table1(), RANDOM_SCENARIOS[0]):
        for mode, run in (("2smc", run_2smc), ("1smc", run_1smc)):
            a, b = tmp_path / f"{sc.name}-{mode}-a", tmp_path / f"{sc.name}-{mode}-b"
            write_results(sc, run(sc), a)
            write_results(sc, run(sc), b)
            if _strip_timing(a / "summary.json") != _strip_timing(b / "summary.json"):
                problems.append(f"{sc.name}/{mode} summary")
            csvs = sorted(p.name for p in a.glob("*.csv"))
            _, diff, errs = filecmp.cmpfiles(a, b, csvs, shallow=False)
            problems += [f"{sc.name}/{mode}/{n}" for n in diff + errs]
        if load_scenario(save_scenario(sc, tmp_path / f"{sc.name}.json")) != sc:
            problems.append(f"{sc.name} round-trip")
    report(8, "determinism and round-trip", not problems, f"differences: {problems or 'none'}")
