import csv
import json
import subprocess
import sys

from feedermarket.cli import comparison_rows, main, split_size
from feedermarket.engine import run_1smc, run_2smc
from feedermarket.scenario import load_scenario, save_scenario


def summary(path):
    doc = json.loads((path / "summary.json").read_text())
    doc.pop("timing")
    for clearing in doc["clearings"].values():
        clearing.pop("wall_time")
    return doc


class TestRun:
    def test_table1(self, tmp_path, capsys):
        assert main(["run", "--scenario", "table1.json", "--out", str(tmp_path)]) == 0
        doc = json.loads((tmp_path / "summary.json").read_text())
        lam = doc["area_prices"]
        assert lam["2"] > doc["lambda_C"] > max(lam["1"], lam["3"])
        assert "lambda_C" in capsys.readouterr().out

    def test_single_market(self, tmp_path):
        assert main(["run", "--scenario", "table1.json", "--mode", "1smc", "--out", str(tmp_path)]) == 0
        assert "lambda_T" in json.loads((tmp_path / "summary.json").read_text())

    def test_distributed_matches_in_process(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--scenario", "table1.json", "--out", str(a)]) == 0
        assert main(["run", "--scenario", "table1.json", "--out", str(b), "--distributed",
                     "--trace", "--seed", "9"]) == 0
        assert summary(a) == summary(b)
        for name in ["allocations.csv", "trajectory_1.csv", "trajectory_C.csv"]:
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (b / "trace.csv").exists()

    def test_distributed_single_market_is_usage_error(self, tmp_path):
        assert main(["run", "--scenario", "table1.json", "--mode", "1smc", "--distributed",
                     "--out", str(tmp_path)]) == 1

    def test_one_sided_scenario(self, tmp_path, capsys):
        sc = tmp_path / "buyers.json"
        sc.write_text(json.dumps({
            "name": "buyers", "areas": [1], "prosumers": [],
            "consumers": [{"id": "C1", "area": 1, "omega": 12, "mu": 0.05, "d_max": 80}],
        }))
        assert main(["run", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 1
        assert "OneSidedMarket" in capsys.readouterr().err

    def test_bad_scenario(self, tmp_path, capsys):
        assert main(["run", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_not_converged_exit_code(self, tmp_path):
        sc = load_scenario("table1.json").with_solver(max_iters=3)
        path = save_scenario(sc, tmp_path / "short.json")
        assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")]) == 2
        assert (tmp_path / "o" / "summary.json").exists()


class TestCompare:
    def test_table(self, tmp_path, capsys):
        assert main(["compare", "--scenario", "table1.json", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "Social Welfare" in out and "Traded Energy (kWh)" in out
        doc = json.loads((tmp_path / "comparison.json").read_text())
        assert [r["metric"] for r in doc["rows"]][0] == "Social Welfare"
        assert (tmp_path / "2smc" / "summary.json").exists()
        assert (tmp_path / "1smc" / "summary.json").exists()

    def test_rows(self, t1):
        rows = comparison_rows(run_2smc(t1), run_1smc(t1))
        energy = rows[1]
        assert energy[1] > energy[2] and energy[3].startswith("+ ")


class TestGenerate:
    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["generate", "--sellers", "90", "--buyers", "110", "--out", str(a)]) == 0
        assert main(["generate", "--sellers", "90", "--buyers", "110", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert main(["run", "--scenario", str(a), "--out", str(tmp_path / "r")]) == 0

    def test_invalid(self, tmp_path):
        assert main(["generate", "--areas", "0", "--out", str(tmp_path / "x.json")]) == 1


class TestBench:
    def test_small(self, tmp_path, capsys):
        assert main(["bench", "--sizes", "20,60", "--repeat", "1", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "bench.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["size"]) for r in rows] == [20, 60]
        assert float(rows[0]["time_per_iter_1smc"]) > 0

    def test_empty_sizes(self):
        assert main(["bench", "--sizes", ""]) == 1

    def test_split(self):
        assert split_size(2000) == (900, 1100)


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "feedermarket.cli", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for cmd in ("run", "compare", "generate", "bench"):
        assert cmd in out
