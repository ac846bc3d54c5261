import json

import pytest

from bnclab.cli import main
from bnclab.lab import save_config
from test_lab import small


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    save_config(small(), path)
    return str(path)


def test_gen_and_solve(tmp_path, capsys):
    out = tmp_path / "inst"
    assert main(["gen", "--family", "knapsack", "--n1", "6", "--m", "1", "--count", "2", "--out", str(out)]) == 0
    files = sorted(out.iterdir())
    assert len(files) == 2
    trace = tmp_path / "t.jsonl"
    capsys.readouterr()
    assert main(["solve", str(files[0]), "--R", "1", "--kappa", "2", "--oracle", "--trace", str(trace)]) == 0
    text = capsys.readouterr().out
    value = float(text.split("value")[1].split()[0])
    oracle = float(text.split("oracle")[1].split()[1])
    assert value == pytest.approx(oracle, abs=1e-6)
    head = json.loads(trace.read_text().splitlines()[0])
    assert head["schema"] == "bnclab.trace/1"


def test_solve_missing_file(tmp_path, capsys):
    assert main(["solve", str(tmp_path / "nope.mip")]) == 2
    assert "nope.mip" in capsys.readouterr().err


def test_bounds_command(tmp_path, capsys):
    inp = tmp_path / "b.json"
    inp.write_text(json.dumps({"schema": "bnclab.bounds/1", "M": 6, "N": 20,
                               "types": [{"rho": 10, "W": 4, "structure": "linear"}], "Q": [40]}))
    assert main(["bounds", str(inp), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "linear_pdim_bound" in out and "r_bound" in out
    assert (tmp_path / "o" / "bounds.csv").read_text().startswith("# schema: bnclab.report/1 bounds")


def test_bounds_bad_input(tmp_path):
    inp = tmp_path / "b.json"
    inp.write_text(json.dumps({"M": 1, "types": [{"rho": 2, "W": 1}]}))
    assert main(["bounds", str(inp)]) == 2


def test_scan_and_census(tmp_path, cfg_path):
    assert main(["scan", "--config", cfg_path, "--out", str(tmp_path / "s"), "--grid", "32"]) == 0
    assert (tmp_path / "s" / "scans.csv").exists()
    assert main(["census", "--config", cfg_path, "--out", str(tmp_path / "c"), "--samples", "50",
                 "--figures"]) == 0
    summary = json.loads((tmp_path / "c" / "census_summary.json").read_text())
    assert summary["samples"] == 50 and (tmp_path / "c" / "census.png").exists()


def test_erm_and_gap(tmp_path, cfg_path):
    assert main(["erm", "--config", cfg_path, "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "costs.csv").exists()
    assert main(["gap", "--config", cfg_path, "--out", str(tmp_path / "g")]) == 0
    assert "gap" in json.loads((tmp_path / "g" / "summary.json").read_text())


def test_verify_fault_exit_code(tmp_path, cfg_path, capsys):
    code = main(["verify", "--config", cfg_path, "--out", str(tmp_path / "v"), "--quick", "--no-gap",
                 "--fault", "corrupt-cut"])
    assert code == 1
    assert "FAIL  cut-validity" in capsys.readouterr().out


def test_bad_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"tuner": {"budget": 0}}))
    assert main(["erm", "--config", str(path)]) == 2
