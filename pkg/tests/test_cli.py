import csv
import io
import json
import subprocess
import sys

import pytest

from distvc.cli import (
    CSV_COLUMNS,
    EXIT_BAD_FILE,
    EXIT_CHECK_FAILED,
    EXIT_MISSING_FILE,
    EXIT_USAGE,
    main,
)
from distvc.graph import parse


def test_run_from_graph_file(tmp_path, capsys):
    g = tmp_path / "star.wvc"
    assert main(["gen", "star", "--delta", "8", "-o", str(g)]) == 0
    report = tmp_path / "r.json"
    assert main(["run", "--graph", str(g), "--epsilon", "1/2", "--gamma", "auto", "--report", str(report)]) == 0
    line = capsys.readouterr().out.strip()
    for key in ("cover_weight=", "dual_sum=", "ratio_bound=", "iterations=", "rounds=", "max_bits="):
        assert key in line
    d = json.loads(report.read_text())
    assert d["config"]["epsilon"] == "1/2"
    assert all(v["passed"] for v in d["verdicts"])


def test_run_generated_star(tmp_path, capsys):
    report = tmp_path / "r.json"
    code = main(
        ["run", "--gen", "star", "--delta", "256", "--weights", "unit", "--epsilon", "1", "--gamma", "half", "--report", str(report)]
    )
    assert code == 0
    d = json.loads(report.read_text())
    assert d["graph"] == {"n": 257, "m": 256, "max_degree": 256, "max_weight": 1}


@pytest.mark.parametrize("eps", ["0", "-1", "0.5", "abc"])
def test_run_rejects_bad_epsilon(tmp_path, capsys, eps):
    code = main(["run", "--gen", "star", "--delta", "4", "--epsilon", eps, "--report", str(tmp_path / "r.json")])
    assert code == EXIT_USAGE
    err = capsys.readouterr().err
    assert "error" in err and ("epsilon" in err or "rational" in err)


def test_run_two_approx_with_oracle(tmp_path):
    report = tmp_path / "r.json"
    code = main(
        ["run", "--gen", "gnp", "--n", "10", "--p", "1/2", "--weights", "uniform:8", "--seed", "3", "--two-approx", "--oracle", "--report", str(report)]
    )
    assert code == 0
    d = json.loads(report.read_text())
    n, W = d["graph"]["n"], d["graph"]["max_weight"]
    assert d["config"]["epsilon"] == f"1/{n * W + 1}"
    assert d["result"]["cover_weight"] <= 2 * d["oracle"]["opt"]


def test_run_bad_gamma_and_missing_graph(tmp_path):
    assert main(["run", "--gen", "star", "--delta", "4", "--epsilon", "1", "--gamma", "2", "--report", str(tmp_path / "r")]) == EXIT_USAGE
    assert main(["run", "--graph", str(tmp_path / "none.wvc"), "--epsilon", "1"]) == EXIT_MISSING_FILE
    bad = tmp_path / "bad.wvc"
    bad.write_text("p wvc 1 1\nv 0 1\ne 0 0\n")
    assert main(["run", "--graph", str(bad), "--epsilon", "1", "--report", str(tmp_path / "r")]) == EXIT_BAD_FILE


def _fresh_artifacts(tmp_path):
    report, trace = tmp_path / "r.json", tmp_path / "t.jsonl"
    code = main(
        ["run", "--gen", "gnp", "--n", "14", "--p", "1/2", "--weights", "uniform:8", "--seed", "5",
         "--epsilon", "1/8", "--gamma", "half", "--report", str(report), "--trace", str(trace)]
    )
    assert code == 0
    return report, trace


def test_verify_fresh_run(tmp_path, capsys):
    report, trace = _fresh_artifacts(tmp_path)
    capsys.readouterr()
    assert main(["verify", "--report", str(report), "--trace", str(trace), "--oracle"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS replay" in out and "PASS oracle_ratio" in out


def test_verify_tampered_trace(tmp_path, capsys):
    report, trace = _fresh_artifacts(tmp_path)
    lines = trace.read_text().splitlines()
    for i, line in enumerate(lines):
        d = json.loads(line)
        if d.get("variant") == "Budget" and d["amount"] != "0/1":
            d["amount"] = "1/999"
            lines[i] = json.dumps(d)
            where = (d["iteration"], d["sender"])
            break
    trace.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["verify", "--report", str(report), "--trace", str(trace)]) == EXIT_CHECK_FAILED
    out = capsys.readouterr().out
    assert f"FAIL replay: {{'iteration': {where[0]}" in out
    assert f"'vertex': {where[1]}" in out


def test_verify_file_errors(tmp_path):
    report, trace = _fresh_artifacts(tmp_path)
    assert main(["verify", "--report", str(tmp_path / "missing.json"), "--trace", str(trace)]) == EXIT_MISSING_FILE
    junk = tmp_path / "junk"
    junk.write_text("{not json")
    assert main(["verify", "--report", str(junk), "--trace", str(trace)]) == EXIT_BAD_FILE
    assert main(["verify", "--report", str(report), "--trace", str(junk)]) == EXIT_BAD_FILE
    assert EXIT_MISSING_FILE not in (0, EXIT_CHECK_FAILED, EXIT_BAD_FILE)


def test_verify_report_trace_mismatch(tmp_path):
    report, trace = _fresh_artifacts(tmp_path)
    d = json.loads(report.read_text())
    d["result"]["cover_weight"] += 1
    d["result"]["cover"] = d["result"]["cover"][1:]
    report.write_text(json.dumps(d))
    assert main(["verify", "--report", str(report), "--trace", str(trace)]) == EXIT_CHECK_FAILED


def _sweep(tmp_path, spec, name="s"):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(spec))
    out = tmp_path / f"{name}.csv"
    assert main(["sweep", str(p), "--out", str(out)]) == 0
    return out.read_bytes()


def test_sweep_empty_spec(tmp_path):
    assert _sweep(tmp_path, {}) == (",".join(CSV_COLUMNS) + "\r\n").encode()
    assert _sweep(tmp_path, {"experiments": []}, "e2") == (",".join(CSV_COLUMNS) + "\r\n").encode()


def test_sweep_delta_bound_dominates(tmp_path):
    spec = {
        "experiments": [
            {"family": "star", "params": {"delta": [16, 64, 256, 1024, 4096]}, "epsilons": ["1/2"], "gamma_modes": ["auto", "bcs"]}
        ]
    }
    text = _sweep(tmp_path, spec).decode()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 10
    assert [r["gamma_mode"] for r in rows[:2]] == ["auto", "bcs"]
    for r in rows:
        assert int(r["max_iterations"]) <= int(r["bound"])
        assert int(r["rounds"]) == 4 * int(r["max_iterations"])
    assert _sweep(tmp_path, spec, "again").decode() == text


def test_sweep_z_grows_with_inverse_epsilon(tmp_path):
    eps = ["1"] + [f"1/{2**k}" for k in range(1, 21)]
    spec = {"experiments": [{"family": "star", "params": {"delta": 16}, "epsilons": eps, "gamma_modes": ["auto"]}], "oracle": True}
    rows = list(csv.DictReader(io.StringIO(_sweep(tmp_path, spec).decode())))
    zs = [int(r["z"]) for r in rows]
    assert zs == sorted(zs) and zs[-1] > zs[0]
    for r in rows:
        # gamma = 1/2 here, so z = ceil(log2((2 + eps) / eps))
        num, den = map(int, r["epsilon"].split("/"))
        k = 1
        while 2**k * num < 2 * den + num:  # (1/2)**k > eps/(2+eps)
            k += 1
        assert int(r["z"]) == k
        assert r["opt_if_available"] == "1"


def test_sweep_parallel_matches_sequential(tmp_path):
    spec = {"experiments": [{"family": "gnp", "params": {"n": [8, 12], "p": "1/2"}, "seeds": [1, 2], "weights": "uniform:8",
                             "epsilons": ["1/2", "1/8"], "gamma_modes": ["auto", "bcs"]}], "oracle": True}
    seq = _sweep(tmp_path, spec, "seq")
    p = tmp_path / "par.json"
    p.write_text(json.dumps(spec))
    out = tmp_path / "par.csv"
    assert main(["sweep", str(p), "--out", str(out), "--workers", "2"]) == 0
    assert out.read_bytes() == seq


def test_sweep_bad_spec(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"experiments": [{"family": "wheel", "epsilons": ["1"]}]}')
    assert main(["sweep", str(p)]) == EXIT_USAGE
    p.write_text("[1, 2")
    assert main(["sweep", str(p)]) == EXIT_BAD_FILE
    assert main(["sweep", str(tmp_path / "nope.json")]) == EXIT_MISSING_FILE


def test_gen_stdout(capsys):
    assert main(["gen", "gnp", "--n", "6", "--p", "1/2", "--seed", "1", "--weights", "uniform:4"]) == 0
    g = parse(capsys.readouterr().out)
    assert g.n == 6


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "distvc.cli", "gen", "clique", "--n", "3"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("p wvc 3 3")
