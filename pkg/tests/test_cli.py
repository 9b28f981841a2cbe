import json
import subprocess
import sys

import pytest

from mpquant.cli import build_parser, main

BASKET = """\
model:
  name: basket2d
  params: {r: 0.04, sigma1: 0.3, sigma2: 0.4, rho: 0.5}
time: {horizon: 1.0, steps: 3}
levels: 6
payoff:
  kind: vector_function
  weights: [0.5, 0.5]
  rate: 0.04
  calls: [90, 100]
  puts: [100, 110]
  benchmarks: {call: {100: 13.9197}}
verify: {levels: 4, step: 1, samples: 20000, mixtures: 5}
"""

HEDGE = """\
model:
  name: black_scholes
  params: {mu: 0.2, sigma: 0.3, x0: 100.0}
time: {horizon: 0.5, steps: 4}
levels: 20
bsde:
  driver: {name: bs_hedge, r: 0.1, mu: 0.2, sigma: 0.3}
  terminal: {kind: call, strike: 100.0}
  surfaces: true
"""


def _config(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run(tmp_path, command, text, out="out", extra=()):
    cfg = _config(tmp_path, text)
    out_dir = tmp_path / out
    return main([command, "--config", cfg, "--out", str(out_dir), *extra]), out_dir


def test_parser_lists_subcommands():
    parser = build_parser()
    for cmd in ("build-chain", "price", "bsde", "verify", "export"):
        args = parser.parse_args([cmd, "--config", "x.yaml"])
        assert args.command == cmd


def test_build_chain(tmp_path):
    code, out = _run(tmp_path, "build-chain", BASKET)
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"grid_0.csv", "grid_3.csv", "transition_2.csv", "manifest.json",
            "config.yaml"} <= names
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "build-chain"
    assert {"build_chain", "write", "total"} <= set(man["timings"])
    assert man["chain"]["levels"] == [[1, 1], [6, 6], [6, 6], [6, 6]]


def test_price_writes_ladder(tmp_path, capsys):
    code, out = _run(tmp_path, "price", BASKET)
    assert code == 0
    lines = (out / "prices.csv").read_text().splitlines()
    assert lines[0] == "option,strike,price,benchmark,relative_error"
    assert len(lines) == 5
    row = next(l for l in lines if l.startswith("call,100"))
    assert row.split(",")[3] == "13.9197"
    assert "call" in capsys.readouterr().out


def test_bsde_and_surfaces(tmp_path):
    code, out = _run(tmp_path, "bsde", HEDGE)
    assert code == 0
    head, vals = (out / "bsde.csv").read_text().splitlines()
    assert head == "y0,z0_1"
    y0 = float(vals.split(",")[0])
    assert 5.0 < y0 < 15.0
    assert (out / "bsde_4.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["result"]["y0"] == y0


def test_verify_passes(tmp_path):
    code, out = _run(tmp_path, "verify", BASKET)
    report = (out / "verify.txt").read_text()
    assert code == 0, report
    assert report.count("PASS") >= 7 and "FAIL" not in report


def test_export_lambda(tmp_path):
    code, out = _run(tmp_path, "export", BASKET)
    assert code == 0
    assert (out / "lambda_0.csv").read_text().startswith("row,col,p,value\n")


def test_deterministic_outputs(tmp_path):
    _, a = _run(tmp_path, "price", BASKET, out="a", extra=("--seed", "5", "--threads", "1"))
    _, b = _run(tmp_path, "price", BASKET, out="b", extra=("--seed", "5", "--threads", "3"))
    for name in ("prices.csv", "grid_2.csv", "transition_1.csv"):
        if (a / name).exists():
            assert (a / name).read_bytes() == (b / name).read_bytes()
    _, c = _run(tmp_path, "build-chain", BASKET, out="c")
    _, d = _run(tmp_path, "build-chain", BASKET, out="d")
    for k in range(3):
        assert (c / f"transition_{k}.csv").read_bytes() == (d / f"transition_{k}.csv").read_bytes()


def test_config_error_exit_2(tmp_path, capsys):
    code, _ = _run(tmp_path, "build-chain", BASKET.replace(", sigma2: 0.4", ""))
    assert code == 2
    assert "sigma2" in capsys.readouterr().err
    code, _ = _run(tmp_path, "price", HEDGE)
    assert code == 2
    assert main(["build-chain", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["build-chain", "--config", _config(tmp_path, BASKET), "--seed", "-1"]) == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    text = BASKET + "optimizer: {max_newton_iters: 0, max_lloyd_iters: 1}\n"
    code, _ = _run(tmp_path, "build-chain", text)
    assert code == 3
    assert "NonConvergence" in capsys.readouterr().err


def test_capacity_exit_4(tmp_path):
    code, _ = _run(tmp_path, "build-chain", BASKET + "cell_cap: 10\n")
    assert code == 4


def test_module_entry_point(tmp_path):
    cfg = _config(tmp_path, BASKET)
    proc = subprocess.run([sys.executable, "-m", "mpquant", "build-chain", "--config", cfg,
                           "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "mpquant", "--version"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("mpquant ")
