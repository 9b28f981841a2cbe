"""Command-line entry point: ``mpquant <subcommand> --config run.yaml``.

Subcommands

* ``build-chain``: grids and transition matrices of every step.
* ``price``: strike ladder of the configured payoff (``prices.csv``).
* ``bsde``: backward sweep, (Y0, Z0) in ``bsde.csv``.
* ``verify``: reference checks of the chain; exit 0 iff all pass.
* ``export``: everything ``build-chain`` writes plus the Lambda tensors.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 capacity exceeded.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, piecewise
from .bsde import (BsdeProblem, bs_hedge_driver, chain_lambda, chassagneux_driver,
                   chassagneux_terminal, solve_bsde, zero_driver)
from .chain import build_chain, default_cubature
from .config import RunConfig, dump_config, parse_config
from .errors import (CapacityExceeded, ConfigError, DomainError, InvalidParameter,
                     MissingParameter, ModelDomainError, NonConvergence, NotApplicable,
                     QuantizationError, ZeroConditioningMass)
from .gaussian import gauss_hermite_rule, load_grid_file
from .models import TimeGrid, builtin_model
from .persist import (chain_manifest, write_chain, write_lambda, write_manifest,
                      write_rows)
from .piecewise import PiecewiseRule
from .pricing import Payoff, format_ladder, strike_ladder
from .quantizer import OptimizerOptions
from .verify import run_checks

log = logging.getLogger("mpquant")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAPACITY = 0, 2, 3, 4
COMMANDS = ("build-chain", "price", "bsde", "verify", "export")


class _Clock:
    def __init__(self):
        self.phases = {}

    def __call__(self, name):
        clock = self

        class _Phase:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.phases[name] = clock.phases.get(name, 0.0) + time.perf_counter() - self.t0
        return _Phase()


def make_cubature(cfg: RunConfig, q: int):
    spec = cfg.cubature or {}
    kind = spec.get("kind", "auto")
    if kind == "auto":
        return default_cubature(q)
    if kind == "piecewise":
        if q != 2:
            raise InvalidParameter("piecewise cubature needs a model with two noises")
        return PiecewiseRule(panels=spec.get("panels", 6), order=spec.get("order", 12),
                             cutoff=spec.get("cutoff", 8.5))
    if kind == "gauss_hermite":
        if q < 2:
            return default_cubature(q)
        return gauss_hermite_rule(q - 1, spec.get("points_per_axis", 16))
    rule = load_grid_file(spec["path"])
    if rule.dimension != q - 1:
        raise InvalidParameter(f"grid file has dimension {rule.dimension}; the model needs {q - 1}")
    return rule


def make_chain(cfg: RunConfig, levels=None, clock: _Clock | None = None):
    model = builtin_model(cfg.model["name"], cfg.model.get("params", {}))
    grid = TimeGrid(float(cfg.time["horizon"]), int(cfg.time["steps"]))
    opts = OptimizerOptions(**cfg.optimizer)
    cub = make_cubature(cfg, model.q)
    t0 = time.perf_counter()
    chain = build_chain(model, grid, cfg.levels if levels is None else levels, cub, opts,
                        transition=cfg.transition, cell_cap=cfg.cell_cap)
    if clock is not None:
        clock.phases["build_chain"] = clock.phases.get("build_chain", 0.0) + time.perf_counter() - t0
    return chain


def make_payoff(spec: dict, horizon: float) -> Payoff:
    return Payoff(spec["kind"], 0.0, float(spec["rate"]), float(spec.get("maturity", horizon)),
                  weights=tuple(spec.get("weights", ())), component=int(spec.get("component", 0)))


def make_problem(spec: dict, horizon: float) -> BsdeProblem:
    drv, term = spec["driver"], spec["terminal"]
    name = drv["name"]
    if name == "zero":
        driver = zero_driver()
    elif name == "bs_hedge":
        driver = bs_hedge_driver(drv["r"], drv["mu"], drv["sigma"])
    else:
        driver = chassagneux_driver(int(drv["d"]))
    kind = term["kind"]
    if kind == "chassagneux":
        terminal = chassagneux_terminal(horizon)
    else:
        strike, comp = float(term["strike"]), int(term.get("component", 0))
        sign = 1.0 if kind == "call" else -1.0

        def terminal(x):
            return np.maximum(sign * (np.asarray(x)[:, comp] - strike), 0.0)
    return BsdeProblem(driver, terminal, name=f"{name}/{kind}")


def _benchmarks(spec: dict) -> dict:
    out = {}
    for opt, table in (spec.get("benchmarks") or {}).items():
        for k, v in table.items():
            out[(opt, float(k))] = float(v)
    return out


def _write_text(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n")


def _manifest(cfg: RunConfig, command: str, chain, clock: _Clock, extra=None) -> dict:
    out = {"version": __version__, "command": command, "config": cfg.to_dict(),
           "seed": cfg.seed, "threads": cfg.threads}
    if chain is not None:
        out["chain"] = chain_manifest(chain)
    out["timings"] = {k: round(v, 6) for k, v in clock.phases.items()}
    out.update(extra or {})
    return out


# ---------------------------------------------------------------------------
# subcommands

def _build(cfg, out, clock):
    chain = make_chain(cfg, clock=clock)
    with clock("write"):
        files = write_chain(out, chain)
    return chain, {"files": files}


def _price(cfg, out, clock):
    if cfg.payoff is None:
        raise MissingParameter("price needs a payoff section")
    chain = make_chain(cfg, clock=clock)
    spec = cfg.payoff
    with clock("price"):
        template = make_payoff(spec, chain.time_grid.horizon)
        rows = strike_ladder(chain, template, spec.get("calls", []), spec.get("puts", []),
                             _benchmarks(spec))
    write_rows(out / "prices.csv", ["option", "strike", "price", "benchmark", "relative_error"],
               [[r.option, float(r.strike), float(r.price),
                 "" if r.benchmark is None else float(r.benchmark),
                 "" if r.relative_error is None else float(r.relative_error)] for r in rows])
    table = format_ladder(rows)
    _write_text(out / "summary.txt", table)
    print(table)
    return chain, {"files": ["prices.csv", "summary.txt"]}


def _bsde(cfg, out, clock):
    if cfg.bsde is None:
        raise MissingParameter("bsde needs a bsde section")
    chain = make_chain(cfg, clock=clock)
    spec = cfg.bsde
    with clock("lambda"):
        method = spec.get("lambda_method", "auto")
        lambdas = [chain_lambda(chain, k, method) for k in range(chain.steps)]
    with clock("bsde"):
        sol = solve_bsde(chain, make_problem(spec, chain.time_grid.horizon), lambdas)
    q = chain.model.q
    z0 = sol.z0
    write_rows(out / "bsde.csv", ["y0"] + [f"z0_{p + 1}" for p in range(q)],
               [[sol.y0] + [float(v) for v in z0]])
    files = ["bsde.csv"]
    if spec.get("surfaces"):
        for k in range(chain.steps + 1):
            name = f"bsde_{k}.csv"
            z = sol.z[k]
            write_rows(out / name, ["flat", "y"] + [f"z{p + 1}" for p in range(q)],
                       [[i, float(sol.y[k][i])] + [float(v) for v in z[i]]
                        for i in range(chain.grids[k].size)])
            files.append(name)
    summary = (f"{'Y0':>14} " + " ".join(f"{'Z0_' + str(p + 1):>14}" for p in range(q)) + "\n"
               + f"{sol.y0:14.6f} " + " ".join(f"{v:14.6f}" for v in z0))
    _write_text(out / "summary.txt", summary)
    print(summary)
    files.append("summary.txt")
    return chain, {"files": files, "result": {"y0": sol.y0, "z0": [float(v) for v in z0]},
                   "lambda_centering": [float(lam.centering_defect) for lam in lambdas]}


def _verify(cfg, out, clock):
    chain = make_chain(cfg, clock=clock)
    ver = cfg.verify
    oracle_levels = ver.get("levels", 5)
    with clock("oracle_chain"):
        small = make_chain(cfg, levels=oracle_levels)
    step = ver.get("step")
    if step is None:
        step = small.steps // 2
    if step >= small.steps:
        raise InvalidParameter(f"verify.step {step} outside [0, {small.steps})")
    with clock("verify"):
        results = run_checks(chain, small, step, samples=ver.get("samples", 10**5),
                             seed=cfg.seed, mixtures=ver.get("mixtures", 20))
    report = "\n".join(r.line() for r in results)
    _write_text(out / "verify.txt", report)
    print(report)
    ok = all(r.passed for r in results)
    return chain, {"files": ["verify.txt"], "passed": ok,
                   "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail}
                              for r in results]}


def _export(cfg, out, clock):
    chain, extra = _build(cfg, out, clock)
    method = (cfg.bsde or {}).get("lambda_method", "auto")
    with clock("lambda"):
        for k in range(chain.steps):
            write_lambda(out / f"lambda_{k}.csv", chain_lambda(chain, k, method).values)
            extra["files"].append(f"lambda_{k}.csv")
    return chain, extra


_HANDLERS = {"build-chain": _build, "price": _price, "bsde": _bsde, "verify": _verify,
             "export": _export}


def run(cfg: RunConfig, command: str) -> int:
    """Execute one subcommand and write its artifacts; returns the exit code."""
    if command not in _HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    out = Path(cfg.output or "out")
    out.mkdir(parents=True, exist_ok=True)
    piecewise.set_threads(cfg.threads)
    clock = _Clock()
    t0 = time.perf_counter()
    chain, extra = _HANDLERS[command](cfg, out, clock)
    clock.phases["total"] = time.perf_counter() - t0
    _write_text(out / "config.yaml", dump_config(cfg))
    write_manifest(out, _manifest(cfg, command, chain, clock, extra))
    if command == "verify" and not extra["passed"]:
        return EXIT_NUMERIC
    return EXIT_OK


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, CapacityExceeded):
        return EXIT_CAPACITY
    if isinstance(exc, (ConfigError, MissingParameter, InvalidParameter)):
        return EXIT_CONFIG
    if isinstance(exc, (NonConvergence, ZeroConditioningMass, DomainError, ModelDomainError,
                        NotApplicable, QuantizationError, FloatingPointError)):
        return EXIT_NUMERIC
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpquant", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads, 0 = one per CPU")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise InvalidParameter("--seed must be an unsigned 64-bit integer")
        if args.threads is not None and args.threads < 0:
            raise InvalidParameter("--threads must be >= 0")
        cfg = parse_config(args.config, overrides={"output": args.out, "threads": args.threads,
                                                   "seed": args.seed})
        return run(cfg, args.command)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = exit_code(exc)
        if code == 1:
            raise
        violations = getattr(exc, "violations", None)
        if violations:
            for v in violations:
                print(f"error: {v}", file=sys.stderr)
        else:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
