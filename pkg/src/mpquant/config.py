"""Run configuration: YAML schema, validation and round-trip serialization.

A configuration looks like::

    model:
      name: basket2d
      params: {r: 0.04, sigma1: 0.3, sigma2: 0.4, rho: 0.5}
    time: {horizon: 1.0, steps: 10}
    levels: 20
    payoff:
      kind: vector_function
      weights: [0.5, 0.5]
      rate: 0.04
      calls: [80, 85, 90, 95, 100]
      puts: [100, 105, 110, 115, 120]

Unknown keys are rejected; every violation found is reported at once.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ParseError, ValidationError
from .models import BUILTIN_MODELS, model_parameter_names

_TOP_KEYS = {"model", "time", "levels", "cubature", "optimizer", "payoff", "bsde", "verify",
             "output", "seed", "threads", "cell_cap", "transition"}
_SECTION_KEYS = {
    "model": {"name", "params"},
    "time": {"horizon", "steps"},
    "cubature": {"kind", "points_per_axis", "panels", "order", "cutoff", "path"},
    "optimizer": {"tolerance", "max_newton_iters", "max_lloyd_iters", "max_halvings",
                  "probability_floor", "init"},
    "payoff": {"kind", "weights", "component", "rate", "maturity", "calls", "puts", "benchmarks"},
    "bsde": {"driver", "terminal", "surfaces", "lambda_method"},
    "verify": {"levels", "step", "samples", "mixtures"},
}
_DRIVERS = {"zero": set(), "bs_hedge": {"r", "mu", "sigma"}, "chassagneux": {"d"}}
_TERMINALS = {"call": {"strike", "component"}, "put": {"strike", "component"},
              "chassagneux": set()}
CUBATURE_KINDS = ("auto", "piecewise", "gauss_hermite", "file")


@dataclass
class RunConfig:
    model: dict
    time: dict
    levels: object
    cubature: dict = field(default_factory=lambda: {"kind": "auto"})
    optimizer: dict = field(default_factory=dict)
    payoff: dict | None = None
    bsde: dict | None = None
    verify: dict = field(default_factory=dict)
    output: str | None = None
    seed: int = 0
    threads: int = 0
    cell_cap: int = 10**6
    transition: str = "auto"
    source: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        out = {"model": self.model, "time": self.time, "levels": self.levels,
               "cubature": self.cubature, "optimizer": self.optimizer,
               "verify": self.verify, "seed": self.seed, "threads": self.threads,
               "cell_cap": self.cell_cap, "transition": self.transition}
        for key in ("payoff", "bsde", "output"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return copy.deepcopy(out)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# ---------------------------------------------------------------------------
# parsing

def _line_map(text: str) -> dict:
    """Key path (tuple) -> 1-based line of the key, from the YAML node tree."""
    out = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                out[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out
    if root is not None:
        walk(root, ())
    return out


def _where(lines, path) -> str:
    name = ".".join(str(p) for p in path)
    line = lines.get(tuple(path))
    return f"{name} (line {line})" if line else name


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def load_config_text(text: str, source: str | None = None) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ParseError(f"{source or '<config>'}: malformed YAML{where}: {problem}") from None
    if not isinstance(data, dict):
        raise ParseError(f"{source or '<config>'}: top level must be a mapping")
    return validate(data, _line_map(text), source)


def parse_config(path=None, text: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read and validate a configuration file (or inline text) plus flag overrides."""
    if text is None:
        if path is None:
            raise ParseError("no configuration given")
        p = Path(path)
        if not p.is_file():
            raise ParseError(f"configuration file {path} does not exist")
        text = p.read_text()
        source = str(p)
    else:
        source = "<inline>"
    cfg = load_config_text(text, source)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def validate(data: dict, lines: dict | None = None, source: str | None = None) -> RunConfig:
    lines = lines or {}
    errs: list[str] = []

    def unknown(section: dict, allowed, path):
        for k in section:
            if k not in allowed:
                errs.append(f"unknown key {_where(lines, path + (k,))}")

    unknown(data, _TOP_KEYS, ())
    for key in ("model", "time", "levels"):
        if key not in data:
            errs.append(f"missing required key {key}")

    sections = {}
    for name, allowed in _SECTION_KEYS.items():
        sec = data.get(name)
        if sec is None:
            sections[name] = {}
            continue
        if not isinstance(sec, dict):
            errs.append(f"{_where(lines, (name,))} must be a mapping")
            sections[name] = {}
            continue
        unknown(sec, allowed, (name,))
        sections[name] = sec

    model = sections["model"]
    name = model.get("name")
    params = model.get("params", {}) or {}
    d = None
    if "model" in data:
        if name not in BUILTIN_MODELS:
            errs.append(f"{_where(lines, ('model', 'name'))}: unknown model {name!r}; "
                        f"expected one of {', '.join(BUILTIN_MODELS)}")
        elif not isinstance(params, dict):
            errs.append(f"{_where(lines, ('model', 'params'))} must be a mapping")
        else:
            req, opt = model_parameter_names(name)
            for k in req:
                if k not in params:
                    errs.append(f"missing model parameter {k} (model.params.{k})")
            for k, v in params.items():
                where = _where(lines, ("model", "params", k))
                if k not in req and k not in opt:
                    errs.append(f"unknown key {where}")
                elif k == "truncation":
                    if v not in ("full", "none"):
                        errs.append(f"{where}: truncation must be 'full' or 'none'")
                elif not _is_number(v):
                    errs.append(f"{where}: expected a number, got {v!r}")
            errs.extend(_model_domain(name, params, lines))
            d = {"black_scholes": 1, "basket2d": 2, "heston": 2}.get(name)
            if name == "unit_brownian" and _is_int(params.get("d")):
                d = params["d"]

    tsec = sections["time"]
    if "time" in data:
        hz, steps = tsec.get("horizon"), tsec.get("steps")
        if not (_is_number(hz) and hz > 0):
            errs.append(f"{_where(lines, ('time', 'horizon'))}: horizon must be a positive number")
        if not (_is_int(steps) and steps >= 1):
            errs.append(f"{_where(lines, ('time', 'steps'))}: steps must be a positive integer, "
                        f"got {steps!r}")
    if "levels" in data:
        errs.extend(_check_levels(data["levels"], d, tsec.get("steps"), lines))

    cub = sections["cubature"]
    kind = cub.get("kind", "auto")
    if kind not in CUBATURE_KINDS:
        errs.append(f"{_where(lines, ('cubature', 'kind'))}: unknown cubature kind {kind!r}")
    for k in ("points_per_axis", "panels", "order"):
        if k in cub and not (_is_int(cub[k]) and cub[k] >= 1):
            errs.append(f"{_where(lines, ('cubature', k))} must be a positive integer")
    if kind == "file" and not isinstance(cub.get("path"), str):
        errs.append("cubature.path is required for kind 'file'")

    opt = sections["optimizer"]
    for k in ("tolerance", "probability_floor"):
        if k in opt and not (_is_number(opt[k]) and opt[k] > 0):
            errs.append(f"{_where(lines, ('optimizer', k))} must be a positive number")
    for k in ("max_newton_iters", "max_lloyd_iters", "max_halvings"):
        if k in opt and not (_is_int(opt[k]) and opt[k] >= 0):
            errs.append(f"{_where(lines, ('optimizer', k))} must be a nonnegative integer")
    if "init" in opt and opt["init"] != "quantile":
        errs.append(f"{_where(lines, ('optimizer', 'init'))}: only 'quantile' is supported")

    if data.get("payoff") is not None:
        errs.extend(_check_payoff(sections["payoff"], d, lines))
    if data.get("bsde") is not None:
        errs.extend(_check_bsde(sections["bsde"], lines))
    ver = sections["verify"]
    for k in ("levels", "samples", "mixtures"):
        if k in ver and not (_is_int(ver[k]) and ver[k] >= 1):
            errs.append(f"{_where(lines, ('verify', k))} must be a positive integer")
    if "step" in ver and ver["step"] is not None and not (_is_int(ver["step"]) and ver["step"] >= 0):
        errs.append(f"{_where(lines, ('verify', 'step'))} must be a nonnegative integer")

    seed = data.get("seed", 0)
    if not (_is_int(seed) and 0 <= seed < 2**64):
        errs.append(f"{_where(lines, ('seed',))}: seed must be an unsigned 64-bit integer")
    threads = data.get("threads", 0)
    if not (_is_int(threads) and threads >= 0):
        errs.append(f"{_where(lines, ('threads',))}: threads must be a nonnegative integer")
    cap = data.get("cell_cap", 10**6)
    if not (_is_int(cap) and cap >= 1):
        errs.append(f"{_where(lines, ('cell_cap',))}: cell_cap must be a positive integer")
    if data.get("transition", "auto") not in ("auto", "general", "diagonal"):
        errs.append(f"{_where(lines, ('transition',))}: expected auto, general or diagonal")
    if "output" in data and data["output"] is not None and not isinstance(data["output"], str):
        errs.append(f"{_where(lines, ('output',))} must be a path string")

    if errs:
        prefix = f"{source}: " if source else ""
        raise ValidationError([prefix + e for e in errs])
    return RunConfig(model={"name": name, "params": dict(params)}, time=dict(tsec),
                     levels=data["levels"], cubature=dict(cub) or {"kind": "auto"},
                     optimizer=dict(opt), payoff=data.get("payoff"), bsde=data.get("bsde"),
                     verify=dict(ver), output=data.get("output"), seed=seed, threads=threads,
                     cell_cap=cap, transition=data.get("transition", "auto"), source=source)


def _model_domain(name, params, lines):
    errs = []

    def num(k):
        v = params.get(k)
        return v if _is_number(v) else None

    for k in ("sigma", "sigma1", "sigma2", "kappa", "theta"):
        v = num(k)
        if v is not None and v <= 0:
            errs.append(f"{_where(lines, ('model', 'params', k))}: must be positive")
    rho = num("rho")
    if rho is not None and not -1 <= rho <= 1:
        errs.append(f"{_where(lines, ('model', 'params', 'rho'))}: correlation must lie in [-1, 1]")
    if name == "unit_brownian" and "d" in params and not (_is_int(params["d"]) and params["d"] >= 1):
        errs.append(f"{_where(lines, ('model', 'params', 'd'))}: dimension must be a positive integer")
    v0 = num("v0")
    if name == "heston" and v0 is not None and v0 < 0:
        errs.append(f"{_where(lines, ('model', 'params', 'v0'))}: initial variance must be >= 0")
    return errs


def _check_levels(levels, d, steps, lines):
    where = _where(lines, ("levels",))
    if _is_int(levels):
        return [] if levels >= 1 else [f"{where}: levels must be >= 1"]
    if not isinstance(levels, list) or not levels:
        return [f"{where}: expected an integer, a per-component list or a per-step table"]
    if all(_is_int(v) for v in levels):
        errs = [] if all(v >= 1 for v in levels) else [f"{where}: levels must be >= 1"]
        if d is not None and len(levels) != d:
            errs.append(f"{where}: {len(levels)} per-component levels for a {d}-d model")
        return errs
    if all(isinstance(r, list) and all(_is_int(v) and v >= 1 for v in r) for r in levels):
        errs = []
        if d is not None and any(len(r) != d for r in levels):
            errs.append(f"{where}: every level row must have {d} entries")
        if _is_int(steps) and len(levels) not in (steps, steps + 1):
            errs.append(f"{where}: level table needs {steps} or {steps + 1} rows")
        return errs
    return [f"{where}: levels must be positive integers"]


def _check_payoff(p, d, lines):
    errs = []
    kind = p.get("kind")
    if kind not in ("vector_function", "component_function"):
        errs.append(f"{_where(lines, ('payoff', 'kind'))}: expected vector_function or component_function")
    if kind == "vector_function":
        w = p.get("weights")
        if not (isinstance(w, list) and w and all(_is_number(v) for v in w)):
            errs.append("payoff.weights must be a list of numbers for vector_function payoffs")
        elif d is not None and len(w) != d:
            errs.append(f"payoff.weights has {len(w)} entries for a {d}-d model")
    if "component" in p and not (_is_int(p["component"]) and p["component"] >= 0):
        errs.append(f"{_where(lines, ('payoff', 'component'))} must be a nonnegative integer")
    elif d is not None and p.get("component", 0) >= d:
        errs.append(f"{_where(lines, ('payoff', 'component'))} out of range for a {d}-d model")
    if not _is_number(p.get("rate", None)):
        errs.append("payoff.rate (discount rate) is required")
    if "maturity" in p and not (_is_number(p["maturity"]) and p["maturity"] > 0):
        errs.append(f"{_where(lines, ('payoff', 'maturity'))} must be positive")
    for key in ("calls", "puts"):
        v = p.get(key, [])
        if not (isinstance(v, list) and all(_is_number(s) and s >= 0 for s in v)):
            errs.append(f"{_where(lines, ('payoff', key))} must be a list of nonnegative strikes")
    if not p.get("calls") and not p.get("puts"):
        errs.append("payoff needs at least one strike in calls or puts")
    bench = p.get("benchmarks")
    if bench is not None:
        if not isinstance(bench, dict) or set(bench) - {"call", "put"}:
            errs.append("payoff.benchmarks must map call/put to {strike: price}")
        else:
            for opt, table in bench.items():
                if not isinstance(table, dict) or not all(
                        _is_number(k) and _is_number(v) for k, v in table.items()):
                    errs.append(f"payoff.benchmarks.{opt} must map strikes to prices")
    return errs


def _check_bsde(b, lines):
    errs = []
    drv = b.get("driver")
    if not isinstance(drv, dict) or drv.get("name") not in _DRIVERS:
        errs.append(f"bsde.driver must be a mapping with name in {sorted(_DRIVERS)}")
    else:
        need = _DRIVERS[drv["name"]]
        for k in need:
            if not _is_number(drv.get(k)):
                errs.append(f"missing or non-numeric bsde.driver.{k}")
        for k in drv:
            if k != "name" and k not in need:
                errs.append(f"unknown key {_where(lines, ('bsde', 'driver', k))}")
    term = b.get("terminal")
    if not isinstance(term, dict) or term.get("kind") not in _TERMINALS:
        errs.append(f"bsde.terminal must be a mapping with kind in {sorted(_TERMINALS)}")
    else:
        allowed = _TERMINALS[term["kind"]]
        for k in term:
            if k != "kind" and k not in allowed:
                errs.append(f"unknown key {_where(lines, ('bsde', 'terminal', k))}")
        if term["kind"] in ("call", "put") and not _is_number(term.get("strike")):
            errs.append("bsde.terminal.strike is required for call/put terminals")
    if "lambda_method" in b and b["lambda_method"] not in ("auto", "independent", "general"):
        errs.append(f"{_where(lines, ('bsde', 'lambda_method'))}: expected auto, independent or general")
    if "surfaces" in b and not isinstance(b["surfaces"], bool):
        errs.append(f"{_where(lines, ('bsde', 'surfaces'))} must be true or false")
    return errs
