"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the terminal
summary. Timings are single-threaded.
"""

import copy
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from mpquant import (TimeGrid, basket2d, black_scholes, build_chain, chain_lambda,
                     gauss_hermite_rule, optimize, piecewise, solve_bsde)
from mpquant.cli import make_chain, make_payoff, make_problem
from mpquant.config import parse_config
from mpquant.pricing import strike_ladder
from mpquant.verify import (calculus_residuals, family_z_bound, mc_recursive_error,
                            oracle_comparison, random_mixture, stationarity_displacement)
from mpquant.quantizer import MixtureSource

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# MQ_20^10 column of the basket table (N1 = N2 = 20, n = 10)
BASKET_MQ20 = {("call", 80): 25.8721, ("call", 85): 22.3543, ("call", 90): 19.1596,
               ("call", 95): 16.2935, ("call", 100): 13.7537, ("put", 100): 9.8406,
               ("put", 105): 12.4218, ("put", 110): 15.2981, ("put", 115): 18.4441,
               ("put", 120): 21.8432}
BASKET_BENCHMARK = 13.9197
HESTON_MQ = 12.6532


@pytest.fixture(scope="module", autouse=True)
def single_thread():
    piecewise.set_threads(1)
    yield
    piecewise.set_threads(1)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _basket_cfg(levels=None):
    cfg = parse_config(CONFIGS / "basket_table.yaml")
    if levels is not None:
        cfg.levels = levels
    return cfg


def _ladder(cfg, chain):
    spec = cfg.payoff
    rows = strike_ladder(chain, make_payoff(spec, chain.time_grid.horizon),
                         spec["calls"], spec["puts"])
    return {(r.option, int(r.strike)): r.price for r in rows}


def _atm_call(chain, cfg):
    return _ladder(cfg, chain)[("call", 100)]


@pytest.fixture(scope="module")
def basket20():
    cfg = _basket_cfg()
    chain, seconds = _timed(lambda: make_chain(cfg))
    return cfg, chain, seconds


@pytest.fixture(scope="module")
def heston20():
    cfg = parse_config(CONFIGS / "heston.yaml")
    chain, seconds = _timed(lambda: make_chain(cfg))
    return cfg, chain, seconds


def test_criterion_1_basket_table(basket20, acceptance_report):
    cfg, chain, build_s = basket20
    prices, price_s = _timed(lambda: _ladder(cfg, chain))
    seconds = build_s + price_s
    errs = {key: abs(prices[key] - ref) / ref for key, ref in BASKET_MQ20.items()}
    atm = errs[("call", 100)]
    worst_key = max(errs, key=errs.get)
    ok = atm <= 0.01 and errs[worst_key] <= 0.015 and seconds <= 60.0
    acceptance_report(
        "1 basket N=20 n=10", ok,
        f"K=100 call {prices[('call', 100)]:.4f} vs 13.7537 ({100 * atm:.4f}%, limit 1%); "
        f"worst strike {worst_key[0]} {worst_key[1]} {100 * errs[worst_key]:.4f}% (limit 1.5%); "
        f"{seconds:.1f} s (limit 60 s)")
    assert ok


def test_criterion_2_benchmark_direction(basket20, acceptance_report):
    cfg, chain20, _ = basket20
    errs = {}
    for n_pts in (10, 30):
        errs[n_pts] = abs(_atm_call(make_chain(_basket_cfg(n_pts)), cfg) - BASKET_BENCHMARK) \
            / BASKET_BENCHMARK
    errs[20] = abs(_atm_call(chain20, cfg) - BASKET_BENCHMARK) / BASKET_BENCHMARK
    ok = errs[10] > errs[20] > errs[30] and errs[30] <= 0.01
    acceptance_report(
        "2 basket error direction", ok,
        "K=100 call errors vs 13.9197: " + ", ".join(
            f"N={n} {100 * errs[n]:.3f}%" for n in (10, 20, 30)) + " (decreasing, N=30 limit 1%)")
    assert ok


def test_criterion_3_heston(heston20, acceptance_report):
    cfg, chain, seconds = heston20
    call = _atm_call(chain, cfg)
    err = abs(call - HESTON_MQ) / HESTON_MQ
    ok = err <= 0.02
    acceptance_report("3 heston n=20 (20,10)", ok,
                      f"K=100 call {call:.4f} vs 12.6532 ({100 * err:.3f}%, limit 2%); "
                      f"{seconds:.1f} s")
    assert ok


def _hedge(sigma):
    cfg = parse_config(CONFIGS / "bsde_hedge.yaml")
    cfg.model = copy.deepcopy(cfg.model)
    cfg.model["params"]["sigma"] = sigma
    cfg.bsde = copy.deepcopy(cfg.bsde)
    cfg.bsde["driver"]["sigma"] = sigma

    def solve():
        chain = make_chain(cfg)
        return solve_bsde(chain, make_problem(cfg.bsde, chain.time_grid.horizon))
    return _timed(solve)


def test_criterion_4_bsde_hedge(acceptance_report):
    sol3, s3 = _hedge(0.3)
    sol5, s5 = _hedge(0.5)
    y3, z3, y5 = sol3.y0, float(sol3.z0[0]), sol5.y0
    ok = (abs(y3 - 10.88) <= 0.05 and abs(z3 - 19.00) <= 0.15 and abs(y5 - 16.26) <= 0.05
          and s3 <= 5.0 and s5 <= 5.0)
    acceptance_report(
        "4 bsde hedge", ok,
        f"sigma=0.3 Y0 {y3:.4f} (10.88 +- 0.05), Z0 {z3:.4f} (19.00 +- 0.15), {s3:.2f} s; "
        f"sigma=0.5 Y0 {y5:.4f} (16.26 +- 0.05), {s5:.2f} s (limit 5 s each)")
    assert ok


def test_criterion_5_chassagneux(acceptance_report):
    cfg = parse_config(CONFIGS / "chassagneux.yaml")

    def solve():
        chain = make_chain(cfg)
        return solve_bsde(chain, make_problem(cfg.bsde, chain.time_grid.horizon))
    sol, seconds = _timed(solve)
    z = [float(v) for v in sol.z0]
    ok = (abs(sol.y0 - 0.504) <= 0.01 and all(abs(v - 0.24) <= 0.02 for v in z)
          and abs(sol.y0 - 0.5) <= 0.02 and seconds <= 30.0)
    acceptance_report(
        "5 chassagneux d=2", ok,
        f"Y0 {sol.y0:.5f} (0.504 +- 0.01, exact 0.5 +- 0.02), Z0 "
        + ", ".join(f"{v:.5f}" for v in z) + f" (0.24 +- 0.02); {seconds:.1f} s (limit 30 s)")
    assert ok


@pytest.fixture(scope="module")
def oracle_run():
    chain = build_chain(basket2d(0.04, 0.3, 0.4, 0.5), TimeGrid(1.0, 10), 5)
    return oracle_comparison(chain, 5, samples=10**6, seed=0)


def test_criterion_6_oracle_equivalence(oracle_run, acceptance_report):
    parts, ok = [], True
    for which in ("transition", "lambda"):
        z = oracle_run.transition_z if which == "transition" else oracle_run.lambda_z
        within2 = float((z <= 2.0).mean())
        zmax = float(z.max())
        ok &= zmax <= 3.0 and within2 >= 0.99
        parts.append(f"{which} {z.size} entries max z {zmax:.2f} (limit 3), "
                     f"{100 * within2:.1f}% within 2 SE (limit 99%)")
    acceptance_report("6 MC oracle, 5x5 basket step 5, 1e6 samples", ok, "; ".join(parts))
    assert ok


def test_oracle_equivalence_calibrated(oracle_run, acceptance_report):
    # exact closed forms give z ~ |N(0,1)|: about 95.45% within 2 SE, and the
    # largest of m scores stays below the Bonferroni bound
    parts, ok = [], True
    p2 = 2.0 * stats.norm.cdf(2.0) - 1.0
    for which in ("transition", "lambda"):
        z = oracle_run.transition_z if which == "transition" else oracle_run.lambda_z
        lo = stats.binom.ppf(0.0005, z.size, p2) / z.size
        within2 = float((z <= 2.0).mean())
        bound = family_z_bound(z.size)
        good = within2 >= lo and float(z.max()) <= bound
        ok &= good
        parts.append(f"{which} {100 * within2:.1f}% within 2 SE (>= {100 * lo:.1f}%), "
                     f"max z {z.max():.2f} (<= {bound:.2f})")
    acceptance_report("6b MC oracle, calibrated companion", ok, "; ".join(parts))
    assert ok


def test_criterion_7_calculus(basket20, acceptance_report):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(2024)))
    g_err = h_err = stat = 0.0
    for _ in range(100):
        src = random_mixture(rng)
        n = int(rng.integers(2, 16))
        q = optimize(src, n)
        stat = max(stat, stationarity_displacement(src, q) / q.tolerance)
        pts = np.sort(q.points + 0.1 * src.std() / n * rng.normal(size=n))
        ge, he = calculus_residuals(src, pts)
        g_err, h_err = max(g_err, ge), max(h_err, he)
    _, chain, _ = basket20
    for k in range(chain.steps):
        step = chain.euler[k]
        for l, q in enumerate(chain.grids[k + 1].marginals):
            src = MixtureSource(step.mean[:, l], step.theta[:, l], chain.weights[k])
            stat = max(stat, stationarity_displacement(src, q) / q.tolerance)
    ok = g_err <= 1e-6 and h_err <= 1e-6 and stat <= 10.0
    acceptance_report(
        "7 calculus checks", ok,
        f"100 mixtures: gradient FD error {g_err:.1e}, Hessian {h_err:.1e} (limit 1e-6); "
        f"worst stationarity displacement {stat:.2f} x tolerance (limit 10)")
    assert ok


def test_criterion_8_stochasticity(basket20, heston20, acceptance_report):
    worst_pre = worst_post = worst_lam = 0.0
    chains = [basket20[1], heston20[1]]
    gh64 = gauss_hermite_rule(1, 64)
    chains.append(build_chain(basket20[1].model, basket20[1].time_grid, 20, gh64))
    chains.append(build_chain(heston20[1].model, heston20[1].time_grid, (20, 10), gh64))
    for chain in chains:
        worst_pre = max(worst_pre, max(chain.diagnostics["normalization_defects"]))
        for t in chain.transitions:
            worst_post = max(worst_post, float(np.abs(t.matrix.sum(axis=1) - 1.0).max()))
    for chain in chains[:2]:
        for k in range(chain.steps):
            lam = chain_lambda(chain, k).values
            worst_lam = max(worst_lam, float(np.abs(lam.sum(axis=1)).max()))
    ok = worst_pre <= 1e-8 and worst_post <= 1e-12 and worst_lam <= 1e-7
    acceptance_report(
        "8 stochasticity and centering", ok,
        f"pre-normalization defect {worst_pre:.1e} (limit 1e-8, piecewise and 64-node GH), "
        f"row sums after {worst_post:.1e}; Lambda rows {worst_lam:.1e} (limit 1e-7)")
    assert ok


def test_criterion_9_error_decay(acceptance_report):
    sizes = [10, 20, 40, 80]
    model, grid = black_scholes(0.2, 0.3), TimeGrid(0.5, 20)
    errs = [mc_recursive_error(build_chain(model, grid, n), samples=10**5, seed=0) for n in sizes]
    vals = [e[0] for e in errs]
    slope = float(np.polyfit(np.log(sizes), np.log(vals), 1)[0])
    decreasing = all(a > b for a, b in zip(vals, vals[1:]))
    ok = decreasing and -1.3 <= slope <= -0.7
    acceptance_report(
        "9 error decay", ok,
        "L2 errors " + ", ".join(f"N={n} {v:.4f}+-{e[1]:.4f}" for n, v, e in zip(sizes, vals, errs))
        + f"; log-log slope {slope:.3f} (range [-1.3, -0.7])")
    assert ok
