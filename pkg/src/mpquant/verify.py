"""Checks of a built chain against independent references.

Used by the ``verify`` subcommand and by the test-suite. Monte-Carlo checks
report z-scores |closed form - MC| / SE per entry. When a cell receives no
draw (or all of them) the MC standard error is zero; such an entry is scored
by the exact binomial probability of that count, mapped to a z-value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bsde import chain_lambda
from .chain import QuantizedChain
from .gaussian import normal_quantile
from .oracles import mc_lambda_row, mc_transition_row, stream, standard_normals
from .quantizer import MixtureSource, gradient, hessian, distortion, lloyd_step, optimize


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


@dataclass
class OracleComparison:
    transition_z: np.ndarray
    lambda_z: np.ndarray

    def summary(self, which: str) -> tuple:
        z = self.transition_z if which == "transition" else self.lambda_z
        return float(z.max()) if z.size else 0.0, float((z <= 2.0).mean()) if z.size else 1.0


def _z(closed, est, mass, freq):
    """z-score of one entry.

    ``mass`` is the exact probability of the cell and ``freq`` the sampled
    frequency from the same draws. A zero standard error means the cell got
    no draw or every draw; that count is scored against Binomial(n, mass) and
    its two-sided p-value mapped back to a z-value.
    """
    if est.standard_error > 0:
        return abs(closed - est.value) / est.standard_error
    n = est.sample_count
    mass = min(max(mass, 0.0), 1.0)
    if freq == 0.0:
        p_value = math.exp(-n * mass)
    elif freq == 1.0:
        p_value = mass ** n
    else:
        return 0.0 if closed == est.value else math.inf
    if p_value >= 1.0:
        return 0.0
    if p_value == 0.0:
        return math.inf
    return -float(normal_quantile(0.5 * p_value))


def oracle_comparison(chain: QuantizedChain, k: int, samples: int = 10**6,
                      seed: int = 0) -> OracleComparison:
    """Compare transition row and Lambda entries of step k with Monte Carlo."""
    model, grid = chain.model, chain.time_grid
    src, tgt = chain.grids[k], chain.grids[k + 1]
    lam = chain_lambda(chain, k).values
    tz, lz = [], []
    for i in range(src.size):
        x = src.points[i]
        row = mc_transition_row(model, grid, k, x, tgt, samples, seed, cell=i)
        mass = chain.transitions[k].matrix[i]
        # both samplers draw from the same (seed, step, cell) stream
        freq = [est.value for est in row]
        for j, est in enumerate(row):
            tz.append(_z(mass[j], est, mass[j], freq[j]))
        lrow = mc_lambda_row(model, grid, k, x, tgt, samples, seed, cell=i)
        for p in range(model.q):
            for j in range(tgt.size):
                lz.append(_z(lam[i, j, p], lrow[p, j], mass[j], freq[j]))
    return OracleComparison(np.array(tz), np.array(lz))


def family_z_bound(count: int, alpha: float = 1e-3) -> float:
    """Two-sided Bonferroni z threshold for ``count`` simultaneous comparisons."""
    return float(normal_quantile(1.0 - alpha / (2.0 * max(count, 1))))


def random_mixture(rng, components: int | None = None) -> MixtureSource:
    m = int(components or rng.integers(1, 12))
    centre = rng.uniform(-5.0, 5.0)
    scale = 10.0 ** rng.uniform(-1.0, 1.0)
    means = centre + scale * rng.normal(size=m)
    thetas = scale * 10.0 ** rng.uniform(-1.0, 0.5, size=m)
    probs = rng.dirichlet(np.ones(m))
    return MixtureSource(means, thetas, probs)


def calculus_residuals(source: MixtureSource, points, h: float = 1e-5) -> tuple:
    """Errors of the closed-form gradient and Hessian against central differences.

    Each entry is measured as |fd - exact| / (1 + |exact|), so large entries
    are compared relatively and entries near zero absolutely.
    """
    x = np.asarray(points, dtype=float)
    g = gradient(source, x)
    fd_g = np.array([(distortion(source, x + h * e) - distortion(source, x - h * e)) / (2 * h)
                     for e in np.eye(x.size)])
    hd = hessian(source, x).dense()
    fd_h = np.stack([(gradient(source, x + h * e) - gradient(source, x - h * e)) / (2 * h)
                     for e in np.eye(x.size)], axis=1)
    return (float(np.max(np.abs(g - fd_g) / (1.0 + np.abs(g)))),
            float(np.max(np.abs(hd - fd_h) / (1.0 + np.abs(hd)))))


def stationarity_displacement(source: MixtureSource, quantizer) -> float:
    """Largest move of one Lloyd fixed-point update applied to an optimized grid."""
    return float(np.max(np.abs(lloyd_step(source, quantizer).points - quantizer.points)))


def run_checks(chain: QuantizedChain, oracle_chain: QuantizedChain | None = None,
               oracle_step: int | None = None, samples: int = 10**5, seed: int = 0,
               mixtures: int = 20) -> list:
    results = []
    defects = chain.diagnostics["normalization_defects"]
    results.append(CheckResult("row sums", max(defects) <= 1e-8,
                               f"max pre-normalization defect {max(defects):.2e} (limit 1e-8)"))
    w_err = max(abs(w.sum() - 1.0) for w in chain.weights)
    results.append(CheckResult("weights", w_err <= 1e-12, f"max |sum - 1| {w_err:.2e}"))

    worst = 0.0
    for k in range(chain.steps):
        p = chain.weights[k]
        step = chain.euler[k]
        for l, q in enumerate(chain.grids[k + 1].marginals):
            src = MixtureSource(step.mean[:, l], step.theta[:, l], p)
            worst = max(worst, stationarity_displacement(src, q) / max(q.tolerance, 1e-300))
    results.append(CheckResult("stationarity", worst <= 10.0,
                               f"worst Lloyd displacement {worst:.2f} x tolerance (limit 10)"))

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 7])))
    g_err = h_err = 0.0
    for _ in range(mixtures):
        src = random_mixture(rng)
        n = int(rng.integers(2, 12))
        q = optimize(src, n)
        pts = q.points + 0.1 * src.std() / n * rng.normal(size=n)
        pts.sort()
        ge, he = calculus_residuals(src, pts)
        g_err, h_err = max(g_err, ge), max(h_err, he)
    results.append(CheckResult("gradient/hessian", g_err <= 1e-6 and h_err <= 1e-6,
                               f"max FD error {g_err:.1e} / {h_err:.1e} (limit 1e-6)"))

    if oracle_chain is not None:
        k = oracle_step if oracle_step is not None else oracle_chain.steps // 2
        lam = chain_lambda(oracle_chain, k).values
        centre = float(np.abs(lam.sum(axis=1)).max())
        results.append(CheckResult("lambda centering", centre <= 1e-7,
                                   f"max |sum_j Lambda| {centre:.2e} (limit 1e-7)"))
        comp = oracle_comparison(oracle_chain, k, samples, seed)
        for which, z in (("transition", comp.transition_z), ("lambda", comp.lambda_z)):
            bound = family_z_bound(z.size)
            zmax, frac = comp.summary(which)
            ok = zmax <= bound and frac >= 0.90
            results.append(CheckResult(
                f"MC oracle {which}", ok,
                f"{z.size} entries, max z {zmax:.2f} (family bound {bound:.2f}), "
                f"{100 * frac:.1f}% within 2 SE (limit 90%)"))
    return results


def mc_recursive_error(chain: QuantizedChain, samples: int = 10**5, seed: int = 0) -> tuple:
    """L2 distance between Euler paths and the recursive quantization driven by the same noise.

    The quantized path follows X_hat_{k+1} = Proj_{k+1}(E_k(X_hat_k, Z_{k+1})).
    Returns (estimate, standard error).
    """
    from .models import simulate_euler
    model, grid = chain.model, chain.time_grid
    rng = stream(seed)
    x = np.tile(model.x0, (samples, 1))
    xh = x.copy()
    for k in range(grid.steps):
        z = standard_normals(rng, (samples, model.q))
        x = simulate_euler(model, grid, k, x, z)
        xt = simulate_euler(model, grid, k, xh, z)
        marg = chain.grids[k + 1].marginals
        xh = np.stack([marg[l].points[marg[l].project(xt[:, l])] for l in range(model.d)], axis=1)
    err = np.sum((x - xh) ** 2, axis=1)
    mean = float(err.mean())
    se = float(err.std(ddof=1) / math.sqrt(samples))
    # delta method for the square root
    return math.sqrt(mean), se / (2.0 * math.sqrt(mean)) if mean > 0 else 0.0
