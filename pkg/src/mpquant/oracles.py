"""Independent references: Monte-Carlo cell binning and closed-form prices.

Random streams are Philox counters keyed by (seed, step, source cell), so any
row can be regenerated alone and rows can be computed in any order.
Normals come from :func:`mpquant.gaussian.normal_quantile` applied to
uniforms on the open interval (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .gaussian import normal_cdf, normal_quantile
from .models import DiffusionModel, TimeGrid, simulate_euler
from .quantizer import MixtureSource, distortion

MIN_SAMPLES = 10**4


@dataclass(frozen=True)
class McEstimate:
    value: float
    standard_error: float
    sample_count: int
    rng_seed: int

    def zscore(self, reference: float) -> float:
        if self.standard_error == 0.0:
            return 0.0 if reference == self.value else math.inf
        return abs(self.value - reference) / self.standard_error


def stream(seed: int, step: int = 0, cell: int = 0) -> np.random.Generator:
    """Generator for one (step, cell) stream of a run."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(step), int(cell)])
    return np.random.Generator(np.random.Philox(ss))


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    # 53-bit uniforms shifted by half an ulp never hit 0 or 1
    bits = rng.integers(0, 2**53, size=shape, dtype=np.int64)
    u = (bits.astype(float) + 0.5) * 2.0**-53
    return normal_quantile(u)


def _estimates(values: np.ndarray, samples: int, seed: int):
    """values: (samples, R) per-draw contributions -> list of McEstimate."""
    mean = values.mean(axis=0)
    sd = values.std(axis=0, ddof=1)
    se = sd / math.sqrt(samples)
    return [McEstimate(float(m), float(s), samples, int(seed)) for m, s in zip(mean, se)]


def _check_samples(samples):
    if samples < MIN_SAMPLES:
        raise DomainError(f"need at least {MIN_SAMPLES} samples, got {samples}")


def _flat_cells(target, y):
    idx = [m.project(y[:, l]) for l, m in enumerate(target.marginals)]
    return np.ravel_multi_index(tuple(idx), target.shape)


def mc_transition_row(model: DiffusionModel, grid: TimeGrid, k: int, x, target,
                      samples: int = 10**6, seed: int = 0, cell: int = 0,
                      batch: int = 250_000) -> list:
    """Empirical cell frequencies of one Euler step from ``x``."""
    _check_samples(samples)
    counts = np.zeros(target.size)
    rng = stream(seed, k, cell)
    xs = np.asarray(x, dtype=float).reshape(1, model.d)
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        z = standard_normals(rng, (m, model.q))
        y = simulate_euler(model, grid, k, np.broadcast_to(xs, (m, model.d)), z)
        counts += np.bincount(_flat_cells(target, y), minlength=target.size)
        done += m
    p = counts / samples
    se = np.sqrt(p * (1.0 - p) / (samples - 1))
    return [McEstimate(float(a), float(b), samples, int(seed)) for a, b in zip(p, se)]


def mc_lambda_row(model: DiffusionModel, grid: TimeGrid, k: int, x, target,
                  samples: int = 10**6, seed: int = 0, cell: int = 0,
                  batch: int = 250_000) -> np.ndarray:
    """Sample means of Z^p 1{cell j}; returns an object array (q, |target|) of McEstimate."""
    _check_samples(samples)
    s1 = np.zeros((model.q, target.size))
    s2 = np.zeros_like(s1)
    rng = stream(seed, k, cell)
    xs = np.asarray(x, dtype=float).reshape(1, model.d)
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        z = standard_normals(rng, (m, model.q))
        y = simulate_euler(model, grid, k, np.broadcast_to(xs, (m, model.d)), z)
        j = _flat_cells(target, y)
        for p in range(model.q):
            s1[p] += np.bincount(j, weights=z[:, p], minlength=target.size)
            s2[p] += np.bincount(j, weights=z[:, p] ** 2, minlength=target.size)
        done += m
    mean = s1 / samples
    var = (s2 / samples - mean**2) * samples / (samples - 1)
    se = np.sqrt(np.maximum(var, 0.0) / samples)
    out = np.empty(s1.shape, dtype=object)
    for p in range(model.q):
        for jj in range(target.size):
            out[p, jj] = McEstimate(float(mean[p, jj]), float(se[p, jj]), samples, int(seed))
    return out


def mc_distortion(source: MixtureSource, points, samples: int = 10**6, seed: int = 0) -> McEstimate:
    """Monte-Carlo mean squared distance of the mixture to its nearest point."""
    _check_samples(samples)
    rng = stream(seed)
    comp = rng.choice(source.probs.size, size=samples, p=source.probs / source.probs.sum())
    draws = source.means[comp] + source.thetas[comp] * standard_normals(rng, samples)
    pts = np.sort(np.asarray(points, dtype=float))
    mids = 0.5 * (pts[1:] + pts[:-1])
    err = (draws - pts[np.searchsorted(mids, draws, side="left")]) ** 2
    return _estimates(err[:, None], samples, seed)[0]


def gbm_exact_mean(x0: float, mu: float, horizon: float) -> float:
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    return x0 * math.exp(mu * horizon)


def bs_call_price(s0: float, r: float, sigma: float, strike: float, horizon: float) -> float:
    if not sigma > 0 or not horizon > 0:
        raise DomainError("sigma and horizon must be positive")
    if not s0 > 0 or not strike > 0:
        raise DomainError("spot and strike must be positive")
    vol = sigma * math.sqrt(horizon)
    d1 = (math.log(s0 / strike) + (r + 0.5 * sigma * sigma) * horizon) / vol
    d2 = d1 - vol
    return s0 * normal_cdf(d1) - strike * math.exp(-r * horizon) * normal_cdf(d2)


def bs_call_delta(s0: float, r: float, sigma: float, strike: float, horizon: float) -> float:
    if not sigma > 0 or not horizon > 0:
        raise DomainError("sigma and horizon must be positive")
    vol = sigma * math.sqrt(horizon)
    return normal_cdf((math.log(s0 / strike) + (r + 0.5 * sigma * sigma) * horizon) / vol)


def central_difference(func, x, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of ``func`` at ``x``; rows index outputs."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(func(x + e), dtype=float)
                     - np.asarray(func(x - e), dtype=float)) / (2.0 * h))
    return np.stack(cols, axis=-1)
