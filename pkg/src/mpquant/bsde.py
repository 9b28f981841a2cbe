"""Explicit quantized backward scheme for BSDEs driven by the chain.

With the chain's transition matrices p_k and the conditional increment
weights Lambda_k = E[Z_{k+1} 1{next cell = j} | current cell = i], the scheme is

    y_n = h(x_n)
    alpha_k = P_k y_{k+1}
    beta_k  = Lambda_k^T y_{k+1} / sqrt(delta)
    y_k = alpha_k + delta * f(t_k, x_k, alpha_k, beta_k)

and the control estimate z_k is beta_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import (SIGN_THRESHOLD, ProductGrid, QuantizedChain, _check_diagonal,
                    _component_intervals, conditional_cell_masses)
from .errors import DimensionMismatch, DomainError, NotApplicable, NotDiagonal
from .gaussian import CubatureRule, gauss_hermite_rule, normal_cdf, normal_pdf
from .models import DiffusionModel, EulerStep, TimeGrid, euler_step
from .piecewise import PiecewiseRule, cell_integrals
from .quantizer import standardize

DEFAULT_LAMBDA_NODES = 64


def default_lambda_rule(q: int):
    return PiecewiseRule() if q == 2 else gauss_hermite_rule(1, DEFAULT_LAMBDA_NODES)


@dataclass(frozen=True)
class LambdaTensor:
    k: int
    values: np.ndarray  # (|I_k|, |I_{k+1}|, q)
    method: str = ""

    @property
    def centering_defect(self) -> float:
        return float(np.max(np.abs(self.values.sum(axis=1)))) if self.values.size else 0.0


@dataclass
class BsdeProblem:
    """Driver f(t, x, y, z) (vectorized over rows) and terminal condition h(x)."""

    driver: Callable
    terminal: Callable
    lipschitz: float | None = None
    name: str = ""


@dataclass
class BsdeSolution:
    y: list
    z: list
    alpha: list = field(default_factory=list)

    @property
    def y0(self) -> float:
        return float(self.y[0][0])

    @property
    def z0(self) -> np.ndarray:
        return np.array(self.z[0][0])


# ---------------------------------------------------------------------------
# conditional increment weights

def _lambda_independent(step: EulerStep, target: ProductGrid) -> np.ndarray:
    try:
        _check_diagonal(step)
    except NotDiagonal as exc:
        raise NotApplicable(f"components are not driven by separate noises: {exc}") from None
    m_count, d = step.mean.shape
    masses, moments = [], []
    for l, marg in enumerate(target.marginals):
        u = standardize(marg.boundaries, step.mean[:, l], step.theta[:, l])
        cdf, pdf = normal_cdf(u), normal_pdf(u)
        masses.append(cdf[:, 1:] - cdf[:, :-1])
        # E[Z 1{Z in (u-, u+)}] = pdf(u-) - pdf(u+)
        moments.append(pdf[:, :-1] - pdf[:, 1:])
    out = np.empty((m_count, target.size, d))
    for p in range(d):
        acc = None
        for l in range(d):
            f = moments[l] if l == p else masses[l]
            acc = f if acc is None else (acc[:, :, None] * f[:, None, :]).reshape(m_count, -1)
        out[:, :, p] = acc
    return out


def _lambda_single_noise(step: EulerStep, target: ProductGrid, threshold: float) -> np.ndarray:
    """q = 1: the event is an interval of the only noise, so E[Z 1] is closed form."""
    m_count, d, _ = step.vol.shape
    lo = np.full((m_count,) + target.shape, -np.inf)
    hi = np.full((m_count,) + target.shape, np.inf)
    zero = np.abs(step.sigma[:, :, 0]) <= threshold
    for l, marg in enumerate(target.marginals):
        a, b = _component_intervals(marg.boundaries, step.mean[:, l], np.zeros((m_count, 1)),
                                    step.vol[:, l, 0], zero[:, l])
        view = [slice(None)] + [None] * d
        view[1 + l] = slice(None)
        lo = np.maximum(lo, a[:, 0, :][tuple(view)])
        hi = np.minimum(hi, b[:, 0, :][tuple(view)])
    val = np.where(hi > lo, normal_pdf(lo) - normal_pdf(hi), 0.0)
    return val.reshape(m_count, -1)[:, :, None]


def _lambda_general(step: EulerStep, target: ProductGrid, rule_1d,
                    threshold: float) -> np.ndarray:
    m_count, d, q = step.vol.shape
    if q == 1:
        return _lambda_single_noise(step, target, threshold)
    if isinstance(rule_1d, PiecewiseRule):
        if q != 2:
            raise DimensionMismatch("piecewise integration needs q = 2")
        out = np.empty((m_count, target.size, q))
        for p in range(q):
            other = 1 - p
            zero = np.abs(step.sigma[:, :, other]) <= threshold
            out[:, :, p] = cell_integrals(target, step.mean, step.vol[:, :, p], step.vol[:, :, other],
                                          zero, rule_1d, moment=True)[:, :, 1]
        return out
    if rule_1d.dimension != 1:
        raise DimensionMismatch("lambda_general needs a one-dimensional cubature rule")
    if q - 1 == 1:
        nodes, weights = rule_1d.nodes, rule_1d.weights
    else:
        x, w = rule_1d.nodes[:, 0], rule_1d.weights
        mesh = np.meshgrid(*([x] * (q - 1)), indexing="ij")
        nodes = np.stack([g.reshape(-1) for g in mesh], axis=1)
        wmesh = np.meshgrid(*([w] * (q - 1)), indexing="ij")
        weights = np.prod(np.stack([g.reshape(-1) for g in wmesh], axis=1), axis=1)
    out = np.empty((m_count, target.size, q))
    for p in range(q):
        # condition on zeta = Z^p; the first other noise is integrated in
        # closed form, the rest (zeta included) by the tensor rule
        lead_idx = 0 if p != 0 else 1
        rest = [c for c in range(q) if c != lead_idx]
        cols = nodes
        shifts = np.einsum("mdc,kc->mkd", step.vol[:, :, rest], cols)
        leads = step.vol[:, :, lead_idx]
        zero = np.abs(step.sigma[:, :, lead_idx]) <= threshold
        zeta = cols[:, rest.index(p)]
        out[:, :, p] = conditional_cell_masses(target, step.mean, shifts, leads, zero,
                                               (weights * zeta)[:, None])[:, :, 0]
    return out


def lambda_independent(model: DiffusionModel, grid: TimeGrid, k: int, source: ProductGrid,
                       target: ProductGrid) -> LambdaTensor:
    step = euler_step(model, grid, k, source.points)
    if model.q != model.d:
        raise NotApplicable("independent-component formula needs q = d")
    return LambdaTensor(k, _lambda_independent(step, target), "independent")


def lambda_general(model: DiffusionModel, grid: TimeGrid, k: int, source: ProductGrid,
                   target: ProductGrid, cubature_1d=None,
                   threshold: float = SIGN_THRESHOLD) -> LambdaTensor:
    if source.d != model.d or target.d != model.d:
        raise DimensionMismatch("grid dimension differs from the model state dimension")
    rule = cubature_1d or default_lambda_rule(model.q)
    step = euler_step(model, grid, k, source.points)
    return LambdaTensor(k, _lambda_general(step, target, rule, threshold), "general")


def chain_lambda(chain: QuantizedChain, k: int, method: str = "auto",
                 cubature_1d: CubatureRule | None = None) -> LambdaTensor:
    """Lambda tensor of step k, computed on first use and cached on the chain."""
    key = (k, method)
    if key in chain.lambdas:
        return chain.lambdas[key]
    step = chain.euler[k]
    target = chain.grids[k + 1]
    if method == "auto":
        method = "independent" if chain.transitions[k].method == "diagonal" else "general"
    if method == "independent":
        values = _lambda_independent(step, target)
    elif method == "general":
        values = _lambda_general(step, target,
                                 cubature_1d or default_lambda_rule(chain.model.q),
                                 SIGN_THRESHOLD)
    else:
        raise DomainError(f"unknown lambda method {method!r}")
    tensor = LambdaTensor(k, values, method)
    chain.lambdas[key] = tensor
    return tensor


# ---------------------------------------------------------------------------
# backward sweep

def solve_bsde(chain: QuantizedChain, problem: BsdeProblem, lambdas=None,
               method: str = "auto") -> BsdeSolution:
    n = chain.steps
    dt = chain.time_grid.delta
    sq = math.sqrt(dt)
    q = chain.model.q
    if lambdas is not None and len(lambdas) != n:
        raise DimensionMismatch(f"need {n} lambda tensors, got {len(lambdas)}")
    y_next = np.asarray(problem.terminal(chain.grids[n].points), dtype=float).reshape(-1)
    if y_next.size != chain.grids[n].size:
        raise DimensionMismatch("terminal condition must return one value per terminal cell")
    ys = [None] * (n + 1)
    zs = [None] * (n + 1)
    alphas = [None] * n
    ys[n] = y_next
    zs[n] = np.full((y_next.size, q), np.nan)
    for k in range(n - 1, -1, -1):
        lam = lambdas[k] if lambdas is not None else chain_lambda(chain, k, method)
        values = lam.values if isinstance(lam, LambdaTensor) else np.asarray(lam)
        if values.shape != (chain.grids[k].size, chain.grids[k + 1].size, q):
            raise DimensionMismatch(f"lambda tensor of step {k} has shape {values.shape}")
        alpha = chain.transitions[k].matrix @ ys[k + 1]
        beta = np.einsum("ijp,j->ip", values, ys[k + 1]) / sq
        t = chain.time_grid.time(k)
        f = np.asarray(problem.driver(t, chain.grids[k].points, alpha, beta),
                       dtype=float).reshape(-1)
        ys[k] = alpha + dt * f
        zs[k] = beta
        alphas[k] = alpha
    return BsdeSolution(y=ys, z=zs, alpha=alphas)


# ---------------------------------------------------------------------------
# built-in drivers

def zero_driver() -> Callable:
    def f(t, x, y, z):
        return np.zeros_like(y)
    return f


def bs_hedge_driver(r: float, mu: float, sigma: float) -> Callable:
    """Replicating-portfolio driver -r y - (mu - r)/sigma * z."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    lam = (mu - r) / sigma

    def f(t, x, y, z):
        return -r * y - lam * z[:, 0]
    return f


def chassagneux_driver(d: int) -> Callable:
    c = (2.0 + d) / (2.0 * d)

    def f(t, x, y, z):
        return z.sum(axis=1) * (y - c)
    return f


def chassagneux_terminal(horizon: float) -> Callable:
    def h(x):
        s = np.asarray(x, dtype=float).sum(axis=1) + horizon
        return 1.0 / (1.0 + np.exp(-s))
    return h


def call_terminal(strike: float, component: int = 0) -> Callable:
    def h(x):
        return np.maximum(np.asarray(x)[:, component] - strike, 0.0)
    return h
