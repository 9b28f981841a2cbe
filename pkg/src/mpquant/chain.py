"""Recursive product quantization of the Euler scheme as a Markov chain.

At each step every component of the Euler transition, mixed over the current
quantized law, is quantized on its own by :func:`mpquant.quantizer.optimize`;
the product of the marginal grids is the next state space, and the transition
probabilities between product cells come from conditioning the Gaussian
increment on all but its first coordinate.

Product cells are flattened in row-major order: the last component varies
fastest, ``flat = sum_l i_l * stride_l`` with zero-based ``i_l``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (CapacityExceeded, DimensionMismatch, DomainError, NonConvergence,
                     NotDiagonal, ZeroConditioningMass)
from .gaussian import CubatureRule, gauss_hermite_rule, normal_cdf, point_mass_rule
from .models import DiffusionModel, EulerStep, TimeGrid, euler_step
from .piecewise import PiecewiseRule, cell_integrals
from .quantizer import (MarginalQuantizer, MixtureSource, OptimizerOptions, optimize,
                        standardize)

log = logging.getLogger(__name__)

SIGN_THRESHOLD = 1e-14
DEFAULT_CELL_CAP = 10**6
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class ProductGrid:
    marginals: tuple

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))

    @classmethod
    def single_point(cls, x0) -> "ProductGrid":
        return cls(tuple(MarginalQuantizer([v], component=l) for l, v in enumerate(x0)))

    @property
    def d(self) -> int:
        return len(self.marginals)

    @property
    def shape(self) -> tuple:
        return tuple(m.size for m in self.marginals)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def strides(self) -> tuple:
        shape = self.shape
        return tuple(int(np.prod(shape[l + 1:])) for l in range(len(shape)))

    @property
    def points(self) -> np.ndarray:
        """Support points, shape (size, d), in flat row-major order."""
        mesh = np.meshgrid(*[m.points for m in self.marginals], indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=1)

    @property
    def multi_indices(self) -> np.ndarray:
        return np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=1)

    def multi_index(self, flat: int) -> tuple:
        return tuple(int(v) for v in np.unravel_index(flat, self.shape))

    def flat_index(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))


@dataclass(frozen=True)
class TransitionMatrix:
    k: int
    matrix: np.ndarray
    defect: float = 0.0
    method: str = ""

    @property
    def shape(self):
        return self.matrix.shape


@dataclass
class QuantizedChain:
    model: DiffusionModel
    time_grid: TimeGrid
    levels: np.ndarray
    grids: list
    weights: list
    transitions: list
    component_transitions: list
    component_weights: list
    euler: list
    cubature: object = None
    options: OptimizerOptions = field(default_factory=OptimizerOptions)
    diagnostics: dict = field(default_factory=dict)
    lambdas: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.time_grid.steps

    def marginal_weights(self, k: int, component: int) -> np.ndarray:
        """Law of one component of the quantized chain at step k."""
        w = self.weights[k].reshape(self.grids[k].shape)
        axes = tuple(a for a in range(self.model.d) if a != component)
        return w.sum(axis=axes) if axes else w

    def expectation(self, func, k: int | None = None) -> float:
        k = self.steps if k is None else k
        values = np.asarray(func(self.grids[k].points), dtype=float).reshape(-1)
        return float(values @ self.weights[k])


def default_cubature(q: int):
    """Integration rule for the noises left after conditioning on the first one.

    One remaining noise gets kink-aware panels; more than one falls back to a
    tensor Gauss-Hermite rule.
    """
    if q <= 1:
        return point_mass_rule(0)
    if q == 2:
        return PiecewiseRule()
    return gauss_hermite_rule(q - 1, 16 if q - 1 == 2 else 8)


def normalize_levels(levels, steps: int, d: int) -> np.ndarray:
    """Expand a level spec to an (steps+1, d) integer table with row 0 all ones.

    Accepts one integer, one integer per component, or a table with ``steps``
    or ``steps + 1`` rows.
    """
    arr = np.asarray(levels)
    if arr.ndim == 0:
        table = np.full((steps, d), int(arr))
    elif arr.ndim == 1:
        if arr.size != d:
            raise DimensionMismatch(f"expected {d} per-component levels, got {arr.size}")
        table = np.tile(arr.astype(int), (steps, 1))
    elif arr.ndim == 2 and arr.shape[1] == d and arr.shape[0] in (steps, steps + 1):
        table = arr.astype(int)
        if arr.shape[0] == steps + 1:
            if np.any(table[0] != 1):
                raise DomainError("the initial state is deterministic: step-0 levels must be 1")
            table = table[1:]
    else:
        raise DimensionMismatch(f"level table of shape {arr.shape} does not match "
                                f"{steps} steps and {d} components")
    if np.any(table < 1) or np.any(np.asarray(arr) != np.round(arr)):
        raise DomainError("levels must be positive integers")
    return np.vstack([np.ones((1, d), dtype=int), table])


def _chunks(total: int, per_item: int):
    size = max(1, _CHUNK_ELEMENTS // max(per_item, 1))
    for start in range(0, total, size):
        yield slice(start, min(total, start + size))


def _component_intervals(boundaries, means, shift, lead, zero):
    """Interval of the integrated variable for one component.

    The event is ``mean + shift + lead * Y in (b_j, b_{j+1}]`` with Y ~ N(0, 1).
    Returns lower and upper ends, each of shape (M, K, N). For rows where
    ``zero`` is set the event does not involve Y: the interval is the whole
    line when ``mean + shift`` is in the cell and empty otherwise.
    """
    b = np.asarray(boundaries)
    t = b[None, None, :] - (means[:, None] + shift)[:, :, None]
    lo = np.empty(t.shape[:2] + (b.size - 1,))
    hi = np.empty_like(lo)
    live = ~zero
    pos = live & (lead > 0)
    neg = live & (lead < 0)
    if np.any(pos):
        u = t[pos] / lead[pos, None, None]
        lo[pos], hi[pos] = u[..., :-1], u[..., 1:]
    if np.any(neg):
        u = t[neg] / lead[neg, None, None]
        lo[neg], hi[neg] = u[..., 1:], u[..., :-1]
    if np.any(zero):
        inside = (t[zero][..., :-1] < 0.0) & (t[zero][..., 1:] >= 0.0)
        lo[zero] = np.where(inside, -np.inf, np.inf)
        hi[zero] = np.where(inside, np.inf, -np.inf)
    return lo, hi


def _component_interval_cdfs(boundaries, means, shift, lead, zero):
    lo, hi = _component_intervals(boundaries, means, shift, lead, zero)
    return normal_cdf(lo), normal_cdf(hi)


def conditional_cell_masses(target: ProductGrid, means, shifts, leads, zero, reducers):
    """Integrate product-cell masses against node reducers.

    ``means`` (M, d): Euler means; ``shifts`` (M, K, d): the part of the
    increment fixed by each cubature node; ``leads`` (M, d): loading on the
    remaining standard normal Y; ``zero`` (M, d): rows with no Y loading.
    ``reducers`` (K, R) are node weights (e.g. w_k or w_k * zeta_k).

    Returns (M, |target|, R): sum_k reducers[k, r] * P(cell | node k), where
    the cell probability is max(min_l Phi(hi_l) - max_l Phi(lo_l), 0).
    """
    means = np.asarray(means, dtype=float)
    m_count, d = means.shape
    kk = shifts.shape[1]
    shape = target.shape
    out = np.empty((m_count, target.size, reducers.shape[1]))
    for sl in _chunks(m_count, kk * target.size):
        upper = None
        lower = None
        for l in range(d):
            flo, fhi = _component_interval_cdfs(target.marginals[l].boundaries, means[sl, l],
                                                shifts[sl, :, l], leads[sl, l], zero[sl, l])
            view = [slice(None), slice(None)] + [None] * d
            view[2 + l] = slice(None)
            flo, fhi = flo[tuple(view)], fhi[tuple(view)]
            lower = flo if lower is None else np.maximum(lower, flo)
            upper = fhi if upper is None else np.minimum(upper, fhi)
        mass = np.maximum(upper - lower, 0.0)
        mass = np.broadcast_to(mass, mass.shape[:2] + shape).reshape(mass.shape[0], kk, -1)
        out[sl] = np.einsum("mkj,kr->mjr", mass, reducers)
    return out


def _renormalize(raw: np.ndarray):
    raw = np.maximum(raw, 0.0)
    sums = raw.sum(axis=1)
    defect = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if np.any(sums <= 0.0):
        raise ZeroConditioningMass("a transition row carries no mass")
    return raw / sums[:, None], defect


def _general_matrix(step: EulerStep, target: ProductGrid, cubature,
                    threshold: float = SIGN_THRESHOLD) -> np.ndarray:
    m_count, d, q = step.vol.shape
    if target.d != d:
        raise DimensionMismatch("target grid dimension differs from the model state dimension")
    leads = step.vol[:, :, 0]
    zero = np.abs(step.sigma[:, :, 0]) <= threshold
    if isinstance(cubature, PiecewiseRule):
        if q != 2:
            raise DimensionMismatch("piecewise integration needs exactly one remaining noise (q = 2)")
        return cell_integrals(target, step.mean, step.vol[:, :, 1], leads, zero, cubature)[:, :, 0]
    if cubature.dimension != q - 1:
        raise DimensionMismatch(f"cubature dimension {cubature.dimension} != q - 1 = {q - 1}")
    shifts = np.einsum("mdp,kp->mkd", step.vol[:, :, 1:], cubature.nodes)
    raw = conditional_cell_masses(target, step.mean, shifts, leads, zero,
                                  cubature.weights[:, None])
    return raw[:, :, 0]


def _component_matrix(step: EulerStep, component: int, target: MarginalQuantizer) -> np.ndarray:
    u = standardize(target.boundaries, step.mean[:, component], step.theta[:, component])
    cdf = normal_cdf(u)
    return cdf[:, 1:] - cdf[:, :-1]


def _check_diagonal(step: EulerStep, threshold: float = SIGN_THRESHOLD):
    m_count, d, q = step.sigma.shape
    if q != d:
        raise NotDiagonal(f"diffusion is {d}x{q}, not square")
    diag = np.einsum("mll->ml", step.sigma)
    off = step.sigma * (1.0 - np.eye(d))[None]
    if np.any(np.abs(off) > threshold) or np.any(diag <= threshold):
        raise NotDiagonal("diffusion matrix is not diagonal with positive entries")


def _diagonal_matrix(step: EulerStep, target: ProductGrid) -> np.ndarray:
    _check_diagonal(step)
    out = None
    for l, marg in enumerate(target.marginals):
        c = _component_matrix(step, l, marg)
        out = c if out is None else (out[:, :, None] * c[:, None, :]).reshape(c.shape[0], -1)
    return out


def transition_general(model: DiffusionModel, grid: TimeGrid, k: int, source: ProductGrid,
                       target: ProductGrid, cubature=None,
                       renormalize: bool = True) -> TransitionMatrix:
    """Transition probabilities between product cells for a full diffusion matrix."""
    if source.d != model.d or target.d != model.d:
        raise DimensionMismatch("grid dimension differs from the model state dimension")
    cubature = cubature or default_cubature(model.q)
    step = euler_step(model, grid, k, source.points)
    raw = _general_matrix(step, target, cubature)
    if not renormalize:
        return TransitionMatrix(k, raw, float(np.max(np.abs(raw.sum(axis=1) - 1.0))), "general")
    mat, defect = _renormalize(raw)
    return TransitionMatrix(k, mat, defect, "general")


def transition_diagonal(model: DiffusionModel, grid: TimeGrid, k: int, source: ProductGrid,
                        target: ProductGrid) -> TransitionMatrix:
    """Transition probabilities as products of 1D cell probabilities."""
    if source.d != model.d or target.d != model.d:
        raise DimensionMismatch("grid dimension differs from the model state dimension")
    step = euler_step(model, grid, k, source.points)
    raw = _diagonal_matrix(step, target)
    mat, defect = _renormalize(raw)
    return TransitionMatrix(k, mat, defect, "diagonal")


def transition_component(model: DiffusionModel, grid: TimeGrid, k: int, source: ProductGrid,
                         component: int, target_marginal: MarginalQuantizer) -> np.ndarray:
    """P(component lands in each cell of ``target_marginal`` | source cell)."""
    if not 0 <= component < model.d:
        raise IndexError(f"component {component} outside [0, {model.d})")
    step = euler_step(model, grid, k, source.points)
    return _component_matrix(step, component, target_marginal)


def _is_diagonal(step: EulerStep) -> bool:
    try:
        _check_diagonal(step)
    except NotDiagonal:
        return False
    return True


def build_chain(model: DiffusionModel, grid: TimeGrid, levels, cubature=None,
                opts: OptimizerOptions | None = None, transition: str = "auto",
                cell_cap: int = DEFAULT_CELL_CAP) -> QuantizedChain:
    """Run the forward recursion: grids, weights and transitions for every step."""
    opts = opts or OptimizerOptions()
    table = normalize_levels(levels, grid.steps, model.d)
    sizes = np.prod(table, axis=1)
    if np.any(sizes > cell_cap):
        k = int(np.argmax(sizes > cell_cap))
        raise CapacityExceeded(f"step {k} has {int(sizes[k])} product cells, cap is {cell_cap}")
    if transition not in ("auto", "general", "diagonal"):
        raise DomainError(f"unknown transition method {transition!r}")
    if cubature is None and transition != "diagonal":
        cubature = default_cubature(model.q)

    grids = [ProductGrid.single_point(model.x0)]
    weights = [np.ones(1)]
    transitions, comp_trans, comp_weights, eulers = [], [], [[np.ones(1)] * model.d], []
    defects, opt_info = [], []
    for k in range(grid.steps):
        step = euler_step(model, grid, k, grids[k].points)
        eulers.append(step)
        p = weights[k]
        marginals = []
        for l in range(model.d):
            src = MixtureSource(step.mean[:, l], step.theta[:, l], p)
            try:
                q = optimize(src, int(table[k + 1, l]), opts, component=l)
            except NonConvergence as exc:
                exc.context.update({"step": k + 1, "component": l})
                raise
            marginals.append(q)
            opt_info.append({"step": k + 1, "component": l, "iterations": q.iterations,
                             "residual": q.residual, **q.info})
        target = ProductGrid(tuple(marginals))
        method = transition
        if method == "auto":
            method = "diagonal" if model.diagonal and _is_diagonal(step) else "general"
        if method == "diagonal":
            raw = _diagonal_matrix(step, target)
        else:
            raw = _general_matrix(step, target, cubature)
        mat, defect = _renormalize(raw)
        defects.append(defect)
        transitions.append(TransitionMatrix(k, mat, defect, method))
        comps = [_component_matrix(step, l, target.marginals[l]) for l in range(model.d)]
        comp_trans.append(comps)
        comp_weights.append([p @ c for c in comps])
        new = p @ mat
        weights.append(new)
        grids.append(target)
        log.debug("step %d: %s cells, defect %.2e", k + 1, target.shape, defect)

    return QuantizedChain(model=model, time_grid=grid, levels=table, grids=grids,
                          weights=weights, transitions=transitions,
                          component_transitions=comp_trans, component_weights=comp_weights,
                          euler=eulers, cubature=cubature, options=opts,
                          diagnostics={"normalization_defects": defects, "optimizer": opt_info})


def cross_component_transition(chain: QuantizedChain, k: int, component: int,
                               given_component: int, j: int, j_given: int) -> float:
    """P(component ``component`` at k+1 in cell j | ``given_component`` at k in cell j_given).

    Indices are zero-based.
    """
    mat = cross_component_matrix(chain, k, component, given_component)
    return float(mat[j_given, j])


def cross_component_matrix(chain: QuantizedChain, k: int, component: int,
                           given_component: int) -> np.ndarray:
    """All cross-component transitions at step k, shape (N_k^{given}, N_{k+1}^{component})."""
    src = chain.grids[k]
    idx = src.multi_indices[:, given_component]
    p = chain.weights[k]
    comp = chain.component_transitions[k][component]
    n_given = src.shape[given_component]
    num = np.zeros((n_given, comp.shape[1]))
    np.add.at(num, idx, p[:, None] * comp)
    den = np.bincount(idx, weights=p, minlength=n_given)
    if np.any(den <= 0.0):
        raise ZeroConditioningMass("conditioning cell has zero probability")
    return num / den[:, None]
