"""Scalar Gaussian primitives and cubature rules for N(0, I) expectations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr, ndtri

from .errors import CapacityExceeded, DomainError

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
MAX_CUBATURE_NODES = 10**7


def normal_cdf(x):
    """Standard normal CDF; accepts scalars or arrays, saturates at +-inf."""
    out = ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def x_normal_pdf(x):
    """x * pdf(x), extended by continuity with value 0 at +-inf."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        out = x * INV_SQRT_2PI * np.exp(-0.5 * x * x)
    out = np.where(np.isfinite(x), out, 0.0)
    return float(out) if out.ndim == 0 else out


def normal_quantile(p):
    """Inverse of :func:`normal_cdf` on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise DomainError(f"normal_quantile needs 0 < p < 1, got {p!r}")
    out = ndtri(arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CubatureRule:
    """Nodes and weights approximating expectations over N(0, I_dimension).

    ``dimension == 0`` is allowed and denotes the one-point rule on the empty
    vector; it arises when the Brownian dimension is one and there is nothing
    left to integrate after conditioning on the first coordinate.
    """

    dimension: int
    nodes: np.ndarray
    weights: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.dimension < 0:
            raise DomainError("cubature dimension must be nonnegative")
        weights = np.array(self.weights, dtype=float).reshape(-1)
        nodes = np.array(self.nodes, dtype=float).reshape(weights.size, self.dimension)
        if nodes.shape[0] != weights.shape[0]:
            raise DomainError("node count and weight count differ")
        if np.any(weights < 0.0):
            raise DomainError("cubature weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"cubature weights sum to {weights.sum()!r}, not 1")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    def expect(self, values) -> float:
        """Weighted sum of ``values`` (one value per node, leading axis)."""
        return np.tensordot(self.weights, np.asarray(values, dtype=float), axes=(0, 0))

    def moment_defect(self) -> float:
        """Largest deviation of the rule's first two moments from N(0, I)."""
        if self.dimension == 0:
            return 0.0
        w = self.weights
        mean = w @ self.nodes
        second = (self.nodes * w[:, None]).T @ self.nodes
        return float(max(np.abs(mean).max(), np.abs(second - np.eye(self.dimension)).max()))


def point_mass_rule(dimension: int = 0) -> CubatureRule:
    """One node at the origin with weight one."""
    return CubatureRule(dimension, np.zeros((1, dimension)), np.ones(1), label="point")


def gauss_hermite_rule(dimension: int, points_per_axis: int,
                       max_nodes: int = MAX_CUBATURE_NODES) -> CubatureRule:
    """Tensor-product probabilists' Gauss-Hermite rule normalized to N(0, I).

    Exact for polynomials of degree <= 2 * points_per_axis - 1 in each
    coordinate.
    """
    if dimension < 1 or points_per_axis < 1:
        raise DomainError("dimension and points_per_axis must be >= 1")
    if dimension * math.log(points_per_axis) > math.log(max_nodes) + 1e-12:
        raise CapacityExceeded(
            f"{points_per_axis}^{dimension} nodes exceeds the cap of {max_nodes}")
    x, w = hermegauss(points_per_axis)
    w = w / w.sum()
    # hermegauss returns nodes that are symmetric only up to rounding
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    if dimension == 1:
        nodes, weights = x[:, None], w
    else:
        grids = np.meshgrid(*([x] * dimension), indexing="ij")
        nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
        wgrids = np.meshgrid(*([w] * dimension), indexing="ij")
        weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=1), axis=1)
        weights = weights / weights.sum()
    return CubatureRule(dimension, nodes, weights,
                        label=f"gauss-hermite:{points_per_axis}^{dimension}")


def load_grid_file(path, dimension: int | None = None, normalize: bool = True) -> CubatureRule:
    """Read an external Gaussian grid: d node columns then a weight column.

    Lines starting with ``#`` are comments. Quantization grids published as
    text are only normalized to a few digits, hence ``normalize``.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            rows.append([float(tok) for tok in stripped.split()])
        except ValueError as exc:
            raise DomainError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DomainError(f"{path}: no grid rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DomainError(f"{path}: ragged rows")
    data = np.array(rows)
    d = width - 1
    if dimension is not None and dimension != d:
        raise DomainError(f"{path}: expected {dimension} coordinates, found {d}")
    weights = data[:, -1]
    if normalize:
        weights = weights / weights.sum()
    return CubatureRule(d, data[:, :-1], weights, label=f"file:{Path(path).name}")
