"""Optimal one-dimensional quantization of a Gaussian mixture.

The mixture is the law of one component of the Euler scheme started from the
previous quantized law: sum_i p_i N(m_i, theta_i^2). Distortion, gradient and
the tridiagonal Hessian are evaluated in closed form from the normal CDF and
density at the standardized cell boundaries, and a safeguarded Newton
iteration (with Lloyd fixed-point fallback) drives the gradient to zero.

Gradient and Hessian are those of the distortion itself, so they agree with
finite differences of :func:`distortion`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, solve_banded

from .errors import DomainError, NonConvergence
from .gaussian import INV_SQRT_2PI, normal_cdf, normal_quantile, x_normal_pdf

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class MixtureSource:
    """Gaussian mixture with weights ``probs``, means and standard deviations."""

    means: np.ndarray
    thetas: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        m = np.array(self.means, dtype=float).reshape(-1)
        s = np.array(self.thetas, dtype=float).reshape(-1)
        p = np.array(self.probs, dtype=float).reshape(-1)
        if not (m.shape == s.shape == p.shape):
            raise DomainError("means, thetas and probs must have equal length")
        if m.size == 0:
            raise DomainError("empty mixture")
        if np.any(s < 0) or np.any(p < 0):
            raise DomainError("thetas and probs must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-10:
            raise DomainError(f"mixture probabilities sum to {p.sum()!r}")
        for a in (m, s, p):
            a.setflags(write=False)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "thetas", s)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_euler(cls, step, component: int, probs) -> "MixtureSource":
        return cls(step.mean[:, component], step.theta[:, component], probs)

    def mean(self) -> float:
        return float(self.probs @ self.means)

    def variance(self) -> float:
        mu = self.mean()
        # centred form avoids cancellation when |mean| >> std
        return float(self.probs @ ((self.means - mu) ** 2 + self.thetas ** 2))

    def std(self) -> float:
        return math.sqrt(max(self.variance(), 0.0))

    def scaled(self, c: float, shift: float = 0.0) -> "MixtureSource":
        return MixtureSource(c * self.means + shift, abs(c) * self.thetas, self.probs)


@dataclass(frozen=True)
class MarginalQuantizer:
    """A strictly increasing 1D grid and its Voronoi (midpoint) boundaries."""

    points: np.ndarray
    component: int = 0
    tolerance: float | None = None
    residual: float | None = None
    iterations: int = 0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1)
        if pts.size == 0:
            raise DomainError("a quantizer needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise DomainError("quantizer points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise DomainError("quantizer points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def boundaries(self) -> np.ndarray:
        """N+1 cell boundaries, -inf and +inf at the ends."""
        return cell_boundaries(self.points)

    def project(self, values) -> np.ndarray:
        """Index of the Voronoi cell for each value, cells closed on the right (ties go left)."""
        return np.searchsorted(self.boundaries[1:-1], np.asarray(values, dtype=float), side="left")


@dataclass(frozen=True)
class OptimizerOptions:
    tolerance: float = 1e-10
    max_newton_iters: int = 50
    max_lloyd_iters: int = 200
    max_halvings: int = 20
    probability_floor: float = 1e-13
    init: str = "quantile"


@dataclass(frozen=True)
class Tridiagonal:
    """Symmetric-structure tridiagonal matrix: sub[j] = H[j+1, j], sup[j] = H[j, j+1]."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    def dense(self) -> np.ndarray:
        n = self.diag.size
        out = np.diag(self.diag)
        if n > 1:
            out += np.diag(self.sub, -1) + np.diag(self.sup, 1)
        return out

    def solve(self, rhs) -> np.ndarray:
        n = self.diag.size
        ab = np.zeros((3, n))
        ab[0, 1:] = self.sup
        ab[1] = self.diag
        ab[2, :-1] = self.sub
        return solve_banded((1, 1), ab, np.asarray(rhs, dtype=float))

    def solve_spd(self, rhs, shift=None) -> np.ndarray:
        """Cholesky solve of (H + diag(shift)); LinAlgError if not positive definite."""
        n = self.diag.size
        ab = np.zeros((2, n))
        ab[0, 1:] = self.sup
        ab[1] = self.diag if shift is None else self.diag + shift
        factor = cholesky_banded(ab, lower=False)
        return cho_solve_banded((factor, False), np.asarray(rhs, dtype=float))


def cell_boundaries(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    out = np.empty(pts.size + 1)
    out[0], out[-1] = -np.inf, np.inf
    out[1:-1] = 0.5 * (pts[1:] + pts[:-1])
    return out


def standardize(boundaries, means, thetas) -> np.ndarray:
    """(b - m) / theta for every (source, boundary) pair, shape (M, B).

    A zero theta is a Dirac mass at m; its standardized boundaries are -inf for
    b < m and +inf for b >= m, so cells are closed on the right and a Dirac on
    a boundary belongs to the left cell.
    """
    b = np.asarray(boundaries, dtype=float)
    m = np.asarray(means, dtype=float)
    s = np.asarray(thetas, dtype=float)
    diff = b[None, :] - m[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = diff / s[:, None]
    zero = s <= 0.0
    if np.any(zero):
        u[zero] = np.where(diff[zero] >= 0.0, np.inf, -np.inf)
    return u


def _points(grid) -> np.ndarray:
    if isinstance(grid, MarginalQuantizer):
        return grid.points
    pts = np.asarray(grid, dtype=float).reshape(-1)
    if np.any(np.diff(pts) <= 0):
        raise DomainError("grid points must be strictly increasing")
    return pts


class _CellTerms:
    """Normal CDF/pdf terms of every (source, cell) pair for one grid."""

    __slots__ = ("x", "u", "pdf", "gamma", "dpdf")

    def __init__(self, source: MixtureSource, x: np.ndarray):
        self.x = x
        self.u = standardize(cell_boundaries(x), source.means, source.thetas)
        cdf = normal_cdf(self.u)
        self.pdf = INV_SQRT_2PI * np.exp(-0.5 * self.u * self.u)
        self.gamma = cdf[:, 1:] - cdf[:, :-1]
        # pdf(u+) - pdf(u-)
        self.dpdf = self.pdf[:, 1:] - self.pdf[:, :-1]


def _distortion(source, terms) -> float:
    m = source.means[:, None]
    s = source.thetas[:, None]
    dx = terms.x[None, :] - m
    updf = x_normal_pdf(terms.u)
    psi = (dx * dx + s * s) * terms.gamma + 2.0 * s * dx * terms.dpdf \
        - s * s * (updf[:, 1:] - updf[:, :-1])
    return float(source.probs @ psi.sum(axis=1))


def _half_gradient(source, terms) -> np.ndarray:
    dx = terms.x[None, :] - source.means[:, None]
    return source.probs @ (dx * terms.gamma + source.thetas[:, None] * terms.dpdf)


def _hessian(source, terms) -> Tridiagonal:
    x = terms.x
    n = x.size
    mass = source.probs @ terms.gamma
    diag = 2.0 * mass
    if n == 1:
        return Tridiagonal(np.zeros(0), diag, np.zeros(0))
    s = source.thetas
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(s[:, None] > 0.0, terms.pdf[:, 1:-1] / s[:, None], 0.0)
    # density of the mixture at each interior boundary
    bdens = source.probs @ dens
    off = -0.5 * np.diff(x) * bdens
    diag[1:] += off
    diag[:-1] += off
    return Tridiagonal(off.copy(), diag, off.copy())


def distortion(source: MixtureSource, grid) -> float:
    """Mean squared distance from the mixture to its nearest grid point."""
    x = _points(grid)
    return _distortion(source, _CellTerms(source, x))


def gradient(source: MixtureSource, grid) -> np.ndarray:
    x = _points(grid)
    return 2.0 * _half_gradient(source, _CellTerms(source, x))


def hessian(source: MixtureSource, grid) -> Tridiagonal:
    x = _points(grid)
    return _hessian(source, _CellTerms(source, x))


def cell_masses(source: MixtureSource, grid) -> np.ndarray:
    """Mixture probability of each Voronoi cell."""
    x = _points(grid)
    return source.probs @ _CellTerms(source, x).gamma


def _lloyd(source, terms, floor) -> np.ndarray:
    mass = source.probs @ terms.gamma
    half_g = _half_gradient(source, terms)
    new = terms.x.copy()
    live = mass >= floor
    # x - E[(x - X)1_C]/P(C) is the conditional mean, written without cancellation
    new[live] = terms.x[live] - half_g[live] / mass[live]
    return new


def lloyd_step(source: MixtureSource, grid, probability_floor: float = 1e-13) -> MarginalQuantizer:
    """Replace each point by the conditional mean of its cell."""
    x = _points(grid)
    new = _lloyd(source, _CellTerms(source, x), probability_floor)
    component = grid.component if isinstance(grid, MarginalQuantizer) else 0
    if np.any(np.diff(new) <= 0):
        raise NonConvergence("Lloyd update lost strict ordering", points=x)
    return MarginalQuantizer(new, component=component)


def initial_grid(source: MixtureSource, n: int) -> np.ndarray:
    mu, sd = source.mean(), source.std()
    if n == 1:
        return np.array([mu])
    z = normal_quantile((2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n))
    if sd <= 0.0:
        sd = 1e-8 * max(1.0, abs(mu))
    return mu + sd * z


def _newton_direction(hess: Tridiagonal, g: np.ndarray, mass: np.ndarray):
    """Newton direction, shifted toward the Lloyd metric when H is indefinite.

    Far from the optimum the distortion is not convex; solving with
    H + mu * diag(2 * mass) for the smallest tried mu that makes the system
    positive definite interpolates between Newton (mu = 0) and a scaled Lloyd
    step (mu large) and always gives a descent direction.
    """
    metric = 2.0 * np.maximum(mass, 1e-8 * max(float(mass.max()), 1e-300))
    mu = 0.0
    for _ in range(30):
        try:
            step = hess.solve_spd(g, None if mu == 0.0 else mu * metric)
        except (np.linalg.LinAlgError, ValueError):
            step = None
        if step is not None and np.all(np.isfinite(step)):
            return step
        mu = 1e-3 if mu == 0.0 else 4.0 * mu
    return None


def _ordered(x) -> bool:
    return bool(np.all(np.isfinite(x))) and bool(np.all(np.diff(x) > 0))


def optimize(source: MixtureSource, n: int, opts: OptimizerOptions | None = None,
             component: int = 0, initial=None) -> MarginalQuantizer:
    """Stationary n-point quantizer of the mixture by safeguarded Newton."""
    opts = opts or OptimizerOptions()
    if n < 1:
        raise DomainError("quantizer level must be >= 1")
    tol = opts.tolerance * max(1.0, source.std())
    radius = source.std() if source.std() > 0 else 1.0
    if initial is not None:
        x = np.asarray(initial, dtype=float).reshape(-1).copy()
        if x.size != n or not _ordered(x):
            raise DomainError("initial grid must be strictly increasing with n points")
    elif opts.init == "quantile":
        x = initial_grid(source, n)
    else:
        raise DomainError(f"unknown init scheme {opts.init!r}")

    terms = _CellTerms(source, x)
    dist = _distortion(source, terms)
    info = {"newton": 0, "lloyd": 0, "halvings": 0, "initial_distortion": dist}

    def finish(terms, dist, res, iters):
        # one extra Newton step is nearly free and, being quadratic, drives
        # the residual to rounding level; low-mass cells need that for the
        # Lloyd fixed point to hold as tightly as the gradient does
        step = _newton_direction(_hessian(source, terms), 2.0 * _half_gradient(source, terms),
                                 source.probs @ terms.gamma)
        if step is not None and np.all(np.isfinite(step)):
            xn = terms.x - step
            if _ordered(xn):
                tn = _CellTerms(source, xn)
                rn = float(np.max(np.abs(2.0 * _half_gradient(source, tn))))
                dn = _distortion(source, tn)
                # the distortion change is below its own rounding noise here
                if rn < res and dn <= dist + 1e-12 * abs(dist):
                    terms, dist, res = tn, dn, rn
                    info["newton"] += 1
        info["distortion"] = dist
        return MarginalQuantizer(terms.x, component=component, tolerance=tol,
                                 residual=res, iterations=iters, info=info)

    iters = 0
    for _ in range(opts.max_newton_iters):
        g = 2.0 * _half_gradient(source, terms)
        res = float(np.max(np.abs(g)))
        if res <= tol:
            return finish(terms, dist, res, iters)
        iters += 1
        accepted = False
        step = _newton_direction(_hessian(source, terms), g, source.probs @ terms.gamma)
        # an indefinite Hessian can point uphill; leave those to Lloyd
        if step is not None and np.all(np.isfinite(step)) and float(g @ step) > 0.0:
            # trust region: an empty cell has a flat Hessian row and Newton
            # would otherwise fling its point arbitrarily far
            big = float(np.max(np.abs(step)))
            t = 1.0 if big <= radius else radius / big
            for _h in range(opts.max_halvings + 1):
                xn = terms.x - t * step
                if _ordered(xn):
                    tn = _CellTerms(source, xn)
                    dn = _distortion(source, tn)
                    # equality up to rounding is accepted near the optimum
                    if dn <= dist + 4.0 * _EPS * abs(dist):
                        accepted = True
                        break
                t *= 0.5
                info["halvings"] += 1
        if accepted:
            info["newton"] += 1
        else:
            xn = _lloyd(source, terms, opts.probability_floor)
            if not _ordered(xn):
                break
            tn = _CellTerms(source, xn)
            dn = _distortion(source, tn)
            info["lloyd"] += 1
        terms, dist = tn, dn

    for _ in range(opts.max_lloyd_iters):
        g = 2.0 * _half_gradient(source, terms)
        res = float(np.max(np.abs(g)))
        if res <= tol:
            return finish(terms, dist, res, iters)
        iters += 1
        xn = _lloyd(source, terms, opts.probability_floor)
        if not _ordered(xn):
            break
        terms = _CellTerms(source, xn)
        dist = _distortion(source, terms)
        info["lloyd"] += 1

    g = 2.0 * _half_gradient(source, terms)
    res = float(np.max(np.abs(g)))
    if res <= tol:
        return finish(terms, dist, res, iters)
    raise NonConvergence(f"marginal optimizer stopped with residual {res:.3e} > {tol:.3e}",
                         points=terms.x.copy(), residual=res)
