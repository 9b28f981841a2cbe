"""Diffusion coefficients, time grid and the componentwise Euler operator.

Coefficient callbacks are vectorized: ``drift(t, x)`` receives ``x`` of shape
``(..., d)`` and returns the same shape, ``diffusion(t, x)`` returns
``(..., d, q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidParameter, MissingParameter, ModelDomainError


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InvalidParameter(f"horizon must be positive, got {self.horizon!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidParameter(f"steps must be a positive integer, got {self.steps!r}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def delta(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * self.delta
        t[-1] = self.horizon
        return t

    def time(self, k: int) -> float:
        return self.horizon if k == self.steps else k * self.delta


@dataclass(frozen=True)
class DiffusionModel:
    name: str
    d: int
    q: int
    drift: Callable
    diffusion: Callable
    x0: np.ndarray
    params: Mapping[str, float] = field(default_factory=dict)
    domain: Callable | None = None
    # declared structure; transition_diagonal still validates numerically
    diagonal: bool = False

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(self.d)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "params", dict(self.params))

    def check_domain(self, x):
        if self.domain is None:
            return
        ok = np.asarray(self.domain(np.asarray(x, dtype=float)))
        if not np.all(ok):
            bad = np.asarray(x).reshape(-1, self.d)[~ok.reshape(-1)][0]
            raise ModelDomainError(f"{self.name}: state {bad.tolist()} outside the admissible domain")


@dataclass(frozen=True)
class EulerRow:
    mean: float
    sigma_row: np.ndarray
    theta: float


@dataclass(frozen=True)
class EulerStep:
    """Euler transition data for a batch of source points at one time step.

    ``vol`` holds sqrt(delta) * sigma(t_k, x), shape (M, d, q); ``theta`` the
    Euclidean norms of its rows, shape (M, d).
    """

    k: int
    points: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    vol: np.ndarray
    theta: np.ndarray


def euler_step(model: DiffusionModel, grid: TimeGrid, k: int, points) -> EulerStep:
    if not 0 <= k < grid.steps:
        raise IndexError(f"step {k} outside [0, {grid.steps})")
    x = np.asarray(points, dtype=float).reshape(-1, model.d)
    model.check_domain(x)
    t = grid.time(k)
    dt = grid.delta
    b = np.asarray(model.drift(t, x), dtype=float).reshape(x.shape)
    s = np.asarray(model.diffusion(t, x), dtype=float).reshape(x.shape[0], model.d, model.q)
    vol = math.sqrt(dt) * s
    return EulerStep(k=k, points=x, mean=x + dt * b, sigma=s, vol=vol,
                     theta=np.sqrt(np.sum(vol * vol, axis=2)))


def euler_row(model: DiffusionModel, grid: TimeGrid, k: int, component: int, x) -> EulerRow:
    """Mean, diffusion row and row norm of the Euler operator for one component.

    ``component`` is zero-based.
    """
    if not 0 <= component < model.d:
        raise IndexError(f"component {component} outside [0, {model.d})")
    step = euler_step(model, grid, k, np.asarray(x, dtype=float).reshape(1, model.d))
    row = step.sigma[0, component].copy()
    row.setflags(write=False)
    return EulerRow(mean=float(step.mean[0, component]), sigma_row=row,
                    theta=float(step.theta[0, component]))


def simulate_euler(model: DiffusionModel, grid: TimeGrid, k: int, x, normals) -> np.ndarray:
    """One Euler step from ``x`` (shape (M, d)) with innovations (M, q)."""
    step = euler_step(model, grid, k, x)
    return step.mean + np.einsum("mdq,mq->md", step.vol, np.asarray(normals, dtype=float))


# ---------------------------------------------------------------------------
# built-in models

def _require(params, names):
    missing = [n for n in names if n not in params]
    if missing:
        raise MissingParameter(f"missing parameter(s): {', '.join(missing)}")
    return [float(params[n]) for n in names]


def _check_rho(rho):
    if not -1.0 <= rho <= 1.0:
        raise InvalidParameter(f"correlation rho must lie in [-1, 1], got {rho}")


def _positive(name, value):
    if not value > 0:
        raise InvalidParameter(f"{name} must be positive, got {value}")


def black_scholes(mu: float, sigma: float, x0: float = 100.0) -> DiffusionModel:
    _positive("sigma", sigma)

    def drift(t, x):
        return mu * x

    def diffusion(t, x):
        return (sigma * x)[..., None]

    return DiffusionModel("black_scholes", 1, 1, drift, diffusion, [x0],
                          params={"mu": mu, "sigma": sigma, "x0": x0}, diagonal=True)


def basket2d(r: float, sigma1: float, sigma2: float, rho: float,
             s1: float = 100.0, s2: float = 100.0) -> DiffusionModel:
    """Two correlated lognormal assets.

    First asset loads (rho*sigma1, sqrt(1-rho^2)*sigma1) on (W1, W2); the second
    loads only on W1 with sigma2.
    """
    _positive("sigma1", sigma1)
    _positive("sigma2", sigma2)
    _check_rho(rho)
    c = math.sqrt(1.0 - rho * rho)

    def drift(t, x):
        return r * x

    def diffusion(t, x):
        out = np.zeros(x.shape + (2,))
        out[..., 0, 0] = rho * sigma1 * x[..., 0]
        out[..., 0, 1] = c * sigma1 * x[..., 0]
        out[..., 1, 0] = sigma2 * x[..., 1]
        return out

    return DiffusionModel("basket2d", 2, 2, drift, diffusion, [s1, s2],
                          params={"r": r, "sigma1": sigma1, "sigma2": sigma2, "rho": rho,
                                  "s1": s1, "s2": s2})


def heston(r: float, kappa: float, theta: float, sigma: float, rho: float,
           s0: float = 100.0, v0: float | None = None,
           truncation: str = "full") -> DiffusionModel:
    """Heston price/variance pair, state (S, V).

    The price loads only on W1; the variance loads (rho*sigma, sqrt(1-rho^2)*sigma)
    times sqrt(V). With ``truncation="full"`` the square roots use max(V, 0) and
    the drift keeps kappa*(theta - V); with ``"none"`` negative variances are
    rejected as outside the domain.
    """
    _positive("kappa", kappa)
    _positive("theta", theta)
    _positive("sigma", sigma)
    _check_rho(rho)
    if truncation not in ("full", "none"):
        raise InvalidParameter(f"unknown truncation scheme {truncation!r}")
    v0 = theta if v0 is None else v0
    c = math.sqrt(1.0 - rho * rho)

    def drift(t, x):
        out = np.empty_like(x)
        out[..., 0] = r * x[..., 0]
        out[..., 1] = kappa * (theta - x[..., 1])
        return out

    def diffusion(t, x):
        sv = np.sqrt(np.maximum(x[..., 1], 0.0))
        out = np.zeros(x.shape + (2,))
        out[..., 0, 0] = sv * x[..., 0]
        out[..., 1, 0] = rho * sigma * sv
        out[..., 1, 1] = c * sigma * sv
        return out

    domain = None
    if truncation == "none":
        def domain(x):
            return x[..., 1] >= 0.0

    return DiffusionModel("heston", 2, 2, drift, diffusion, [s0, v0],
                          params={"r": r, "kappa": kappa, "theta": theta, "sigma": sigma,
                                  "rho": rho, "s0": s0, "v0": v0},
                          domain=domain)


def unit_brownian(d: int, x0=None) -> DiffusionModel:
    if int(d) != d or d < 1:
        raise InvalidParameter(f"dimension d must be a positive integer, got {d}")
    d = int(d)
    eye = np.eye(d)

    def drift(t, x):
        return np.zeros_like(x)

    def diffusion(t, x):
        return np.broadcast_to(eye, x.shape[:-1] + (d, d)).copy()

    x0 = np.zeros(d) if x0 is None else x0
    return DiffusionModel("unit_brownian", d, d, drift, diffusion, x0,
                          params={"d": d}, diagonal=True)


_REQUIRED = {
    "black_scholes": ("mu", "sigma"),
    "basket2d": ("r", "sigma1", "sigma2", "rho"),
    "heston": ("r", "kappa", "theta", "sigma", "rho"),
    "unit_brownian": ("d",),
}
_OPTIONAL = {
    "black_scholes": ("x0",),
    "basket2d": ("s1", "s2"),
    "heston": ("s0", "v0", "truncation"),
    "unit_brownian": (),
}
BUILTIN_MODELS = tuple(_REQUIRED)


def model_parameter_names(name: str):
    return _REQUIRED[name], _OPTIONAL[name]


def builtin_model(name: str, params: Mapping[str, object]) -> DiffusionModel:
    if name not in _REQUIRED:
        raise InvalidParameter(f"unknown model {name!r}; expected one of {BUILTIN_MODELS}")
    unknown = set(params) - set(_REQUIRED[name]) - set(_OPTIONAL[name])
    if unknown:
        raise InvalidParameter(f"unknown parameter(s) for {name}: {sorted(unknown)}")
    values = _require(params, _REQUIRED[name])
    extra = {k: params[k] for k in _OPTIONAL[name] if k in params}
    if name == "black_scholes":
        return black_scholes(*values, **{k: float(v) for k, v in extra.items()})
    if name == "basket2d":
        return basket2d(*values, **{k: float(v) for k, v in extra.items()})
    if name == "heston":
        kw = {k: (v if k == "truncation" else float(v)) for k, v in extra.items()}
        return heston(*values, **kw)
    return unit_brownian(values[0])
