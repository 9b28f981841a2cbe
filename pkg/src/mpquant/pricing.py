"""European payoffs priced against the quantized terminal law."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain import QuantizedChain
from .errors import DimensionMismatch, DomainError

VECTOR = "vector_function"
COMPONENT = "component_function"


@dataclass(frozen=True)
class Payoff:
    """Call or put on w . x (vector kind) or on one component x^l (component kind)."""

    kind: str
    strike: float
    rate: float
    maturity: float
    weights: tuple = ()
    component: int = 0
    option: str = "call"

    def __post_init__(self):
        if self.kind not in (VECTOR, COMPONENT):
            raise DomainError(f"unknown payoff kind {self.kind!r}")
        if self.option not in ("call", "put"):
            raise DomainError(f"option must be 'call' or 'put', got {self.option!r}")
        if not self.strike >= 0:
            raise DomainError("strike must be nonnegative")
        if not self.maturity > 0:
            raise DomainError("maturity must be positive")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.kind == VECTOR and not self.weights:
            raise DomainError("vector payoff needs weights")

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.maturity)

    def intrinsic(self, underlying) -> np.ndarray:
        u = np.asarray(underlying, dtype=float)
        if self.option == "call":
            return np.maximum(u - self.strike, 0.0)
        return np.maximum(self.strike - u, 0.0)

    def __call__(self, x) -> np.ndarray:
        """Payoff at state rows ``x`` (shape (M, d))."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == VECTOR:
            if len(self.weights) != x.shape[1]:
                raise DimensionMismatch(f"{len(self.weights)} weights for a {x.shape[1]}-d state")
            return self.intrinsic(x @ np.asarray(self.weights))
        return self.intrinsic(x[:, self.component])


def basket_call(strike, rate, maturity, weights=(0.5, 0.5), option="call") -> Payoff:
    return Payoff(VECTOR, strike, rate, maturity, weights=weights, option=option)


def component_call(strike, rate, maturity, component=0, option="call") -> Payoff:
    return Payoff(COMPONENT, strike, rate, maturity, component=component, option=option)


def price_vector_payoff(chain: QuantizedChain, payoff: Payoff) -> float:
    """Discounted sum of the payoff over the terminal product grid."""
    n = chain.steps
    values = payoff(chain.grids[n].points) if payoff.kind == VECTOR else \
        payoff.intrinsic(chain.grids[n].points[:, payoff.component])
    return payoff.discount * float(values @ chain.weights[n])


def price_component_payoff(chain: QuantizedChain, payoff: Payoff, component: int | None = None) -> float:
    """Discounted sum over one marginal grid with the component weights."""
    n = chain.steps
    comp = payoff.component if component is None else component
    if not 0 <= comp < chain.model.d:
        raise IndexError(f"component {comp} outside [0, {chain.model.d})")
    pts = chain.grids[n].marginals[comp].points
    return payoff.discount * float(payoff.intrinsic(pts) @ chain.component_weights[n][comp])


def price(chain: QuantizedChain, payoff: Payoff) -> float:
    if payoff.kind == COMPONENT:
        return price_component_payoff(chain, payoff)
    return price_vector_payoff(chain, payoff)


@dataclass
class LadderRow:
    option: str
    strike: float
    price: float
    benchmark: float | None = None

    @property
    def relative_error(self) -> float | None:
        if self.benchmark is None or self.benchmark == 0:
            return None
        return abs(self.price - self.benchmark) / abs(self.benchmark)


def strike_ladder(chain: QuantizedChain, template: Payoff, calls: Sequence[float] = (),
                  puts: Sequence[float] = (), benchmarks: dict | None = None) -> list:
    """Price a labelled ladder of calls and puts sharing one template payoff.

    ``benchmarks`` maps (option, strike) to a reference price.
    """
    benchmarks = benchmarks or {}
    rows = []
    for option, strikes in (("call", calls), ("put", puts)):
        for k in strikes:
            p = Payoff(template.kind, float(k), template.rate, template.maturity,
                       weights=template.weights, component=template.component, option=option)
            rows.append(LadderRow(option, float(k), price(chain, p),
                                  benchmarks.get((option, float(k)))))
    return rows


def format_ladder(rows) -> str:
    lines = [f"{'option':<6} {'strike':>8} {'price':>12} {'benchmark':>12} {'rel.err':>10}"]
    for r in rows:
        bench = "" if r.benchmark is None else f"{r.benchmark:12.4f}"
        err = "" if r.relative_error is None else f"{100 * r.relative_error:9.4f}%"
        lines.append(f"{r.option:<6} {r.strike:8.2f} {r.price:12.4f} {bench:>12} {err:>10}")
    return "\n".join(lines)
