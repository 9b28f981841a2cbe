import math

import numpy as np
import pytest

from mpquant import (Payoff, TimeGrid, basket2d, basket_call, build_chain, component_call,
                     heston, price, strike_ladder)
from mpquant.errors import DimensionMismatch, DomainError
from mpquant.pricing import format_ladder, price_component_payoff, price_vector_payoff


@pytest.fixture(scope="module")
def chain():
    return build_chain(basket2d(0.04, 0.3, 0.4, 0.5), TimeGrid(1.0, 5), 8)


def test_zero_strike_call_is_discounted_mean(chain):
    p = basket_call(0.0, 0.04, 1.0)
    expected = math.exp(-0.04) * 100.0 * (1 + 0.04 * 0.2) ** 5
    assert price(chain, p) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("k", [80.0, 100.0, 120.0])
def test_put_call_parity(chain, k):
    c = price(chain, basket_call(k, 0.04, 1.0))
    p = price(chain, basket_call(k, 0.04, 1.0, option="put"))
    mean = chain.weights[-1] @ (chain.grids[-1].points @ np.array([0.5, 0.5]))
    assert c - p == pytest.approx(math.exp(-0.04) * (mean - k), abs=1e-10)


def test_component_routes_agree(chain):
    for comp in range(2):
        p = component_call(100.0, 0.04, 1.0, component=comp)
        a = price_component_payoff(chain, p)
        full = Payoff("vector_function", 100.0, 0.04, 1.0,
                      weights=tuple(1.0 if l == comp else 0.0 for l in range(2)))
        assert a == pytest.approx(price_vector_payoff(chain, full), abs=1e-9)


def test_payoff_validation():
    with pytest.raises(DomainError):
        Payoff("bad", 100.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        Payoff("vector_function", 100.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        basket_call(-1.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        basket_call(1.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        basket_call(1.0, 0.0, 1.0, option="straddle")
    with pytest.raises(DimensionMismatch):
        basket_call(1.0, 0.0, 1.0, weights=(1.0, 0.0, 0.0))(np.ones((2, 2)))


def test_ladder(chain):
    rows = strike_ladder(chain, basket_call(0.0, 0.04, 1.0), calls=[90, 100], puts=[100],
                         benchmarks={("call", 100.0): 13.9197})
    assert [(r.option, r.strike) for r in rows] == [("call", 90.0), ("call", 100.0), ("put", 100.0)]
    assert rows[0].relative_error is None
    assert rows[1].relative_error == pytest.approx(abs(rows[1].price - 13.9197) / 13.9197)
    text = format_ladder(rows)
    assert len(text.splitlines()) == 4 and "13.9197" in text


def test_heston_call_monotone_in_strike():
    ch = build_chain(heston(0.04, 2.3924, 0.0929, 0.6903, -0.82, v0=0.0719), TimeGrid(1.0, 5),
                     (8, 4))
    prices = [price(ch, component_call(k, 0.04, 1.0)) for k in (80, 90, 100, 110)]
    assert all(a > b for a, b in zip(prices, prices[1:]))
