import math

import numpy as np
import pytest
from scipy import stats

from mpquant import TimeGrid, basket2d, black_scholes, build_chain, optimize
from mpquant.errors import DomainError
from mpquant.oracles import (bs_call_delta, bs_call_price, central_difference, gbm_exact_mean,
                             mc_distortion, mc_lambda_row, mc_transition_row, standard_normals,
                             stream)
from mpquant.quantizer import MixtureSource, distortion
from mpquant.verify import family_z_bound, mc_recursive_error

BASKET = basket2d(0.04, 0.3, 0.4, 0.5)


def test_streams_are_reproducible_and_distinct():
    a = standard_normals(stream(5, 1, 2), 1000)
    b = standard_normals(stream(5, 1, 2), 1000)
    c = standard_normals(stream(5, 1, 3), 1000)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    big = standard_normals(stream(1), 200_000)
    assert abs(big.mean()) < 0.01 and abs(big.std() - 1) < 0.01
    assert np.all(np.isfinite(big))


def test_transition_row_is_deterministic():
    ch = build_chain(BASKET, TimeGrid(1.0, 3), 4)
    r1 = mc_transition_row(BASKET, ch.time_grid, 1, ch.grids[1].points[2], ch.grids[2],
                           samples=20_000, seed=9, cell=2)
    r2 = mc_transition_row(BASKET, ch.time_grid, 1, ch.grids[1].points[2], ch.grids[2],
                           samples=20_000, seed=9, cell=2, batch=7_000)
    assert [e.value for e in r1] == [e.value for e in r2]
    assert sum(e.value for e in r1) == pytest.approx(1.0)
    lam = mc_lambda_row(BASKET, ch.time_grid, 1, ch.grids[1].points[2], ch.grids[2],
                        samples=20_000, seed=9, cell=2)
    assert lam.shape == (2, ch.grids[2].size)


def test_min_samples():
    ch = build_chain(BASKET, TimeGrid(1.0, 2), 3)
    with pytest.raises(DomainError):
        mc_transition_row(BASKET, ch.time_grid, 0, ch.grids[0].points[0], ch.grids[1], samples=10)


def test_mc_distortion_agrees():
    src = MixtureSource([0.0, 3.0], [1.0, 0.5], [0.6, 0.4])
    q = optimize(src, 5)
    est = mc_distortion(src, q.points, samples=400_000, seed=4)
    assert est.zscore(distortion(src, q)) < 4.0


def test_black_scholes_reference():
    # independent evaluation through scipy
    s, k, r, sig, t = 100.0, 100.0, 0.1, 0.3, 0.5
    d1 = (math.log(s / k) + (r + sig * sig / 2) * t) / (sig * math.sqrt(t))
    ref = s * stats.norm.cdf(d1) - k * math.exp(-r * t) * stats.norm.cdf(d1 - sig * math.sqrt(t))
    assert bs_call_price(s, r, sig, k, t) == pytest.approx(ref, rel=1e-14)
    assert bs_call_delta(s, r, sig, k, t) == pytest.approx(stats.norm.cdf(d1), rel=1e-14)
    fd = central_difference(lambda x: bs_call_price(x[0], r, sig, k, t), [s], h=1e-4)
    assert float(np.ravel(fd)[0]) == pytest.approx(bs_call_delta(s, r, sig, k, t), rel=1e-7)
    assert gbm_exact_mean(100.0, 0.2, 0.5) == pytest.approx(100 * math.exp(0.1))
    with pytest.raises(DomainError):
        bs_call_price(100.0, 0.1, 0.0, 100.0, 1.0)


def test_family_bound():
    assert family_z_bound(1, alpha=0.05) == pytest.approx(1.959964, abs=1e-6)
    assert family_z_bound(1000) > family_z_bound(10)


def test_recursive_error_shrinks_with_levels():
    m = black_scholes(0.1, 0.2)
    g = TimeGrid(1.0, 5)
    e5 = mc_recursive_error(build_chain(m, g, 5), samples=20_000, seed=1)
    e20 = mc_recursive_error(build_chain(m, g, 20), samples=20_000, seed=1)
    assert e20[0] < e5[0] and e5[1] > 0
