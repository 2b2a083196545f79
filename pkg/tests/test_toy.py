import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerwlab.toy import DivergenceError, ToyParams, brownian_martingale_mean, dressed_drift, \
    one_step_identity, toy_martingale_check, toy_martingale_means, toy_partition, \
    toy_partition_bruteforce


def test_closed_form_frozen_at_quarter():
    Z, L, var = toy_partition(ToyParams(0.25))
    assert (Z, L, var) == pytest.approx((2.0, 2.0, 1.0), rel=1e-14)


@given(st.floats(0.01, 0.45), st.floats(-1.0, 1.0))
def test_closed_form_matches_bruteforce(mu, gamma):
    p = ToyParams(mu, gamma)
    if p.w >= 0.9:
        return
    Z, L, var = toy_partition(p)
    bZ, bL, bvar, tail = toy_partition_bruteforce(p, 200)
    # truncation tail plus rounding from summing ~10^4 terms
    assert bZ == pytest.approx(Z, abs=tail + 1e-11 * Z)
    assert bL == pytest.approx(L, rel=1e-8)
    assert bvar == pytest.approx(var, rel=1e-8)


def test_bruteforce_explicit_and_grouped_sums_agree():
    p = ToyParams(0.2, 0.3)
    a = toy_partition_bruteforce(p, 12)
    b = toy_partition_bruteforce(p, 13)
    # the only extra terms are length 13
    assert b[0] - a[0] == pytest.approx(p.w ** 13, rel=1e-10)


@pytest.mark.parametrize("mu,gamma", [(0.5, 0.0), (0.5, 0.1), (0.6, 0.0)])
def test_divergence(mu, gamma):
    with pytest.raises(DivergenceError):
        toy_partition(ToyParams(mu, gamma))
    with pytest.raises(DivergenceError):
        toy_partition_bruteforce(ToyParams(mu, gamma), 3)


def test_params_validation_and_critical():
    with pytest.raises(ValueError):
        ToyParams(0.0)
    assert ToyParams(0.5).critical
    assert not ToyParams(0.4).critical


@given(st.floats(-3, 3))
def test_one_step_identity(gamma):
    assert one_step_identity(gamma) == pytest.approx(1.0, rel=1e-14)


def test_zero_gamma_martingale_is_identically_one():
    for r in toy_martingale_means(0.0, [1, 5, 20], 1000, seed=1):
        assert r.mean == 1.0 and r.se == 0.0 and r.z == 0.0


def test_martingale_mean_is_one():
    err, zmax = toy_martingale_check(0.1, (1, 10, 100), 20_000, seed=3)
    assert zmax < 4.5
    assert err < 0.05


def test_dressed_drift():
    gamma, n = 0.2, 10
    m, se = dressed_drift(gamma, n, 50_000, seed=2)
    assert abs(m - n * np.tanh(gamma)) < 4.5 * se


def test_brownian_martingale():
    r = brownian_martingale_mean(0.8, 1.0, 50, 20_000, seed=4)
    assert abs(r.z) < 4.5


def test_martingale_reproducible():
    a = toy_martingale_means(0.1, [7], 500, seed=9, stream=2)
    b = toy_martingale_means(0.1, [7], 500, seed=9, stream=2)
    assert a == b
