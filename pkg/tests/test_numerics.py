import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsgof import numerics
from dsgof.numerics import DomainError


@pytest.mark.parametrize("n", [1, 2, 5, 16, 64])
def test_gauss_legendre_exact_for_polynomials(n):
    rule = numerics.gauss_legendre(n)
    rng = np.random.default_rng(n)
    c = rng.standard_normal(2 * n)  # degree 2n - 1
    approx = rule.integrate(lambda x: np.polyval(c, x))
    exact = float(np.sum(c / np.arange(2 * n, 0, -1)))
    assert approx == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_gauss_legendre_rejects_bad_sizes():
    with pytest.raises(ValueError):
        numerics.gauss_legendre(0)
    with pytest.raises(ValueError):
        numerics.gauss_legendre(numerics.MAX_NODES + 1)


def test_rule_upper_is_complement():
    for rule in (numerics.gauss_legendre(32), numerics.clustered_rule(32)):
        assert np.allclose(rule.nodes + rule.upper, 1.0, atol=1e-15)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("a", [0.05, 0.3, 1.7])
def test_clustered_rule_handles_endpoint_power_behaviour(a):
    rule = numerics.clustered_rule(64)
    plain = numerics.gauss_legendre(64)
    exact = 1 / (a + 1)
    assert rule.integrate(lambda v: v**a) == pytest.approx(exact, rel=1e-9)
    assert rule.integrate(lambda v: (1 - v) ** a) == pytest.approx(exact, rel=1e-9)
    assert abs(rule.integrate(lambda v: v**a) - exact) <= abs(plain.integrate(lambda v: v**a) - exact)


@given(
    x=st.floats(0.001, 0.999),
    a=st.floats(0.1, 30),
    b=st.floats(0.1, 30),
)
@settings(max_examples=60, deadline=None)
def test_incomplete_beta_matches_mpmath(x, a, b):
    ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
    assert numerics.reg_incomplete_beta(x, a, b) == pytest.approx(ref, rel=1e-9, abs=1e-300)


@given(x=st.floats(0.0, 50), s=st.floats(0.1, 30))
@settings(max_examples=60, deadline=None)
def test_incomplete_gamma_matches_mpmath(x, s):
    ref = float(mpmath.gammainc(s, 0, x, regularized=True))
    assert numerics.reg_incomplete_gamma(x, s) == pytest.approx(ref, rel=1e-9, abs=1e-300)


@given(p=st.floats(1e-12, 1 - 1e-12), a=st.floats(0.2, 20), b=st.floats(0.2, 20))
@settings(max_examples=80, deadline=None)
def test_beta_quantile_round_trip(p, a, b):
    x = numerics.beta_quantile(p, a, b)
    assert numerics.reg_incomplete_beta(x, a, b) == pytest.approx(p, rel=1e-7, abs=1e-12)


def test_upper_tail_quantiles_keep_precision():
    # 1 - 1e-18 is 1.0 in floating point; the complement form still resolves it
    p = np.array([0.999])
    upper = np.array([1e-18])
    x = numerics.beta_quantile(np.array([1.0]), 2.0, 3.0, upper=upper)
    assert x[0] < 1.0
    assert float(mpmath.betainc(2, 3, x[0], 1, regularized=True)) == pytest.approx(1e-18, rel=1e-6)
    g = numerics.gamma_quantile(np.array([1.0]), 2.0, 1.5, upper=upper)
    assert math.isfinite(g[0])
    assert float(mpmath.gammainc(2, g[0] / 1.5, mpmath.inf, regularized=True)) == pytest.approx(1e-18, rel=1e-6)
    z = numerics.normal_quantile(p, 0.0, 1.0, upper=np.array([0.001]))
    assert z[0] == pytest.approx(3.090232306167813, rel=1e-12)


def test_normal_cdf_and_quantile():
    assert numerics.normal_cdf(1.0, 1.0, 2.0) == 0.5
    assert numerics.normal_quantile(0.975) == pytest.approx(1.959963984540054, rel=1e-14)
    assert numerics.normal_quantile(0.0) == -math.inf


def test_log_gamma():
    assert numerics.log_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-15)


@pytest.mark.parametrize(
    "call",
    [
        lambda: numerics.reg_incomplete_beta(1.5, 1, 1),
        lambda: numerics.reg_incomplete_beta(0.5, 0, 1),
        lambda: numerics.reg_incomplete_gamma(-1.0, 2),
        lambda: numerics.beta_quantile(0.5, -1, 2),
        lambda: numerics.gamma_quantile(float("nan"), 1, 1),
        lambda: numerics.normal_cdf(0.0, 0.0, 0.0),
        lambda: numerics.log_gamma(0.0),
    ],
)
def test_domain_errors(call):
    with pytest.raises(DomainError):
        call()
