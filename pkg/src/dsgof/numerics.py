"""Special functions and quadrature rules on the unit interval.

The special functions are thin, domain-checked wrappers around
``scipy.special``.  All quadrature rules are normalized to (0, 1) so that
``rule.integrate(f)`` approximates ``int_0^1 f(u) du``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "QuadratureRule",
    "log_gamma",
    "reg_incomplete_beta",
    "reg_incomplete_gamma",
    "normal_cdf",
    "beta_quantile",
    "gamma_quantile",
    "normal_quantile",
    "gauss_legendre",
    "clustered_rule",
]

MAX_NODES = 512


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on (0, 1).

    ``upper`` holds ``1 - nodes`` computed without cancellation, which
    matters for quantile evaluation next to the right endpoint.
    """

    nodes: np.ndarray
    weights: np.ndarray
    upper: np.ndarray

    def __len__(self) -> int:
        return self.nodes.size

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def _check_positive(name: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError(f"{name} must be > 0")
    return x


def _check_prob(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1) | np.isnan(p)):
        raise DomainError("probability must lie in [0, 1]")
    return p


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def log_gamma(x):
    """ln Gamma(x) for x > 0."""
    x = _check_positive("x", x)
    return _out(special.gammaln(x))


def reg_incomplete_beta(x, a, b):
    """Regularized incomplete beta I_x(a, b), the Beta(a, b) CDF."""
    x = _check_prob(x)
    a = _check_positive("a", a)
    b = _check_positive("b", b)
    return _out(special.betainc(a, b, x))


def reg_incomplete_gamma(x, shape):
    """Regularized lower incomplete gamma P(shape, x)."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x >= 0)):
        raise DomainError("x must be >= 0")
    shape = _check_positive("shape", shape)
    return _out(special.gammainc(shape, x))


def normal_cdf(x, mu=0.0, sigma=1.0):
    sigma = _check_positive("sigma", sigma)
    return _out(special.ndtr((np.asarray(x, dtype=float) - mu) / sigma))


def beta_quantile(p, a, b, upper=None):
    """Inverse of I_x(a, b).

    If ``upper`` (= 1 - p, computed accurately by the caller) is given, the
    right tail is inverted through the complementary function.
    """
    p = _check_prob(p)
    a = _check_positive("a", a)
    b = _check_positive("b", b)
    if upper is None:
        return _out(special.betaincinv(a, b, p))
    upper = np.asarray(upper, dtype=float)
    lo = p <= 0.5
    out = np.where(
        lo,
        special.betaincinv(a, b, np.where(lo, p, 0.5)),
        special.betainccinv(a, b, np.where(lo, 0.5, upper)),
    )
    return _out(out)


def gamma_quantile(p, shape, scale=1.0, upper=None):
    """Inverse Gamma(shape, scale) CDF; p = 1 gives inf."""
    p = _check_prob(p)
    shape = _check_positive("shape", shape)
    scale = _check_positive("scale", scale)
    if upper is None:
        return _out(scale * special.gammaincinv(shape, p))
    upper = np.asarray(upper, dtype=float)
    lo = p <= 0.5
    out = np.where(
        lo,
        special.gammaincinv(shape, np.where(lo, p, 0.5)),
        special.gammainccinv(shape, np.where(lo, 0.5, upper)),
    )
    return _out(scale * out)


def normal_quantile(p, mu=0.0, sigma=1.0, upper=None):
    """Inverse normal CDF; p = 0 and p = 1 give -inf and inf."""
    p = _check_prob(p)
    sigma = _check_positive("sigma", sigma)
    if upper is None:
        z = special.ndtri(p)
    else:
        upper = np.asarray(upper, dtype=float)
        lo = p <= 0.5
        z = np.where(lo, special.ndtri(np.where(lo, p, 0.5)), -special.ndtri(np.where(lo, 0.5, upper)))
    return _out(mu + sigma * z)


@lru_cache(maxsize=32)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on (0, 1); exact for degree <= 2n - 1."""
    if not (isinstance(n, (int, np.integer)) and 1 <= n <= MAX_NODES):
        raise ValueError(f"number of nodes must be an integer in [1, {MAX_NODES}], got {n!r}")
    x, w = _leggauss(int(n))
    nodes = 0.5 * (x + 1.0)
    upper = 0.5 * (1.0 - x)
    rule = QuadratureRule(nodes, 0.5 * w, upper)
    for arr in (rule.nodes, rule.weights, rule.upper):
        arr.setflags(write=False)
    return rule


# Beta(q, q) CDF used as the endpoint-clustering substitution.
_CLUSTER_ORDER = 4


@lru_cache(maxsize=32)
def clustered_rule(n: int = 64) -> QuadratureRule:
    """Gauss-Legendre rule pushed through v = I_t(4, 4).

    Posterior-quantile integrands such as ``Leg_j(G(Q(v)))`` behave like
    ``v**a`` with small ``a > 0`` at the endpoints; the substitution flattens
    those power singularities so 64 nodes reach ~1e-11.
    """
    base = gauss_legendre(n)
    q = _CLUSTER_ORDER
    t = base.nodes
    nodes = special.betainc(q, q, t)
    # symmetric map, so 1 - I_t(q, q) = I_{1-t}(q, q)
    upper = special.betainc(q, q, base.upper)
    jac = np.exp((q - 1) * (np.log(t) + np.log(base.upper)) - special.betaln(q, q))
    weights = base.weights * jac
    weights = weights / weights.sum()
    rule = QuadratureRule(nodes, weights, upper)
    for arr in (rule.nodes, rule.weights, rule.upper):
        arr.setflags(write=False)
    return rule
