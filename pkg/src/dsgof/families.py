"""Conjugate families: likelihood, prior, marginal, posterior.

Parameterizations follow the usual conjugate tables:

* binomial:    y ~ Bin(n, theta),           theta ~ Beta(alpha, beta)
* poisson:     y ~ Poisson(theta * E),      theta ~ Gamma(shape=alpha, scale=beta)
* normal:      y ~ N(theta, s^2),           theta ~ N(mu, tau^2)
* exponential: y ~ Exp(rate=theta),         theta ~ Gamma(shape=alpha, scale=beta)

For the normal family ``hyper2`` holds the variance tau^2.

Observation-level functions are vectorized over arrays ``y`` and ``size``;
``size`` is n for binomial, s for normal, E for poisson and is ignored for
exponential.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from . import numerics
from .lp_basis import leg_matrix


class Family(str, enum.Enum):
    BINOMIAL = "binomial"
    POISSON = "poisson"
    NORMAL = "normal"
    EXPONENTIAL = "exponential"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        aliases = {
            "binomialbeta": "binomial",
            "poissongamma": "poisson",
            "normalnormal": "normal",
            "gaussian": "normal",
            "exponentialgamma": "exponential",
        }
        key = str(value).lower().replace("_", "").replace("-", "")
        return cls(aliases.get(key, key))


class InvalidObservation(ValueError):
    """Observation inconsistent with its family."""


@dataclass(frozen=True)
class ConjugateSpec:
    family: Family
    hyper1: float
    hyper2: float

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "hyper1", float(self.hyper1))
        object.__setattr__(self, "hyper2", float(self.hyper2))
        if not (math.isfinite(self.hyper1) and math.isfinite(self.hyper2)):
            raise ValueError("hyperparameters must be finite")
        if self.hyper2 <= 0:
            raise ValueError(f"{self.family.value}: second hyperparameter must be > 0")
        if self.family is not Family.NORMAL and self.hyper1 <= 0:
            raise ValueError(f"{self.family.value}: first hyperparameter must be > 0")

    @classmethod
    def normal(cls, mu: float, tau: float) -> "ConjugateSpec":
        """Normal prior from its mean and standard deviation."""
        return cls(Family.NORMAL, mu, tau * tau)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "hyper1": self.hyper1, "hyper2": self.hyper2}

    @classmethod
    def from_dict(cls, d: dict) -> "ConjugateSpec":
        return cls(d["family"], d["hyper1"], d["hyper2"])


@dataclass(frozen=True)
class Observation:
    y: float
    size: Optional[float] = None


@dataclass(frozen=True)
class PosteriorParams:
    """Conjugate posterior.  kind is 'beta' (a, b), 'gamma' (shape, scale)
    or 'normal' (mean, variance)."""

    kind: str
    p1: float
    p2: float


# ---------------------------------------------------------------------------
# per-family kernels


class _Kernel:
    family: Family
    discrete: bool

    # prior -----------------------------------------------------------------
    def cdf(self, spec, theta):
        raise NotImplementedError

    def ppf(self, spec, u, upper=None):
        raise NotImplementedError

    def logpdf(self, spec, theta):
        raise NotImplementedError

    def support(self, spec) -> tuple[float, float]:
        raise NotImplementedError

    def mean(self, spec) -> float:
        raise NotImplementedError

    # observation level -----------------------------------------------------
    def default_size(self, y):
        return np.ones_like(np.asarray(y, dtype=float))

    def validate(self, y, size) -> None:
        raise NotImplementedError

    def post(self, spec, y, size):
        """Posterior parameter arrays (p1, p2)."""
        raise NotImplementedError

    def post_ppf(self, p1, p2, v, upper):
        raise NotImplementedError

    def post_logpdf(self, p1, p2, theta):
        raise NotImplementedError

    def post_cdf(self, p1, p2, theta):
        raise NotImplementedError

    def log_marginal(self, spec, y, size):
        raise NotImplementedError

    def log_lik(self, y, size, theta):
        raise NotImplementedError

    def draw_y(self, theta, size, rng):
        raise NotImplementedError

    def draw_theta(self, spec, k, rng):
        u = rng.random(k)
        return self.ppf(spec, u, 1.0 - u)


class _BinomialBeta(_Kernel):
    family = Family.BINOMIAL
    discrete = True
    kind = "beta"

    def cdf(self, spec, theta):
        return special.betainc(spec.hyper1, spec.hyper2, np.clip(theta, 0.0, 1.0))

    def ppf(self, spec, u, upper=None):
        return numerics.beta_quantile(u, spec.hyper1, spec.hyper2, upper=upper)

    def logpdf(self, spec, theta):
        return stats.beta.logpdf(theta, spec.hyper1, spec.hyper2)

    def support(self, spec):
        return (0.0, 1.0)

    def mean(self, spec):
        return spec.hyper1 / (spec.hyper1 + spec.hyper2)

    def default_size(self, y):
        raise InvalidObservation("binomial observations need a trial count n")

    def validate(self, y, size):
        y = np.asarray(y, dtype=float)
        n = np.asarray(size, dtype=float)
        bad = (n < 0) | (n != np.round(n)) | (y < 0) | (y > n) | (y != np.round(y))
        if np.any(bad):
            i = int(np.argmax(bad))
            raise InvalidObservation(f"row {i}: need integers 0 <= y <= n (got y={y.flat[i]}, n={n.flat[i]})")

    def post(self, spec, y, size):
        return spec.hyper1 + y, spec.hyper2 + size - y

    def post_ppf(self, p1, p2, v, upper):
        return special.betaincinv(p1, p2, v) if upper is None else np.where(
            v <= 0.5,
            special.betaincinv(p1, p2, np.minimum(v, 0.5)),
            special.betainccinv(p1, p2, np.minimum(upper, 0.5)),
        )

    def post_logpdf(self, p1, p2, theta):
        return stats.beta.logpdf(theta, p1, p2)

    def post_cdf(self, p1, p2, theta):
        return special.betainc(p1, p2, np.clip(theta, 0.0, 1.0))

    def log_marginal(self, spec, y, size):
        a, b = spec.hyper1, spec.hyper2
        return (
            special.gammaln(size + 1)
            - special.gammaln(y + 1)
            - special.gammaln(size - y + 1)
            + special.betaln(a + y, b + size - y)
            - special.betaln(a, b)
        )

    def log_lik(self, y, size, theta):
        return stats.binom.logpmf(y, size, theta)

    def draw_y(self, theta, size, rng):
        return rng.binomial(np.asarray(size, dtype=np.int64), np.clip(theta, 0.0, 1.0)).astype(float)


class _GammaPrior(_Kernel):
    kind = "gamma"

    def cdf(self, spec, theta):
        return special.gammainc(spec.hyper1, np.maximum(theta, 0.0) / spec.hyper2)

    def ppf(self, spec, u, upper=None):
        return numerics.gamma_quantile(u, spec.hyper1, spec.hyper2, upper=upper)

    def logpdf(self, spec, theta):
        return stats.gamma.logpdf(theta, spec.hyper1, scale=spec.hyper2)

    def support(self, spec):
        return (0.0, math.inf)

    def mean(self, spec):
        return spec.hyper1 * spec.hyper2

    def post_ppf(self, p1, p2, v, upper):
        if upper is None:
            return p2 * special.gammaincinv(p1, v)
        return p2 * np.where(
            v <= 0.5,
            special.gammaincinv(p1, np.minimum(v, 0.5)),
            special.gammainccinv(p1, np.minimum(upper, 0.5)),
        )

    def post_logpdf(self, p1, p2, theta):
        return stats.gamma.logpdf(theta, p1, scale=p2)

    def post_cdf(self, p1, p2, theta):
        return special.gammainc(p1, np.maximum(theta, 0.0) / p2)


class _PoissonGamma(_GammaPrior):
    family = Family.POISSON
    discrete = True

    def validate(self, y, size):
        y = np.asarray(y, dtype=float)
        e = np.asarray(size, dtype=float)
        bad = (y < 0) | (y != np.round(y)) | ~(e > 0)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise InvalidObservation(f"row {i}: need integer y >= 0 and exposure > 0 (got y={y.flat[i]}, E={e.flat[i]})")

    def post(self, spec, y, size):
        a, b = spec.hyper1, spec.hyper2
        return a + y, b / (1.0 + b * size)

    def log_marginal(self, spec, y, size):
        a, b = spec.hyper1, spec.hyper2
        # negative binomial with p = 1 / (1 + b E)
        log_p = -np.log1p(b * size)
        log_q = np.log(b * size) + log_p
        return special.gammaln(y + a) - special.gammaln(a) - special.gammaln(y + 1) + a * log_p + y * log_q

    def log_lik(self, y, size, theta):
        return stats.poisson.logpmf(y, theta * size)

    def draw_y(self, theta, size, rng):
        return rng.poisson(theta * size).astype(float)


class _ExponentialGamma(_GammaPrior):
    family = Family.EXPONENTIAL
    discrete = False

    def validate(self, y, size):
        y = np.asarray(y, dtype=float)
        bad = ~(y > 0)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise InvalidObservation(f"row {i}: exponential observations must be > 0 (got {y.flat[i]})")

    def post(self, spec, y, size):
        a, b = spec.hyper1, spec.hyper2
        return a + 1.0 + 0.0 * y, b / (1.0 + b * y)

    def log_marginal(self, spec, y, size):
        a, b = spec.hyper1, spec.hyper2
        return np.log(a * b) - (a + 1.0) * np.log1p(b * y)

    def log_lik(self, y, size, theta):
        return np.log(theta) - theta * y

    def draw_y(self, theta, size, rng):
        return rng.exponential(1.0 / np.asarray(theta))


class _NormalNormal(_Kernel):
    family = Family.NORMAL
    discrete = False
    kind = "normal"

    def cdf(self, spec, theta):
        return special.ndtr((np.asarray(theta, dtype=float) - spec.hyper1) / math.sqrt(spec.hyper2))

    def ppf(self, spec, u, upper=None):
        return numerics.normal_quantile(u, spec.hyper1, math.sqrt(spec.hyper2), upper=upper)

    def logpdf(self, spec, theta):
        return stats.norm.logpdf(theta, spec.hyper1, math.sqrt(spec.hyper2))

    def support(self, spec):
        return (-math.inf, math.inf)

    def mean(self, spec):
        return spec.hyper1

    def default_size(self, y):
        raise InvalidObservation("normal observations need a standard error s")

    def validate(self, y, size):
        y = np.asarray(y, dtype=float)
        s = np.asarray(size, dtype=float)
        bad = ~np.isfinite(y) | ~(s > 0)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise InvalidObservation(f"row {i}: need finite y and s > 0 (got y={y.flat[i]}, s={s.flat[i]})")

    def post(self, spec, y, size):
        s2 = np.asarray(size, dtype=float) ** 2
        lam = s2 / (s2 + spec.hyper2)
        return lam * spec.hyper1 + (1.0 - lam) * y, (1.0 - lam) * s2

    def post_ppf(self, p1, p2, v, upper):
        sd = np.sqrt(p2)
        if upper is None:
            return p1 + sd * special.ndtri(v)
        z = np.where(v <= 0.5, special.ndtri(np.minimum(v, 0.5)), -special.ndtri(np.minimum(upper, 0.5)))
        return p1 + sd * z

    def post_logpdf(self, p1, p2, theta):
        return stats.norm.logpdf(theta, p1, np.sqrt(p2))

    def post_cdf(self, p1, p2, theta):
        return special.ndtr((theta - p1) / np.sqrt(p2))

    def log_marginal(self, spec, y, size):
        s2 = np.asarray(size, dtype=float) ** 2
        return stats.norm.logpdf(y, spec.hyper1, np.sqrt(s2 + spec.hyper2))

    def log_lik(self, y, size, theta):
        return stats.norm.logpdf(y, theta, size)

    def draw_y(self, theta, size, rng):
        return theta + np.asarray(size, dtype=float) * rng.standard_normal(np.shape(theta))


_KERNELS = {
    Family.BINOMIAL: _BinomialBeta(),
    Family.POISSON: _PoissonGamma(),
    Family.NORMAL: _NormalNormal(),
    Family.EXPONENTIAL: _ExponentialGamma(),
}


def family_of(spec_or_family) -> _Kernel:
    fam = spec_or_family.family if isinstance(spec_or_family, ConjugateSpec) else Family.parse(spec_or_family)
    return _KERNELS[fam]


def _obs_arrays(spec: ConjugateSpec, obs: Observation):
    kern = family_of(spec)
    y = np.asarray(float(obs.y))
    if obs.size is None:
        size = kern.default_size(y)
    else:
        if spec.family is Family.EXPONENTIAL:
            raise InvalidObservation("exponential observations take no size/exposure field")
        size = np.asarray(float(obs.size))
    kern.validate(y, size)
    return y, size


# ---------------------------------------------------------------------------
# public single-observation API


def marginal_g(spec: ConjugateSpec, obs: Observation) -> float:
    """Conjugate marginal f_G(y): pmf for discrete families, density otherwise."""
    y, size = _obs_arrays(spec, obs)
    return float(np.exp(family_of(spec).log_marginal(spec, y, size)))


def posterior_params(spec: ConjugateSpec, obs: Observation) -> PosteriorParams:
    y, size = _obs_arrays(spec, obs)
    kern = family_of(spec)
    p1, p2 = kern.post(spec, y, size)
    return PosteriorParams(kern.kind, float(p1), float(p2))


def posterior_expect_T(spec: ConjugateSpec, obs: Observation, j: int, rule=None) -> float:
    """E_G[T_j(Theta; G) | y] under the conjugate posterior."""
    if not 1 <= j <= 12:
        raise ValueError("j must lie in [1, 12]")
    y, size = _obs_arrays(spec, obs)
    a, _ = conditional_moments(spec, y[None], size[None], j, rule=rule)
    return float(a[0, j - 1])


def posterior_expect_hT(spec: ConjugateSpec, obs: Observation, h: Callable, j: int = 0, rule=None) -> float:
    """E_G[h(Theta) T_j(Theta; G) | y]; j = 0 means T_0 = 1."""
    y, size = _obs_arrays(spec, obs)
    out = h_moments(spec, y[None], size[None], h, max(j, 0), rule=rule)
    return float(out[0, j])


# ---------------------------------------------------------------------------
# vectorized machinery used by the fitting code


def posterior_theta_nodes(spec: ConjugateSpec, y, size, rule=None) -> np.ndarray:
    """Posterior quantiles Q_i(v_r), shape (k, N)."""
    rule = rule or numerics.clustered_rule(64)
    kern = family_of(spec)
    p1, p2 = kern.post(spec, np.asarray(y, dtype=float), np.asarray(size, dtype=float))
    p1 = np.asarray(p1, dtype=float)[:, None]
    p2 = np.asarray(p2, dtype=float)[:, None]
    return kern.post_ppf(p1, p2, rule.nodes[None, :], rule.upper[None, :])


def posterior_u_nodes(spec: ConjugateSpec, y, size, rule=None) -> np.ndarray:
    """G(Q_i(v_r)): prior-rank of each posterior quadrature node."""
    theta = posterior_theta_nodes(spec, y, size, rule)
    return family_of(spec).cdf(spec, theta)


def conditional_moments(spec: ConjugateSpec, y, size, m: int, rule=None):
    """First and second conditional LP moments under the conjugate posterior.

    Returns ``A`` with ``A[i, j-1] = E_G[T_j | y_i]`` and ``B`` with
    ``B[i, j-1, l-1] = E_G[T_j T_l | y_i]``.
    """
    rule = rule or numerics.clustered_rule(64)
    u = posterior_u_nodes(spec, y, size, rule)
    L = leg_matrix(m, u)  # (m, k, N)
    A = np.einsum("jkr,r->kj", L, rule.weights)
    B = np.einsum("jkr,lkr,r->kjl", L, L, rule.weights)
    return A, B


def h_moments(spec: ConjugateSpec, y, size, h: Callable, m: int, rule=None) -> np.ndarray:
    """``out[i, j] = E_G[h(Theta) T_j(Theta) | y_i]`` for j = 0..m."""
    rule = rule or numerics.clustered_rule(64)
    theta = posterior_theta_nodes(spec, y, size, rule)
    hv = np.asarray(h(theta), dtype=float)
    if not np.all(np.isfinite(hv)):
        raise FloatingPointError("integrand h is not finite on the posterior quadrature nodes")
    u = family_of(spec).cdf(spec, theta)
    L = np.concatenate([np.ones((1,) + u.shape), leg_matrix(m, u)], axis=0)
    return np.einsum("jkr,kr,r->kj", L, hv, rule.weights)
