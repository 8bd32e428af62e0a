"""DS(G, m) priors: Type-II method-of-moments fit, BIC smoothing,
U-function diagnostics and closed-form posterior formulas.

A fitted model multiplies the conjugate prior g by a correction
``d(u) = 1 + sum_j LP[j] Leg_j(u)`` evaluated at ``u = G(theta)``
(or ``exp(c0 + sum_j c_j Leg_j(u))`` in the max-entropy representation).
Posterior quantities are conjugate answers times a correction factor, so
every expectation reduces to conditional moments ``E_G[T_j | y]`` and
``E_G[h T_j | y]`` under the conjugate posterior.
"""
from __future__ import annotations

import contextlib
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import numerics
from .data import StudyTable
from .families import (
    ConjugateSpec,
    Observation,
    _obs_arrays,
    conditional_moments,
    family_of,
    posterior_theta_nodes,
)
from .lp_basis import MAX_DEGREE, leg_matrix

log = logging.getLogger(__name__)

DEFAULT_M_MAX = 8
DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_GRID = 250
MAXENT_WARN_LEVEL = -0.05


@contextlib.contextmanager
def quiet_fits():
    """Silence per-fit warnings while many replicate fits run."""
    level = log.level
    log.setLevel(logging.ERROR)
    try:
        yield
    finally:
        log.setLevel(level)


class DegenerateModel(ArithmeticError):
    """Correction factor 1 + sum LP[j] E[T_j | y] is not positive."""


class Representation(str, enum.Enum):
    L2 = "L2"
    MAXENT = "MaxEnt"


@dataclass(frozen=True)
class DSModel:
    spec: ConjugateSpec
    coeffs: np.ndarray
    m_selected: int = 0
    bic_trace: tuple = ()
    iterations: int = 0
    converged: bool = True
    k: int = 0
    raw_coeffs: Optional[np.ndarray] = None
    representation: Representation = Representation.L2
    maxent_c0: float = 0.0
    maxent_coeffs: Optional[np.ndarray] = None
    eps: float = DEFAULT_EPS
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size > MAX_DEGREE:
            raise ValueError(f"at most {MAX_DEGREE} coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.raw_coeffs is not None:
            r = np.array(self.raw_coeffs, dtype=float).reshape(-1)
            r.setflags(write=False)
            object.__setattr__(self, "raw_coeffs", r)
        if self.maxent_coeffs is not None:
            mc = np.array(self.maxent_coeffs, dtype=float).reshape(-1)
            mc.setflags(write=False)
            object.__setattr__(self, "maxent_coeffs", mc)
        object.__setattr__(self, "representation", Representation(self.representation))

    @classmethod
    def null(cls, spec: ConjugateSpec, m_max: int = DEFAULT_M_MAX) -> "DSModel":
        """DS(G, 0): the conjugate prior itself."""
        return cls(spec, np.zeros(m_max))

    @property
    def m_max(self) -> int:
        return self.coeffs.size

    @property
    def retained(self) -> list[int]:
        """1-based indices of the non-zero coefficients."""
        return [int(j) + 1 for j in np.flatnonzero(self.coeffs)]

    @property
    def is_null(self) -> bool:
        if self.representation is Representation.MAXENT:
            return not np.any(self.maxent_coeffs) and self.maxent_c0 == 0.0
        return not np.any(self.coeffs)

    def d(self, u) -> np.ndarray:
        """U-function (density ratio) at prior ranks u."""
        u = np.asarray(u, dtype=float)
        if self.representation is Representation.MAXENT:
            c = self.maxent_coeffs
            return np.exp(self.maxent_c0 + np.tensordot(c, leg_matrix(c.size, u), axes=1))
        if self.m_max == 0:
            return np.ones_like(u)
        return 1.0 + np.tensordot(self.coeffs, leg_matrix(self.m_max, u), axes=1)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "coeffs": self.coeffs.tolist(),
            "raw_coeffs": None if self.raw_coeffs is None else self.raw_coeffs.tolist(),
            "m_selected": self.m_selected,
            "bic_trace": [list(t) for t in self.bic_trace],
            "iterations": self.iterations,
            "converged": self.converged,
            "k": self.k,
            "eps": self.eps,
            "representation": self.representation.value,
            "maxent_c0": self.maxent_c0,
            "maxent_coeffs": None if self.maxent_coeffs is None else self.maxent_coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DSModel":
        return cls(
            spec=ConjugateSpec.from_dict(d["spec"]),
            coeffs=np.array(d["coeffs"], dtype=float),
            m_selected=int(d.get("m_selected", 0)),
            bic_trace=tuple(tuple(t) for t in d.get("bic_trace", ())),
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", True)),
            k=int(d.get("k", 0)),
            raw_coeffs=d.get("raw_coeffs"),
            representation=d.get("representation", "L2"),
            maxent_c0=float(d.get("maxent_c0", 0.0)),
            maxent_coeffs=d.get("maxent_coeffs"),
            eps=float(d.get("eps", DEFAULT_EPS)),
        )


@dataclass(frozen=True)
class UFunction:
    grid: np.ndarray
    values: np.ndarray
    model: DSModel = field(repr=False, compare=False, default=None)

    def integral(self, n: int = 64) -> float:
        """int_0^1 d(u) du by Gauss-Legendre on the underlying model."""
        rule = numerics.gauss_legendre(n)
        return float(np.dot(rule.weights, self.model.d(rule.nodes)))

    @property
    def min(self) -> float:
        return float(self.values.min())


# ---------------------------------------------------------------------------
# smoothing


def bic_select(raw_coeffs, k: int):
    """Keep the magnitude-sorted prefix of coefficients maximizing
    ``BIC(m) = sum_{j<=m} LP_(j)^2 - m log(k) / k``.

    Returns ``(smoothed, trace, m_star)``; ``trace`` lists ``(m, BIC(m))``
    for m = 0..len(raw).
    """
    raw = np.asarray(raw_coeffs, dtype=float).reshape(-1)
    if not np.all(np.isfinite(raw)):
        raise ValueError("coefficients must be finite")
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.argsort(-np.abs(raw), kind="stable")
    penalty = math.log(k) / k
    cum = np.concatenate([[0.0], np.cumsum(raw[order] ** 2)])
    ms = np.arange(raw.size + 1)
    bic = cum - ms * penalty
    m_star = int(np.argmax(bic))  # first maximizer, so ties favour the smaller model
    out = np.zeros_like(raw)
    keep = order[:m_star]
    out[keep] = raw[keep]
    trace = tuple((int(m), float(b)) for m, b in zip(ms, bic))
    return out, trace, m_star


# ---------------------------------------------------------------------------
# fitting


def _lp_expectations(coeffs, A, B):
    """E_LP[T_j | y_i] for all i, j from conjugate moments (the h = T_j case of the weighted moments)."""
    denom = 1.0 + A @ coeffs
    num = A + B @ coeffs
    return num / denom[:, None], denom


def fit_mom2(
    table: StudyTable,
    spec: ConjugateSpec,
    m_max: int = DEFAULT_M_MAX,
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
    smooth: bool = True,
    rule=None,
) -> DSModel:
    """Type-II method of moments followed by BIC smoothing.

    Starting from LP = 0, repeatedly replace each LP[j] by the average over
    studies of E_LP[T_j(Theta_i) | y_i] until the squared change is <= eps.
    """
    if table.family is not spec.family:
        raise ValueError(f"table family {table.family.value} does not match prior {spec.family.value}")
    if not 1 <= m_max <= MAX_DEGREE:
        raise ValueError(f"m_max must lie in [1, {MAX_DEGREE}]")
    if not eps > 0:
        raise ValueError("eps must be > 0")
    y, size, counts, _ = table.collapse()
    k = table.k
    A, B = conditional_moments(spec, y, size, m_max, rule=rule)
    w = counts / k

    lp = np.zeros(m_max)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        E, denom = _lp_expectations(lp, A, B)
        if np.any(denom <= 0):
            log.warning("MOM-II: non-positive correction factor at iteration %d; stopping", it)
            break
        new = w @ E
        diff = float(np.sum((new - lp) ** 2))
        lp = new
        if diff <= eps:
            converged = True
            break
    if not converged:
        log.warning("MOM-II did not converge in %d iterations", it)

    if smooth:
        coeffs, trace, m_star = bic_select(lp, k)
    else:
        coeffs, trace, m_star = lp.copy(), (), int(np.count_nonzero(lp))
    model = DSModel(
        spec=spec, coeffs=coeffs, m_selected=m_star, bic_trace=trace, iterations=it,
        converged=converged, k=k, raw_coeffs=lp, eps=eps,
    )
    umin = u_function(model).min
    if umin < MAXENT_WARN_LEVEL:
        msg = f"U-function dips to {umin:.3f} < {MAXENT_WARN_LEVEL}; max-entropy representation recommended"
        log.warning(msg)
        model = replace(model, warnings=(msg,))
    return model


# ---------------------------------------------------------------------------
# diagnostics


def u_function(model: DSModel, grid_size: int = DEFAULT_GRID) -> UFunction:
    grid = np.linspace(0.0, 1.0, grid_size)
    return UFunction(grid, model.d(grid), model)


def qlp(model: DSModel) -> float:
    """Sum of squared LP coefficients."""
    return float(np.sum(model.coeffs**2))


def kl_divergence(model: DSModel, n: int = 256) -> float:
    """KL(Pi || G) = int_0^1 d log d du for a positive U-function."""
    rule = numerics.gauss_legendre(n)
    d = model.d(rule.nodes)
    if np.any(d <= 0):
        raise DegenerateModel("U-function is not positive; KL undefined")
    return float(np.dot(rule.weights, d * np.log(d)))


def clip_constant(model: DSModel, n: int = 256) -> float:
    """int_0^1 max(d, 0) du (1 when the U-function is non-negative)."""
    rule = numerics.gauss_legendre(n)
    return float(np.dot(rule.weights, np.maximum(model.d(rule.nodes), 0.0)))


def prior_density(model: DSModel, theta, clipped: bool = False):
    """g(theta) d(G(theta)).  ``clipped`` zeroes negative parts and renormalizes."""
    kern = family_of(model.spec)
    theta = np.asarray(theta, dtype=float)
    d = model.d(kern.cdf(model.spec, theta))
    if clipped:
        d = np.maximum(d, 0.0) / clip_constant(model)
    out = np.exp(kern.logpdf(model.spec, theta)) * d
    return float(out) if out.ndim == 0 else out


def prior_grid(model: DSModel, grid_size: int = DEFAULT_GRID, clipped: bool = True):
    """(theta, density, parametric g) on a grid evenly spaced in G-rank."""
    u = (np.arange(grid_size) + 0.5) / grid_size
    kern = family_of(model.spec)
    theta = kern.ppf(model.spec, u, 1.0 - u)
    return theta, prior_density(model, theta, clipped=clipped), np.exp(kern.logpdf(model.spec, theta))


def prior_mean(model: DSModel, n: int = 128) -> float:
    """Mean of the (clipped) DS prior, integrating in G-rank space."""
    kern = family_of(model.spec)
    if model.is_null:
        return float(kern.mean(model.spec))
    rule = numerics.clustered_rule(n)
    theta = kern.ppf(model.spec, rule.nodes, rule.upper)
    d = np.maximum(model.d(rule.nodes), 0.0)
    return float(np.dot(rule.weights, theta * d) / np.dot(rule.weights, d))


# ---------------------------------------------------------------------------
# closed-form posterior quantities


def _posterior_mean_g(spec, y, size):
    kern = family_of(spec)
    p1, p2 = kern.post(spec, y, size)
    if kern.kind == "beta":
        return p1 / (p1 + p2)
    if kern.kind == "gamma":
        return p1 * p2
    return p1


def _weight_moments(model: DSModel, y, size, h: Optional[Callable], rule=None):
    """E_G[d(G) | y] and (optionally) E_G[h d(G) | y] for each row.

    For the L2 representation these are the exact linear
    combinations ``1 + sum LP E[T_j|y]`` and ``E[h|y] + sum LP E[h T_j|y]``.
    """
    rule = rule or numerics.clustered_rule(64)
    theta = posterior_theta_nodes(model.spec, y, size, rule)
    kern = family_of(model.spec)
    u = kern.cdf(model.spec, theta)
    if model.representation is Representation.L2:
        corr = model.d(u) - 1.0  # sum_j LP[j] T_j
        denom = 1.0 + corr @ rule.weights
    else:
        corr = None
        dvals = model.d(u)
        denom = dvals @ rule.weights
    if h is None:
        return denom, None
    if h == "identity":
        if model.representation is Representation.L2:
            num = _posterior_mean_g(model.spec, y, size) + (theta * corr) @ rule.weights
        else:
            num = (theta * dvals) @ rule.weights
        return denom, num
    hv = np.asarray(h(theta), dtype=float)
    if not np.all(np.isfinite(hv)):
        raise FloatingPointError("integrand h is not finite on the posterior quadrature nodes")
    if model.representation is Representation.L2:
        num = (hv * (1.0 + corr)) @ rule.weights
    else:
        num = (hv * dvals) @ rule.weights
    return denom, num


def _check_denom(denom):
    if np.any(~(denom > 0)):
        raise DegenerateModel("1 + sum LP[j] E_G[T_j | y] <= 0; the L2 model is degenerate for this observation")


def marginal_lp(model: DSModel, obs: Observation, rule=None) -> float:
    """f_G(y) (1 + sum_j LP[j] E_G[T_j | y])."""
    y, size = _obs_arrays(model.spec, obs)
    return float(marginal_lp_array(model, y[None], size[None], rule)[0])


def marginal_lp_array(model: DSModel, y, size, rule=None, strict: bool = True) -> np.ndarray:
    """Vectorized marginal.  ``strict=False`` returns non-positive values
    instead of raising, for total-probability diagnostics."""
    kern = family_of(model.spec)
    fg = np.exp(kern.log_marginal(model.spec, np.asarray(y, float), np.asarray(size, float)))
    if model.is_null:
        return fg
    denom, _ = _weight_moments(model, y, size, None, rule)
    if strict:
        _check_denom(denom)
    return fg * denom


def posterior_lp_density(model: DSModel, obs: Observation, theta, rule=None):
    """pi_G(theta | y) d(G(theta)) / (1 + sum_j LP[j] E_G[T_j | y])."""
    y, size = _obs_arrays(model.spec, obs)
    kern = family_of(model.spec)
    p1, p2 = kern.post(model.spec, y, size)
    theta = np.asarray(theta, dtype=float)
    base = np.exp(kern.post_logpdf(p1, p2, theta))
    if model.is_null:
        return float(base) if base.ndim == 0 else base
    denom, _ = _weight_moments(model, y[None], size[None], None, rule)
    _check_denom(denom)
    out = base * model.d(kern.cdf(model.spec, theta)) / denom[0]
    return float(out) if out.ndim == 0 else out


def elastic_bayes(model: DSModel, obs: Observation, h: Optional[Callable] = None, rule=None) -> float:
    """Posterior mean of h(Theta) under the DS prior (h = identity by default).

    (E_G[h|y] + sum_j LP[j] E_G[h T_j|y]) / (1 + sum_j LP[j] E_G[T_j|y]).
    """
    y, size = _obs_arrays(model.spec, obs)
    return float(elastic_bayes_array(model, y[None], size[None], h, rule)[0])


def elastic_bayes_array(model: DSModel, y, size, h: Optional[Callable] = None, rule=None) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    size = np.asarray(size, dtype=float)
    if h is None and model.is_null:
        return _posterior_mean_g(model.spec, y, size) + 0.0 * y
    denom, num = _weight_moments(model, y, size, "identity" if h is None else h, rule)
    _check_denom(denom)
    return num / denom


def posterior_expect_T_lp(model: DSModel, table: StudyTable, rule=None) -> np.ndarray:
    """k^-1 sum_i E_LP[T_j(Theta_i) | y_i], j = 1..m_max (the ghost estimate)."""
    y, size, counts, _ = table.collapse()
    A, B = conditional_moments(model.spec, y, size, model.m_max, rule=rule)
    E, denom = _lp_expectations(model.coeffs, A, B)
    _check_denom(denom)
    return (counts / counts.sum()) @ E
