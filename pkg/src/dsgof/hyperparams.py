"""Maximum-likelihood starting hyperparameters from the conjugate marginal."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .data import StudyTable
from .families import ConjugateSpec, Family, family_of

log = logging.getLogger(__name__)

# smallest tau^2 used when the normal MLE sits on the tau^2 = 0 boundary,
# relative to the mean squared standard error
TAU2_FLOOR = 1e-8


class NonIdentifiable(ValueError):
    """Panel carries no information about the prior spread."""


@dataclass(frozen=True)
class MLEResult:
    """``spec`` is usable as a prior; ``estimate`` keeps the raw optimum
    (for the normal family tau^2 may be exactly 0 there)."""

    spec: ConjugateSpec
    loglik: float
    converged: bool
    iterations: int
    estimate: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "estimate": list(self.estimate),
        }


def _central_grad(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _maximize_log_params(negll, starts, max_iter=4000):
    """Nelder-Mead on (log h1, log h2) from several starts, then a BFGS polish."""
    best = None
    iters = 0
    for s in starts:
        x0 = np.log(np.asarray(s, dtype=float))
        res = optimize.minimize(
            negll, x0, method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": max_iter, "maxfev": 2 * max_iter},
        )
        iters += res.nit
        if best is None or res.fun < best.fun:
            best = res
    pol = optimize.minimize(
        negll, best.x, method="BFGS", jac=lambda x: _central_grad(negll, x), options={"gtol": 1e-9}
    )
    iters += pol.nit
    x = pol.x if pol.fun <= best.fun else best.x
    grad = _central_grad(negll, x)
    converged = bool(np.all(np.isfinite(x)) and np.linalg.norm(grad) <= 1e-5 * max(1.0, abs(negll(x)) ** 0.5))
    return np.exp(x), -float(negll(x)), converged, iters


def _weights(table: StudyTable):
    y, size, counts, _ = table.collapse()
    return y, size, counts


def mle_beta_binomial(table: StudyTable) -> MLEResult:
    if table.family is not Family.BINOMIAL:
        raise ValueError("beta-binomial MLE needs a binomial table")
    if table.k < 2:
        raise NonIdentifiable("need at least two studies")
    y, n, w = _weights(table)
    pos = n > 0
    if np.all(y[pos] == 0) or np.all(y[pos] == n[pos]):
        raise NonIdentifiable("all counts are 0 (or all equal n); beta-binomial MLE does not exist")
    const = float(np.sum(w * (special.gammaln(n + 1) - special.gammaln(y + 1) - special.gammaln(n - y + 1))))

    def negll(x):
        a, b = np.exp(x)
        if not (np.isfinite(a) and np.isfinite(b)):
            return np.inf
        return -float(np.sum(w * (special.betaln(a + y, b + n - y) - special.betaln(a, b))))

    p = y[pos] / n[pos]
    wp = w[pos]
    m = float(np.average(p, weights=wp))
    v = float(np.average((p - m) ** 2, weights=wp))
    m = min(max(m, 1e-3), 1 - 1e-3)
    conc = m * (1 - m) / v - 1.0 if v > 0 else 50.0
    conc = min(max(conc, 0.5), 1e4)
    starts = [(m * c, (1 - m) * c) for c in (conc, conc / 4.0, conc * 4.0)]
    est, ll, conv, it = _maximize_log_params(negll, starts)
    spec = ConjugateSpec(Family.BINOMIAL, est[0], est[1])
    return MLEResult(spec, ll + const, conv, it, (float(est[0]), float(est[1])))


def _nb_logpmf(y, e, a, b):
    return family_of(Family.POISSON).log_marginal(ConjugateSpec(Family.POISSON, a, b), y, e)


def mle_poisson_gamma(table: StudyTable, zero_truncated: bool = False) -> MLEResult:
    if table.family is not Family.POISSON:
        raise ValueError("poisson-gamma MLE needs a poisson table")
    if table.k < 2:
        raise NonIdentifiable("need at least two counts")
    y, e, w = _weights(table)
    if zero_truncated and np.any(y == 0):
        raise ValueError("zero_truncated=True but the panel contains zero counts")

    def negll(x):
        a, b = np.exp(x)
        if not (np.isfinite(a) and np.isfinite(b) and a > 0 and b > 0):
            return np.inf
        ll = _nb_logpmf(y, e, a, b)
        if zero_truncated:
            # log(1 - p0) with p0 = (1 + bE)^(-a)
            ll = ll - np.log(-np.expm1(-a * np.log1p(b * e)))
        val = -float(np.sum(w * ll))
        return val if np.isfinite(val) else np.inf

    r = y / e
    m = float(np.average(r, weights=w))
    v = float(np.average((r - m) ** 2, weights=w))
    if m <= 0:
        raise NonIdentifiable("all counts are zero")
    scale = max(v / m - 1.0, 0.05)
    if zero_truncated:
        scale = max(scale, 1.0)
    shape = max(m / scale, 1e-3)
    starts = [(shape, scale), (shape * 4.0, scale / 4.0), (shape / 4.0, scale * 4.0)]
    est, ll, conv, it = _maximize_log_params(negll, starts)
    spec = ConjugateSpec(Family.POISSON, est[0], est[1])
    return MLEResult(spec, ll, conv, it, (float(est[0]), float(est[1])))


def mle_exponential_gamma(table: StudyTable) -> MLEResult:
    if table.family is not Family.EXPONENTIAL:
        raise ValueError("exponential-gamma MLE needs an exponential table")
    if table.k < 2:
        raise NonIdentifiable("need at least two observations")
    y, _, w = _weights(table)

    def negll(x):
        a, b = np.exp(x)
        if not (np.isfinite(a) and np.isfinite(b)):
            return np.inf
        return -float(np.sum(w * (np.log(a * b) - (a + 1.0) * np.log1p(b * y))))

    # rates 1/y: gamma moment match on theta ~ 1/y
    r = 1.0 / y
    m = float(np.average(r, weights=w))
    v = float(np.average((r - m) ** 2, weights=w)) or m * m
    shape = max(m * m / v, 0.1) + 1.0
    scale = m / shape
    starts = [(shape, scale), (shape * 3.0, scale / 3.0), (max(shape / 3.0, 0.2), scale * 3.0)]
    est, ll, conv, it = _maximize_log_params(negll, starts)
    spec = ConjugateSpec(Family.EXPONENTIAL, est[0], est[1])
    return MLEResult(spec, ll, conv, it, (float(est[0]), float(est[1])))


def _normal_profile(y, s2, w, tau2):
    v = s2 + tau2
    wt = w / v
    mu = float(np.sum(wt * y) / np.sum(wt))
    ll = -0.5 * float(np.sum(w * (np.log(2 * math.pi * v) + (y - mu) ** 2 / v)))
    return mu, ll


def mle_normal_normal(table: StudyTable) -> MLEResult:
    """Profile likelihood in tau^2 (mu has a closed form for fixed tau^2)."""
    if table.family is not Family.NORMAL:
        raise ValueError("normal-normal MLE needs a normal table")
    if table.k < 2:
        raise NonIdentifiable("need at least two studies")
    y, s, w = _weights(table)
    s2 = s * s

    mu0, _ = _normal_profile(y, s2, w, 0.0)
    # d loglik / d tau^2 at 0 with mu profiled out (envelope theorem)
    slope0 = 0.5 * float(np.sum(w * ((y - mu0) ** 2 / s2**2 - 1.0 / s2)))
    iterations = 0
    if slope0 <= 0:
        tau2 = 0.0
    else:
        spread = float(np.average((y - np.average(y, weights=w)) ** 2, weights=w))
        # DerSimonian-Laird moment estimate centres the search grid
        wt = w / s2
        q = float(np.sum(wt * (y - mu0) ** 2))
        denom = float(np.sum(wt) - np.sum(wt**2) / np.sum(wt))
        dl = max((q - (np.sum(w) - 1.0)) / denom, 0.0) if denom > 0 else 0.0
        center = dl if dl > 0 else max(spread, 1e-12)
        grid = center * np.logspace(-6, 3, 200)
        lls = np.array([_normal_profile(y, s2, w, t)[1] for t in grid])
        i = int(np.argmax(lls))
        lo = math.log(grid[max(i - 1, 0)])
        hi = math.log(grid[min(i + 1, grid.size - 1)])
        res = optimize.minimize_scalar(
            lambda lt: -_normal_profile(y, s2, w, math.exp(lt))[1],
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
        )
        iterations = int(res.nfev)
        tau2 = math.exp(res.x)
        if _normal_profile(y, s2, w, 0.0)[1] >= -res.fun:
            tau2 = 0.0
    mu, ll = _normal_profile(y, s2, w, tau2)
    floor = TAU2_FLOOR * float(np.average(s2, weights=w))
    spec = ConjugateSpec(Family.NORMAL, mu, max(tau2, floor))
    return MLEResult(spec, ll, True, iterations, (mu, tau2))


def fit_hyperparameters(table: StudyTable, zero_truncated: bool = False) -> MLEResult:
    """Default starting prior for ``table``'s family."""
    fam = table.family
    if fam is Family.BINOMIAL:
        return mle_beta_binomial(table)
    if fam is Family.POISSON:
        return mle_poisson_gamma(table, zero_truncated=zero_truncated)
    if fam is Family.NORMAL:
        return mle_normal_normal(table)
    return mle_exponential_gamma(table)
