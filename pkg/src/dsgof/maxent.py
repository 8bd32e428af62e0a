"""Maximum-entropy representation of a fitted DS prior.

Finds ``d(u) = exp(c0 + sum_{j in J} c_j Leg_j(u))`` whose Legendre moments
equal the retained L2 coefficients.  The solve runs in u-space on the convex
dual ``psi(c) = log int_0^1 exp(sum c_j Leg_j) du - sum c_j LP[j]``, and c0
is the negative log-partition.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import numerics
from .ds_core import DSModel, Representation
from .lp_basis import leg_matrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_NODES = 128


@dataclass(frozen=True)
class MaxEntSolution:
    c0: float
    indices: tuple
    c: np.ndarray
    residual: float
    converged: bool
    iterations: int = 0

    def coefficient_vector(self, m: int) -> np.ndarray:
        """c_1..c_m with zeros outside the retained set."""
        out = np.zeros(m)
        for j, v in zip(self.indices, self.c):
            out[j - 1] = v
        return out

    def to_dict(self) -> dict:
        return {
            "c0": self.c0,
            "indices": list(self.indices),
            "c": self.c.tolist(),
            "residual": self.residual,
            "converged": self.converged,
            "iterations": self.iterations,
        }


def _moments(c, idx, L, w):
    """log-partition, exp-family mean and covariance of Leg_J under exp(c . Leg_J)."""
    eta = c @ L[idx]
    top = eta.max()
    p = w * np.exp(eta - top)
    Z = p.sum()
    logZ = top + np.log(Z)
    p = p / Z
    F = L[idx]
    mean = F @ p
    cov = (F * p) @ F.T - np.outer(mean, mean)
    return logZ, mean, cov


def moment_residual(c0: float, indices, c, targets, n: int) -> float:
    """max_j |int Leg_j exp(c0 + c . Leg_J) du - LP[j]| at n Gauss-Legendre nodes."""
    rule = numerics.gauss_legendre(n)
    m = max(indices) if indices else 0
    L = leg_matrix(m, rule.nodes)
    idx = [j - 1 for j in indices]
    dens = np.exp(c0 + np.asarray(c) @ L[idx]) if idx else np.full(rule.nodes.shape, np.exp(c0))
    mass = float(np.dot(rule.weights, dens))
    if not idx:
        return abs(mass - 1.0)
    mom = L[idx] @ (rule.weights * dens)
    return float(max(np.max(np.abs(mom - np.asarray(targets))), abs(mass - 1.0)))


def to_maxent(model: DSModel, tol: float = DEFAULT_TOL, max_iter: int = 100,
              nodes: int = DEFAULT_NODES) -> MaxEntSolution:
    """Solve the moment equalities for the retained set of ``model``.

    Damped Newton on the dual starting from c = LP, with backtracking on
    the dual objective.  The residual is re-checked at twice the node count.
    """
    indices = tuple(model.retained)
    if not indices:
        return MaxEntSolution(0.0, (), np.zeros(0), 0.0, True, 0)
    targets = np.array([model.coeffs[j - 1] for j in indices])
    rule = numerics.gauss_legendre(nodes)
    L = leg_matrix(max(indices), rule.nodes)
    idx = [j - 1 for j in indices]

    def dual(c):
        logZ, mean, cov = _moments(c, idx, L, rule.weights)
        return logZ - c @ targets, mean - targets, cov

    c = targets.copy()
    f, g, H = dual(c)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= tol * 0.1:
            converged = True
            break
        try:
            step = np.linalg.solve(H + 1e-14 * np.eye(len(idx)), -g)
        except np.linalg.LinAlgError:
            step = -g
        t = 1.0
        while True:
            cn = c + t * step
            fn, gn, Hn = dual(cn)
            if np.isfinite(fn) and fn <= f + 1e-4 * t * float(g @ step):
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            log.warning("max-entropy line search stalled at iteration %d", it)
            break
        c, f, g, H = cn, fn, gn, Hn
    else:
        converged = np.max(np.abs(g)) <= tol * 0.1

    logZ, _, _ = _moments(c, idx, L, rule.weights)
    c0 = -float(logZ)
    residual = moment_residual(c0, indices, c, targets, 2 * nodes)
    converged = bool(converged and residual <= tol)
    if not converged:
        log.warning("max-entropy solve did not reach tol=%g (residual %.3g)", tol, residual)
    return MaxEntSolution(c0, indices, c, residual, converged, it)


def as_maxent_model(model: DSModel, solution: MaxEntSolution) -> DSModel:
    """``model`` switched to the exp-form U-function of ``solution``."""
    return replace(
        model,
        representation=Representation.MAXENT,
        maxent_c0=solution.c0,
        maxent_coeffs=solution.coefficient_vector(model.m_max),
        warnings=(),
    )
