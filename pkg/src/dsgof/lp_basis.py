"""Shifted orthonormal Legendre polynomials and LP rank-polynomials.

``Leg_j`` is orthonormal on Uniform(0, 1); ``T_j(theta; G) = Leg_j(G(theta))``
is orthonormal under any continuous G.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DEGREE = 12


def _check_degree(j: int) -> None:
    if not (1 <= j <= MAX_DEGREE):
        raise ValueError(f"degree must lie in [1, {MAX_DEGREE}], got {j}")


def leg_matrix(m: int, u) -> np.ndarray:
    """Rows Leg_1(u) .. Leg_m(u); shape ``(m,) + u.shape``.

    Three-term recurrence for P_j(2u - 1), scaled by sqrt(2j + 1).
    """
    if not (0 <= m <= MAX_DEGREE):
        raise ValueError(f"degree must lie in [0, {MAX_DEGREE}], got {m}")
    u = np.asarray(u, dtype=float)
    x = 2.0 * u - 1.0
    out = np.empty((m,) + u.shape)
    p_prev = np.ones_like(x)
    p = x
    for j in range(1, m + 1):
        if j > 1:
            p_prev, p = p, ((2 * j - 1) * x * p - (j - 1) * p_prev) / j
        out[j - 1] = np.sqrt(2 * j + 1) * p
    return out


def eval_leg(j: int, u):
    """Degree-j shifted orthonormal Legendre polynomial at u in [0, 1]."""
    _check_degree(j)
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr < 0) | (u_arr > 1)):
        raise ValueError("u must lie in [0, 1]")
    val = leg_matrix(j, u_arr)[j - 1]
    return float(val) if val.ndim == 0 else val


def eval_T(j: int, theta, spec):
    """T_j(theta; G) for the prior G described by ``spec``."""
    _check_degree(j)
    from .families import family_of

    u = family_of(spec).cdf(spec, theta)
    return eval_leg(j, u)


@dataclass(frozen=True)
class LPBasis:
    """Basis T_1..T_m tied to one conjugate prior."""

    spec: object
    m: int

    def __post_init__(self):
        if not (0 <= self.m <= MAX_DEGREE):
            raise ValueError(f"m must lie in [0, {MAX_DEGREE}]")

    def __call__(self, theta) -> np.ndarray:
        from .families import family_of

        return leg_matrix(self.m, family_of(self.spec).cdf(self.spec, theta))
