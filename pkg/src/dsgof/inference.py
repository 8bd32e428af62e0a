"""Macro-inference (prior means and modes with bootstrap SEs, study
clustering) and micro-inference (posterior mean, median and mode)."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.cluster.vq import kmeans2

from . import numerics
from .data import StudyTable
from .ds_core import (
    DEFAULT_GRID,
    DSModel,
    _check_denom,
    _weight_moments,
    elastic_bayes_array,
    prior_mean,
)
from .families import Observation, _obs_arrays, family_of
from .sampler import BootstrapConfig, BootstrapResult, bootstrap_se

log = logging.getLogger(__name__)

KMEANS_RESTARTS = 20

__all__ = [
    "MacroReport",
    "PosteriorSummary",
    "cluster_studies",
    "find_modes",
    "macro_mean",
    "macro_modes",
    "micro",
    "posterior_mode",
    "posterior_modes",
    "prior_mean",
]


@dataclass(frozen=True)
class MacroReport:
    summary_kind: str
    locations: np.ndarray
    ses: np.ndarray
    cluster_assignments: Optional[np.ndarray] = None
    bootstrap: Optional[BootstrapResult] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "summary_kind": self.summary_kind,
            "locations": self.locations.tolist(),
            "ses": self.ses.tolist(),
            "cluster_assignments": None if self.cluster_assignments is None else self.cluster_assignments.tolist(),
            "bootstrap": None if self.bootstrap is None else self.bootstrap.to_dict(),
        }


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    median: float
    mode: float
    theta: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def total_mass(self) -> float:
        """Quadrature of the density grid (clustered rule in posterior rank)."""
        return float(np.dot(self.weights, self.density))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "median": self.median, "mode": self.mode}


# ---------------------------------------------------------------------------
# modes of a density on a grid


def _golden_max(f, a, b, c):
    """Maximize f on the bracket a < b < c (f(b) >= f(a), f(c)).

    Bounded Brent search on [a, c], so ties between grid nodes (a peak
    exactly between two nodes) do not break the bracket.
    """
    try:
        x = _bounded_max(f, a, c)
        if f(x) >= f(b):
            return x
    except (ValueError, RuntimeError):
        pass
    return float(b)


def _bounded_max(f, lo, hi):
    res = optimize.minimize_scalar(lambda x: -f(x), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * max(1.0, abs(hi))})
    return float(res.x)


def _grid_modes(theta, dens, f, lo_bound, hi_bound):
    """Local maxima of ``dens`` on ``theta`` refined against ``f``.

    Interior maxima are refined by golden-section search in their bracket.
    The outermost cells count only when the density increases strictly into
    the boundary over the last three cells; those are refined between the
    support bound (or one cell beyond the grid) and the neighbouring node.
    """
    n = theta.size
    out = []
    for i in range(1, n - 1):
        if dens[i] > dens[i - 1] and dens[i] >= dens[i + 1]:
            out.append(_golden_max(f, theta[i - 1], theta[i], theta[i + 1]))
    if n >= 3 and dens[0] > dens[1] > dens[2]:
        lo = lo_bound if np.isfinite(lo_bound) else theta[0] - (theta[1] - theta[0])
        out.append(_bounded_max(f, lo, theta[1]))
    if n >= 3 and dens[-1] > dens[-2] > dens[-3]:
        hi = hi_bound if np.isfinite(hi_bound) else theta[-1] + (theta[-1] - theta[-2])
        out.append(_bounded_max(f, theta[-2], hi))
    return out


def find_modes(model: DSModel, num_modes: Optional[int] = None, grid_size: int = DEFAULT_GRID,
               warn: bool = True) -> np.ndarray:
    """Highest ``num_modes`` local maxima of the clipped prior density, ascending."""
    kern = family_of(model.spec)
    u = (np.arange(grid_size) + 0.5) / grid_size
    theta = kern.ppf(model.spec, u, 1.0 - u)
    spec = model.spec

    def f(x):
        x = np.clip(x, *kern.support(spec))
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.exp(kern.logpdf(spec, x)) * np.maximum(model.d(kern.cdf(spec, x)), 0.0)
        return float(np.nan_to_num(val, nan=0.0, posinf=np.finfo(float).max))

    dens = np.array([f(t) for t in theta])
    lo, hi = kern.support(spec)
    modes = _grid_modes(theta, dens, f, lo, hi)
    modes = sorted(set(modes), key=lambda x: -f(x))
    if num_modes is not None:
        if num_modes < 1:
            raise ValueError("num_modes must be >= 1")
        if len(modes) < num_modes and warn:
            warnings.warn(f"requested {num_modes} modes but the prior has {len(modes)}", RuntimeWarning)
        modes = modes[:num_modes]
    return np.sort(np.array(modes, dtype=float))


# ---------------------------------------------------------------------------
# macro-inference


def _bootstrap(model, table, summary, boot, num_modes, grid_size):
    if boot is None or table is None:
        return None
    return bootstrap_se(table, model, summary, boot, num_modes=num_modes, grid_size=grid_size)


def macro_mean(model: DSModel, table: Optional[StudyTable] = None, boot: Optional[BootstrapConfig] = None,
               grid_size: int = DEFAULT_GRID) -> MacroReport:
    """Prior mean with an optional smooth-bootstrap SE (NaN without bootstrap)."""
    loc = np.array([prior_mean(model)])
    res = _bootstrap(model, table, "mean", boot, 1, grid_size)
    ses = res.ses if res is not None else np.full(1, np.nan)
    return MacroReport("mean", loc, ses, None, res)


def macro_modes(model: DSModel, num_modes: int = 1, table: Optional[StudyTable] = None,
                boot: Optional[BootstrapConfig] = None, grid_size: int = DEFAULT_GRID) -> MacroReport:
    """Prior modes with optional mode-matched bootstrap SEs."""
    loc = find_modes(model, num_modes, grid_size)
    res = _bootstrap(model, table, "modes", boot, num_modes, grid_size) if loc.size else None
    ses = res.ses if res is not None else np.full(loc.size, np.nan)
    return MacroReport("modes", loc, ses, None, res)


# ---------------------------------------------------------------------------
# micro-inference


def _post_setup(model: DSModel, obs: Observation):
    y, size = _obs_arrays(model.spec, obs)
    kern = family_of(model.spec)
    p1, p2 = kern.post(model.spec, y, size)
    return kern, float(p1), float(p2), y, size


class _Posterior:
    """DS posterior of one study on a clustered posterior-rank grid."""

    def __init__(self, model: DSModel, obs: Observation, grid_size: int, rule=None):
        kern, p1, p2, y, size = _post_setup(model, obs)
        self.model, self.kern, self.p1, self.p2, self.y, self.size = model, kern, p1, p2, y, size
        self.rule = rule or numerics.clustered_rule(64)
        denom, _ = _weight_moments(model, y[None], size[None], None, self.rule)
        _check_denom(denom)
        self.D = float(denom[0])
        grule = numerics.clustered_rule(grid_size)
        self.theta = kern.post_ppf(p1, p2, grule.nodes, grule.upper)
        base = np.exp(kern.post_logpdf(p1, p2, self.theta))
        self.density = base * self.ratio(self.theta)
        with np.errstate(divide="ignore"):
            self.weights = np.where(base > 0, grule.weights / base, 0.0)

    def ratio(self, theta):
        return self.model.d(self.kern.cdf(self.model.spec, theta)) / self.D

    def pdf(self, x) -> float:
        x = float(np.clip(x, *self.kern.support(self.model.spec)))
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.exp(self.kern.post_logpdf(self.p1, self.p2, x)) * self.ratio(x)
        return float(np.nan_to_num(val, nan=0.0, posinf=np.finfo(float).max))

    def quantile(self, v: float) -> float:
        return float(self.kern.post_ppf(self.p1, self.p2, np.asarray(v), np.asarray(1.0 - v)))

    def mean(self) -> float:
        return float(elastic_bayes_array(self.model, self.y[None], self.size[None], None, self.rule)[0])

    def median(self) -> float:
        if self.model.is_null:
            return self.quantile(0.5)
        crule = numerics.clustered_rule(128)

        # posterior CDF in rank space: F(Q(v)) = int_0^v d(G(Q(s))) ds / D
        def cdf_v(vv):
            s = vv * crule.nodes
            return vv * float(np.dot(crule.weights, self.ratio(self.kern.post_ppf(self.p1, self.p2, s, 1.0 - s))))

        return self.quantile(optimize.brentq(lambda vv: cdf_v(vv) - 0.5, 1e-12, 1 - 1e-12, xtol=1e-14))

    def mode(self) -> float:
        lo, hi = self.kern.support(self.model.spec)
        cands = _grid_modes(self.theta, self.density, self.pdf, lo, hi)
        if not cands:
            cands = [float(self.theta[int(np.argmax(self.density))])]
        return float(max(cands, key=self.pdf))


def micro(model: DSModel, obs: Observation, grid_size: int = DEFAULT_GRID, rule=None) -> PosteriorSummary:
    """Posterior mean, median and mode of one study under the DS prior.

    The density grid sits on clustered posterior ranks, so ``weights`` turn
    it into a quadrature rule over theta.
    """
    post = _Posterior(model, obs, grid_size, rule)
    return PosteriorSummary(post.mean(), post.median(), post.mode(), post.theta, post.density, post.weights)


def posterior_mode(model: DSModel, obs: Observation, grid_size: int = DEFAULT_GRID) -> float:
    """Posterior mode alone (grid argmax refined locally)."""
    return _Posterior(model, obs, grid_size).mode()


def posterior_modes(model: DSModel, table: StudyTable, grid_size: int = DEFAULT_GRID) -> np.ndarray:
    """Posterior mode of every study (computed once per distinct row)."""
    y, size, _, inverse = table.collapse()
    uniq = []
    for a, b in zip(y, size):
        obs = Observation(a) if table.size is None else Observation(a, b)
        uniq.append(posterior_mode(model, obs, grid_size))
    return np.asarray(uniq)[inverse]


def _kmeans_1d(x, k, seed):
    best = None
    for r in range(KMEANS_RESTARTS):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        centers, labels = kmeans2(x[:, None], k, minit="++", seed=rng)
        centers = centers[:, 0]
        if len(np.unique(labels)) < k:
            continue
        sse = float(np.sum((x - centers[labels]) ** 2))
        key = (round(sse, 12), float(np.min(centers)))
        if best is None or key < best[0]:
            best = (key, centers, labels)
    if best is None:
        raise ValueError("k-means failed to produce non-empty clusters")
    _, centers, labels = best
    order = np.argsort(centers)
    rank = np.empty(k, dtype=int)
    rank[order] = np.arange(k)
    return rank[labels], centers[order]


def cluster_studies(model: DSModel, table: StudyTable, num_groups: int = 2, seed: int = 0,
                    grid_size: int = DEFAULT_GRID) -> np.ndarray:
    """Group studies by 1-D k-means on their posterior modes.

    Labels 0..num_groups-1 are ordered by cluster centre, ascending.
    """
    if num_groups < 1:
        raise ValueError("num_groups must be >= 1")
    modes = posterior_modes(model, table, grid_size)
    if num_groups == 1:
        return np.zeros(table.k, dtype=int)
    if num_groups > np.unique(modes).size:
        raise ValueError(f"num_groups={num_groups} exceeds the {np.unique(modes).size} distinct posterior modes")
    labels, _ = _kmeans_1d(modes, num_groups, seed)
    return labels

