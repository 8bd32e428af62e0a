"""Accept/reject sampling from a fitted DS prior and the smooth bootstrap.

Proposals are uniform ranks ``u`` (i.e. draws from G); a proposal is kept
with probability ``max(d(u), 0) / M`` where ``M`` bounds the clipped
U-function.  Accepted ranks are mapped back through ``G^{-1}``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import StudyTable
from .ds_core import DEFAULT_EPS, DEFAULT_GRID, DEFAULT_M_MAX, DegenerateModel, DSModel, fit_mom2, quiet_fits
from .families import family_of
from .hyperparams import fit_hyperparameters

log = logging.getLogger(__name__)

ENVELOPE_INFLATION = 1.02
MAX_FAILURE_FRACTION = 0.10


class BootstrapFailure(RuntimeError):
    """Too many bootstrap replicates failed to refit."""


@dataclass(frozen=True)
class SampleBatch:
    draws: np.ndarray
    acceptance_rate: float
    seed: Optional[int]
    proposals: int = 0
    envelope: float = 1.0

    def __len__(self) -> int:
        return self.draws.size


def envelope(model: DSModel, grid_size: int = DEFAULT_GRID) -> float:
    """M = 1.02 * max of the clipped U-function over an evenly spaced u-grid."""
    grid = np.linspace(0.0, 1.0, grid_size)
    top = float(np.max(np.maximum(model.d(grid), 0.0)))
    if not top > 0:
        raise DegenerateModel("clipped U-function is zero everywhere; nothing to sample")
    return ENVELOPE_INFLATION * top


def draw_ranks(model: DSModel, k: int, rng: np.random.Generator, grid_size: int = DEFAULT_GRID):
    """k accepted prior ranks u* plus the number of proposals used."""
    if k < 0:
        raise ValueError("k must be >= 0")
    M = envelope(model, grid_size)
    out = np.empty(k)
    filled = 0
    proposals = 0
    while filled < k:
        need = k - filled
        batch = max(64, int(math.ceil(need * M * 1.1)))
        u = rng.random(batch)
        accept_u = rng.random(batch)
        keep = accept_u * M < np.maximum(model.d(u), 0.0)
        # count proposals only up to the last one we actually use
        idx = np.flatnonzero(keep)
        if idx.size > need:
            proposals += int(idx[need - 1]) + 1
            idx = idx[:need]
        else:
            proposals += batch
        out[filled:filled + idx.size] = u[idx]
        filled += idx.size
    return out, proposals, M


def sample_ds(model: DSModel, k: int, seed: Optional[int] = None, rng: Optional[np.random.Generator] = None,
              grid_size: int = DEFAULT_GRID) -> SampleBatch:
    """k i.i.d. draws from the (clipped) DS prior; deterministic given ``seed``."""
    if rng is None:
        rng = np.random.default_rng(seed)
    u, proposals, M = draw_ranks(model, k, rng, grid_size)
    theta = family_of(model.spec).ppf(model.spec, u, 1.0 - u)
    rate = k / proposals if proposals else 1.0
    return SampleBatch(np.asarray(theta, dtype=float), rate, seed, proposals, M)


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    """Independent stream for bootstrap replicate ``b``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


# ---------------------------------------------------------------------------
# smooth bootstrap


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    seed: int = 0
    refit_hyperparameters: bool = True
    m_max: int = DEFAULT_M_MAX
    eps: float = DEFAULT_EPS
    zero_truncated: bool = False


@dataclass(frozen=True)
class BootstrapResult:
    estimate: np.ndarray
    ses: np.ndarray
    replicates: np.ndarray = field(repr=False)
    failures: int = 0
    B: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.tolist(),
            "ses": self.ses.tolist(),
            "failures": self.failures,
            "B": self.B,
            "seed": self.seed,
        }


def match_locations(reference, found) -> np.ndarray:
    """Assign each reference location its nearest replicate location.

    With at least as many found locations as references the assignment is
    one-to-one (minimum total distance); otherwise locations may be reused.
    """
    reference = np.asarray(reference, dtype=float)
    found = np.asarray(found, dtype=float)
    if found.size == 0:
        return np.full(reference.shape, np.nan)
    cost = np.abs(reference[:, None] - found[None, :])
    if found.size >= reference.size:
        rows, cols = linear_sum_assignment(cost)
        out = np.empty(reference.size)
        out[rows] = found[cols]
        return out
    return found[np.argmin(cost, axis=1)]


def _resolve_summary(summary, num_modes: int, grid_size: int) -> Callable[[DSModel], np.ndarray]:
    if callable(summary):
        return summary
    from . import inference

    if summary == "mean":
        return lambda m: np.array([inference.prior_mean(m)])
    if summary == "modes":
        return lambda m: inference.find_modes(m, num_modes, grid_size, warn=False)
    raise ValueError(f"unknown summary {summary!r}; expected 'mean' or 'modes'")


def bootstrap_se(
    table: StudyTable,
    model: DSModel,
    summary: Union[str, Callable[[DSModel], np.ndarray]] = "mean",
    config: BootstrapConfig = BootstrapConfig(),
    num_modes: int = 1,
    grid_size: int = DEFAULT_GRID,
    generator: Optional[Callable[[np.random.Generator], StudyTable]] = None,
) -> BootstrapResult:
    """Standard errors of ``summary`` by the smooth (DS-sampler) bootstrap.

    Each replicate draws k parameters from the fitted prior, simulates the
    panel with the original sizes, re-estimates the hyperparameters (when
    ``config.refit_hyperparameters``), refits MOM-II with BIC smoothing and
    recomputes the summary.  Mode summaries are paired with the original
    locations by nearest-location assignment.
    """
    if config.B < 1:
        raise ValueError("B must be >= 1")
    fn = _resolve_summary(summary, num_modes, grid_size)
    estimate = np.atleast_1d(np.asarray(fn(model), dtype=float))
    kern = family_of(model.spec)
    sizes = table.sizes

    def simulate(rng):
        if generator is not None:
            return generator(rng)
        theta = sample_ds(model, table.k, rng=rng, grid_size=grid_size).draws
        y = kern.draw_y(theta, sizes, rng)
        return StudyTable(table.family, y, table.size, table.name, table.size_label)

    max_fail = int(math.floor(MAX_FAILURE_FRACTION * config.B))
    with quiet_fits():
        reps, failures = _run_replicates(config, simulate, fn, estimate, max_fail, model)
    if failures:
        log.warning("%d of %d bootstrap replicates failed and were excluded", failures, config.B)
    R = np.array(reps).reshape(len(reps), estimate.size)
    ses = R.std(axis=0, ddof=1) if len(reps) > 1 else np.zeros(estimate.size)
    return BootstrapResult(estimate, ses, R, failures, config.B, config.seed)


def _run_replicates(config, simulate, fn, estimate, max_fail, model):
    reps = []
    failures = 0
    for b in range(config.B):
        rng = replicate_rng(config.seed, b)
        try:
            panel = simulate(rng)
            spec = (
                fit_hyperparameters(panel, zero_truncated=config.zero_truncated).spec
                if config.refit_hyperparameters
                else model.spec
            )
            refit = fit_mom2(panel, spec, m_max=config.m_max, eps=config.eps)
            vals = np.atleast_1d(np.asarray(fn(refit), dtype=float))
            matched = match_locations(estimate, vals) if estimate.size > 1 or vals.size != 1 else vals
            if not np.all(np.isfinite(matched)):
                raise FloatingPointError("summary undefined for replicate")
            reps.append(matched)
        except (ValueError, ArithmeticError, FloatingPointError) as exc:
            failures += 1
            log.debug("bootstrap replicate %d failed: %s", b, exc)
            if failures > max_fail:
                raise BootstrapFailure(
                    f"{failures} of {b + 1} bootstrap replicates failed (limit {max_fail} of {config.B})"
                ) from exc
    return reps, failures
