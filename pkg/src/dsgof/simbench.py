"""Simulation benchmarks: the prior-data-conflict MSE study for a new
binomial trial, Robbins' compound decision problem, and Robbins' formula
for Poisson counts."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import StudyTable
from .ds_core import DEFAULT_EPS, DEFAULT_M_MAX, elastic_bayes_array, fit_mom2, quiet_fits
from .families import Family, Observation
from .hyperparams import mle_beta_binomial, mle_normal_normal
from .inference import posterior_mode

log = logging.getLogger(__name__)


def robbins_estimate(counts, y: int) -> Optional[float]:
    """Robbins' estimate (y+1) N(y+1) / N(y) from a count histogram.

    ``counts[y]`` is the number of units with y events.  Returns ``None``
    (undefined) when N(y) = 0 or when y+1 lies beyond the observed range.
    """
    counts = np.asarray(counts, dtype=float)
    if y < 0 or y != int(y):
        raise ValueError("y must be a non-negative integer")
    y = int(y)
    if y >= counts.size or counts[y] == 0:
        return None
    if y + 1 >= counts.size:
        return None
    if counts[y + 1] == 0 and not np.any(counts[y + 1:] > 0):
        return None
    return (y + 1) * counts[y + 1] / counts[y]


def histogram(y) -> np.ndarray:
    """Counts N(0..max y) of integer observations."""
    y = np.asarray(y, dtype=int)
    return np.bincount(y)


@dataclass(frozen=True)
class ScenarioConfig:
    etas: tuple = tuple(np.round(np.arange(0.0, 0.501, 0.05), 2))
    replicates: int = 250
    k: int = 100
    trial_size: int = 60
    new_size: int = 50
    new_theta: float = 0.3
    seed: int = 0
    m_max: int = DEFAULT_M_MAX
    eps: float = DEFAULT_EPS
    noise_sd: float = 1.0
    estimators: tuple = ("FQ", "PEB", "DS")

    def __post_init__(self):
        etas = tuple(float(e) for e in self.etas)
        if not etas or any(not (0.0 <= e <= 0.5) for e in etas):
            raise ValueError("eta values must lie in [0, 0.5]")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        object.__setattr__(self, "etas", etas)


@dataclass(frozen=True)
class ResultTable:
    columns: tuple
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _ratio(num: float, den: float) -> float:
    """num / den with 0/0 read as 1 (both estimators perfect)."""
    if den == 0.0:
        return 1.0 if num == 0.0 else float("inf")
    return num / den


def _beta_mode(a: float, b: float) -> float:
    if a > 1 and b > 1:
        return (a - 1.0) / (a + b - 2.0)
    if a <= 1 and b > 1:
        return 0.0
    if a > 1 and b <= 1:
        return 1.0
    return 0.0 if a < b else 1.0


# ---------------------------------------------------------------------------
# prior-data conflict for a new binomial trial


def pharma_replicate(eta: float, config: ScenarioConfig, rng: np.random.Generator):
    """Squared errors (FQ, PEB, DS) of the mode estimates for one replicate."""
    k = config.k
    low = rng.random(k) < eta
    theta = np.where(low, rng.beta(5.0, 45.0, k), rng.beta(30.0, 70.0, k))
    y = rng.binomial(config.trial_size, theta).astype(float)
    table = StudyTable(Family.BINOMIAL, y, np.full(k, float(config.trial_size)))
    spec = mle_beta_binomial(table).spec
    model = fit_mom2(table, spec, m_max=config.m_max, eps=config.eps)
    y_new = float(rng.binomial(config.new_size, config.new_theta))
    n_new = float(config.new_size)
    fq = y_new / n_new
    peb = _beta_mode(spec.hyper1 + y_new, spec.hyper2 + n_new - y_new)
    ds = posterior_mode(model, Observation(y_new, n_new))
    t = config.new_theta
    return (fq - t) ** 2, (peb - t) ** 2, (ds - t) ** 2


def pharma_experiment(config: ScenarioConfig = ScenarioConfig()) -> ResultTable:
    """MSE of frequentist, parametric EB and DS mode estimates for a new trial.

    Parameters come from eta Beta(5,45) + (1-eta) Beta(30,70); the new trial
    is Bin(new_size, new_theta).  Emits per-eta MSEs and the ratios PEB/FQ
    and PEB/DS.
    """
    with quiet_fits():
        return _pharma_experiment(config)


def _pharma_experiment(config: ScenarioConfig) -> ResultTable:
    cols = ("eta", "mse_fq", "mse_peb", "mse_ds", "peb_over_fq", "peb_over_ds", "replicates", "failures")
    rows = []
    for e_i, eta in enumerate(config.etas):
        errs = []
        failures = 0
        for r in range(config.replicates):
            try:
                errs.append(pharma_replicate(eta, config, _rng(config.seed, e_i, r)))
            except (ValueError, ArithmeticError) as exc:
                failures += 1
                log.info("pharma replicate eta=%g r=%d failed: %s", eta, r, exc)
        if not errs:
            raise RuntimeError(f"all replicates failed at eta={eta}")
        fq, peb, ds = np.mean(np.array(errs), axis=0)
        rows.append((eta, fq, peb, ds, _ratio(peb, fq), _ratio(peb, ds), len(errs), failures))
    return ResultTable(cols, rows)


# ---------------------------------------------------------------------------
# compound decision problem


def compound_replicate(eta: float, config: ScenarioConfig, rng: np.random.Generator):
    """Empirical losses (PEB, DS) of sign decisions for one replicate."""
    k = config.k
    theta = np.where(rng.random(k) < eta, -1.0, 1.0)
    if config.noise_sd == 0:
        # point-mass likelihood: every posterior sits on y itself
        y = theta.copy()
        return float(np.mean(np.abs(np.sign(y) - theta))), float(np.mean(np.abs(np.sign(y) - theta)))
    s = np.full(k, float(config.noise_sd))
    y = theta + config.noise_sd * rng.standard_normal(k)
    table = StudyTable(Family.NORMAL, y, s)
    spec = mle_normal_normal(table).spec
    lam = s**2 / (s**2 + spec.hyper2)
    peb_mean = lam * spec.hyper1 + (1.0 - lam) * y
    model = fit_mom2(table, spec, m_max=config.m_max, eps=config.eps)
    ds_mean = elastic_bayes_array(model, y, s)
    decide = lambda m: np.where(m >= 0.0, 1.0, -1.0)
    return float(np.mean(np.abs(decide(peb_mean) - theta))), float(np.mean(np.abs(decide(ds_mean) - theta)))


def compound_decision_experiment(config: ScenarioConfig) -> ResultTable:
    """Risk of sign-thresholded posterior means for theta in {-1, +1}^k.

    theta_i = -1 with probability eta and +1 otherwise; Y_i = theta_i + eps_i.
    Emits mean losses over replicates and the ratio PEB/DS.
    """
    with quiet_fits():
        return _compound_decision_experiment(config)


def _compound_decision_experiment(config: ScenarioConfig) -> ResultTable:
    cols = ("eta", "risk_peb", "risk_ds", "peb_over_ds", "replicates", "failures")
    rows = []
    for e_i, eta in enumerate(config.etas):
        losses = []
        failures = 0
        for r in range(config.replicates):
            try:
                losses.append(compound_replicate(eta, config, _rng(config.seed, e_i, r)))
            except (ValueError, ArithmeticError) as exc:
                failures += 1
                log.info("compound replicate eta=%g r=%d failed: %s", eta, r, exc)
        if not losses:
            raise RuntimeError(f"all replicates failed at eta={eta}")
        peb, ds = np.mean(np.array(losses), axis=0)
        rows.append((eta, peb, ds, _ratio(peb, ds), len(losses), failures))
    return ResultTable(cols, rows)


def compound_config(etas: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5), replicates: int = 500,
                    k: int = 1000, seed: int = 0, **kw) -> ScenarioConfig:
    """Defaults for the compound decision study (k = 1000, 500 replicates)."""
    return ScenarioConfig(etas=tuple(etas), replicates=replicates, k=k, seed=seed, **kw)
