import math
import warnings

import numpy as np
import pytest
from scipy import stats

from dsgof.data import StudyTable, load_dataset
from dsgof.ds_core import DSModel, elastic_bayes
from dsgof.families import ConjugateSpec, Family, Observation
from dsgof.inference import (
    cluster_studies,
    find_modes,
    macro_mean,
    macro_modes,
    micro,
    posterior_mode,
    prior_mean,
)

RAT_SPEC = ConjugateSpec(Family.BINOMIAL, 2.30, 14.08)
RAT_MODEL = DSModel(RAT_SPEC, [0, 0, -0.5])


def test_rat_model_is_bimodal():
    modes = find_modes(RAT_MODEL, 2)
    assert modes == pytest.approx([0.0343, 0.1557], abs=2e-3)
    report = macro_modes(RAT_MODEL, 2)
    assert np.array_equal(report.locations, modes)
    assert np.all(np.isnan(report.ses))


def test_rat_clusters():
    labels = cluster_studies(RAT_MODEL, load_dataset("rat"), 2)
    assert np.bincount(labels).tolist() == [22, 48]
    assert np.array_equal(labels, cluster_studies(RAT_MODEL, load_dataset("rat"), 2))


def test_too_many_modes_warns():
    with pytest.warns(RuntimeWarning, match="requested 3 modes"):
        modes = find_modes(DSModel.null(RAT_SPEC), 3)
    assert modes == pytest.approx([(2.30 - 1) / (2.30 + 14.08 - 2)], rel=1e-6)
    with pytest.raises(ValueError):
        find_modes(RAT_MODEL, 0)


def test_null_prior_mean_and_macro_mean():
    assert prior_mean(DSModel.null(RAT_SPEC)) == pytest.approx(2.30 / 16.38, rel=1e-10)
    rep = macro_mean(DSModel.null(RAT_SPEC))
    assert rep.locations[0] == pytest.approx(2.30 / 16.38, rel=1e-10)
    assert math.isnan(rep.ses[0])
    assert rep.to_dict()["summary_kind"] == "mean"


@pytest.mark.parametrize(
    "spec,obs,law",
    [
        (RAT_SPEC, Observation(4, 14), stats.beta(6.30, 24.08)),
        (ConjugateSpec(Family.POISSON, 2.0, 0.5), Observation(3, 2.0), stats.gamma(5.0, scale=0.25)),
        (ConjugateSpec.normal(0.0, 1.0), Observation(2.0, 1.0), stats.norm(1.0, math.sqrt(0.5))),
    ],
)
def test_micro_null_model_is_conjugate(spec, obs, law):
    summ = micro(DSModel.null(spec), obs)
    assert summ.mean == pytest.approx(law.mean(), rel=1e-9)
    assert summ.median == pytest.approx(law.median(), rel=1e-9)
    peak = 1.0 if spec.family is Family.NORMAL else None
    if spec.family is Family.BINOMIAL:
        peak = (6.30 - 1) / (6.30 + 24.08 - 2)
    elif spec.family is Family.POISSON:
        peak = (5.0 - 1) * 0.25
    assert summ.mode == pytest.approx(peak, rel=1e-6)
    assert summ.total_mass() == pytest.approx(1.0, abs=1e-6)


def test_micro_ds_model():
    obs = Observation(4, 14)
    summ = micro(RAT_MODEL, obs)
    assert summ.total_mass() == pytest.approx(1.0, abs=1e-6)
    assert summ.mean == pytest.approx(elastic_bayes(RAT_MODEL, obs), rel=1e-10)
    assert summ.mode == pytest.approx(posterior_mode(RAT_MODEL, obs), rel=1e-12)
    # the posterior CDF at the median is one half
    below = summ.theta <= summ.median
    assert float(np.dot(summ.weights[below], summ.density[below])) == pytest.approx(0.5, abs=0.01)


def test_cluster_edge_cases():
    table = StudyTable(Family.BINOMIAL, np.array([1.0, 1.0, 5.0]), np.full(3, 20.0))
    model = DSModel.null(RAT_SPEC)
    assert cluster_studies(model, table, 1).tolist() == [0, 0, 0]
    assert cluster_studies(model, table, 2).tolist() == [0, 0, 1]
    with pytest.raises(ValueError):
        cluster_studies(model, table, 3)
    with pytest.raises(ValueError):
        cluster_studies(model, table, 0)
