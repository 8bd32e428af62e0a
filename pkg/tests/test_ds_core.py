import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import draw_from_g, simulate_panel
from dsgof.data import StudyTable, load_dataset
from dsgof.ds_core import (
    DegenerateModel,
    DSModel,
    Representation,
    bic_select,
    clip_constant,
    elastic_bayes,
    elastic_bayes_array,
    fit_mom2,
    kl_divergence,
    marginal_lp,
    marginal_lp_array,
    posterior_expect_T_lp,
    posterior_lp_density,
    prior_density,
    prior_grid,
    prior_mean,
    qlp,
    u_function,
)
from dsgof.families import ConjugateSpec, Family, Observation, family_of
from dsgof.lp_basis import eval_T

RAT_SPEC = ConjugateSpec(Family.BINOMIAL, 2.30, 14.08)
RAT_PRINTED = DSModel(RAT_SPEC, [0, 0, -0.5, 0, 0, 0, 0, 0])
INSURANCE_PRINTED = DSModel(ConjugateSpec(Family.POISSON, 0.70, 0.31), [0, -0.26, 0, 0, 0, 0, 0, 0])


# ---------------------------------------------------------------------------
# BIC smoothing


def test_bic_keeps_magnitude_sorted_subset():
    k = 100
    pen = math.log(k) / k  # 0.046
    raw = np.array([0.05, -0.40, 0.0, 0.30, 0.1])
    out, trace, m = bic_select(raw, k)
    # adding c^2 helps only when c^2 > penalty: 0.16 and 0.09 do, 0.01 does not
    assert m == 2
    assert out.tolist() == [0.0, -0.40, 0.0, 0.30, 0.0]
    assert trace[0] == (0, 0.0)
    assert trace[2][1] == pytest.approx(0.16 + 0.09 - 2 * pen)
    assert len(trace) == raw.size + 1


def test_bic_ties_choose_smaller_model_and_validate():
    k = 10
    c = math.sqrt(math.log(k) / k)  # exactly the penalty
    out, _, m = bic_select([c, 0.0], k)
    assert m == 0 and not np.any(out)
    with pytest.raises(ValueError):
        bic_select([np.nan], 5)
    with pytest.raises(ValueError):
        bic_select([0.1], 0)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=8), st.integers(2, 5000))
@settings(max_examples=60, deadline=None)
def test_bic_smoothing_never_increases_qlp(raw, k):
    out, _, m = bic_select(raw, k)
    assert np.sum(out**2) <= np.sum(np.square(raw)) + 1e-15
    assert np.count_nonzero(out) <= m


# ---------------------------------------------------------------------------
# model object and diagnostics


def test_model_round_trip_and_properties():
    m = DSModel(RAT_SPEC, [0.1, 0, -0.5], m_selected=2, k=70)
    assert m.retained == [1, 3] and m.m_max == 3 and not m.is_null
    back = DSModel.from_dict(m.to_dict())
    assert back.retained == m.retained and np.array_equal(back.coeffs, m.coeffs)
    assert DSModel.null(RAT_SPEC).is_null
    with pytest.raises(ValueError):
        DSModel(RAT_SPEC, np.zeros(13))
    with pytest.raises(ValueError):
        m.coeffs[0] = 1.0  # immutable


def test_shipyard_form_dips_negative_at_midpoint():
    m = DSModel(ConjugateSpec(Family.BINOMIAL, 0.5, 0.5), [-0.67, 0.90])
    assert float(m.d(0.5)) == pytest.approx(1 - 0.90 * math.sqrt(5) / 2, abs=1e-12)
    assert u_function(m).min < 0


def test_u_function_integrates_to_one():
    uf = u_function(RAT_PRINTED)
    assert uf.grid.size == 250 and uf.grid[0] == 0.0 and uf.grid[-1] == 1.0
    assert uf.integral() == pytest.approx(1.0, abs=1e-13)


def test_qlp_and_kl():
    assert qlp(RAT_PRINTED) == pytest.approx(0.25)
    assert qlp(DSModel.null(RAT_SPEC)) == 0.0
    small = DSModel(RAT_SPEC, [0.05, -0.1, 0.05])
    kl = integrate.quad(lambda u: float(small.d(u)) * math.log(float(small.d(u))), 0, 1)[0]
    assert kl_divergence(small) == pytest.approx(kl, rel=1e-9)
    assert qlp(small) == pytest.approx(2 * kl, rel=0.25)
    with pytest.raises(DegenerateModel):
        kl_divergence(RAT_PRINTED)  # 1 - 0.5 Leg_3 dips below zero


def test_clip_constant():
    assert clip_constant(DSModel.null(RAT_SPEC)) == pytest.approx(1.0)
    neg = clip_constant(RAT_PRINTED)
    ref = integrate.quad(lambda u: max(float(RAT_PRINTED.d(u)), 0.0), 0, 1, limit=200)[0]
    assert neg == pytest.approx(ref, rel=1e-4) and neg > 1.0


# ---------------------------------------------------------------------------
# prior density


def test_prior_density_closed_form():
    theta = np.array([0.02, 0.1, 0.3])
    g = stats.beta.pdf(theta, 2.30, 14.08)
    assert np.allclose(prior_density(DSModel.null(RAT_SPEC), theta), g, rtol=1e-14)
    expected = g * (1 - 0.5 * eval_T(3, theta, RAT_SPEC))
    assert np.allclose(prior_density(RAT_PRINTED, theta), expected, rtol=1e-13)


def test_prior_density_integrates_to_one_before_clipping():
    mass = integrate.quad(lambda t: prior_density(RAT_PRINTED, t), 0, 1, limit=200, points=[0.05, 0.15, 0.3])[0]
    assert mass == pytest.approx(1.0, abs=1e-8)
    clipped = integrate.quad(lambda t: prior_density(RAT_PRINTED, t, clipped=True), 0, 1, limit=200,
                             points=[0.05, 0.15, 0.3])[0]
    assert clipped == pytest.approx(1.0, abs=1e-5)


def test_prior_grid_and_mean():
    theta, dens, g = prior_grid(RAT_PRINTED, 100)
    assert theta.size == 100 and np.all(np.diff(theta) > 0) and np.all(dens >= 0)
    assert prior_mean(DSModel.null(RAT_SPEC)) == pytest.approx(2.30 / 16.38, rel=1e-10)
    kern = family_of(RAT_SPEC)
    ref = integrate.quad(lambda t: t * prior_density(RAT_PRINTED, t, clipped=True), 0, 1, limit=200,
                         points=[0.05, 0.15, 0.3])[0]
    assert prior_mean(RAT_PRINTED) == pytest.approx(ref, rel=1e-4)
    assert kern.mean(RAT_SPEC) == pytest.approx(2.30 / 16.38)


# ---------------------------------------------------------------------------
# posterior formulas


def _quad_posterior_mean(model, obs):
    kern = family_of(model.spec)
    size = 1.0 if obs.size is None else obs.size
    lo, hi = kern.support(model.spec)

    def joint(t):
        return math.exp(kern.log_lik(obs.y, size, t)) * prior_density(model, t)

    cuts = kern.ppf(model.spec, np.linspace(0, 1, 21)[1:-1])
    edges = [lo, *cuts, hi]
    num = sum(integrate.quad(lambda t: t * joint(t), a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
    den = sum(integrate.quad(joint, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))
    return num / den, den


@pytest.mark.parametrize("obs", [Observation(0, 20), Observation(4, 14), Observation(9, 24)])
def test_rat_posterior_mean_and_marginal_against_bayes_rule(obs):
    mean, marg = _quad_posterior_mean(RAT_PRINTED, obs)
    assert elastic_bayes(RAT_PRINTED, obs) == pytest.approx(mean, rel=1e-7)
    assert marginal_lp(RAT_PRINTED, obs) == pytest.approx(marg, rel=1e-7)


def test_insurance_printed_model_matches_table_entries():
    printed = (0.156, 0.322, 0.517, 0.744)
    got = [elastic_bayes(INSURANCE_PRINTED, Observation(y, 1.0)) for y in range(4)]
    assert np.allclose(got, printed, rtol=0.05)


def test_stein_shrinkage_reductions():
    a, b, n, y = 2.0, 5.0, 12, 4
    spec = ConjugateSpec(Family.BINOMIAL, a, b)
    stein = n / (a + b + n) * (y / n) + (a + b) / (a + b + n) * a / (a + b)
    assert elastic_bayes(DSModel.null(spec), Observation(y, n)) == pytest.approx(stein, rel=1e-15)
    spec = ConjugateSpec(Family.POISSON, 0.7, 0.31)
    assert elastic_bayes(DSModel.null(spec), Observation(3, 1.0)) == pytest.approx((3 + 0.7) / (1 / 0.31 + 1))


def test_posterior_density_integrates_and_reduces():
    obs = Observation(4, 14)
    mass = integrate.quad(lambda t: posterior_lp_density(RAT_PRINTED, obs, t), 0, 1, limit=200)[0]
    assert mass == pytest.approx(1.0, abs=1e-9)
    null = DSModel.null(RAT_SPEC)
    theta = np.array([0.1, 0.3])
    assert np.allclose(posterior_lp_density(null, obs, theta), stats.beta.pdf(theta, 6.30, 24.08), rtol=1e-14)


def test_generic_h():
    obs = Observation(4, 14)
    second = elastic_bayes(RAT_PRINTED, obs, h=lambda t: t**2)
    mean = elastic_bayes(RAT_PRINTED, obs)
    assert second > mean**2  # positive posterior variance
    ones = elastic_bayes(RAT_PRINTED, obs, h=lambda t: np.ones_like(t))
    assert ones == pytest.approx(1.0, abs=1e-12)


def test_marginal_sums_to_one_over_support():
    ys = np.arange(21.0)
    total = marginal_lp_array(RAT_PRINTED, ys, np.full(21, 20.0), strict=False).sum()
    assert total == pytest.approx(1.0, abs=1e-10)


def test_degenerate_correction_is_flagged():
    bad = DSModel(RAT_SPEC, [0, 0, -2.5])  # d(1) = 1 - 2.5 sqrt(7) < 0
    with pytest.raises(DegenerateModel):
        elastic_bayes(bad, Observation(20, 20))
    with pytest.raises(DegenerateModel):
        marginal_lp(bad, Observation(20, 20))
    assert marginal_lp_array(bad, np.array([20.0]), np.array([20.0]), strict=False)[0] <= 0


def test_array_api_matches_scalar():
    y = np.array([0.0, 3.0, 7.0])
    n = np.array([20.0, 14.0, 20.0])
    arr = elastic_bayes_array(RAT_PRINTED, y, n)
    assert np.allclose(arr, [elastic_bayes(RAT_PRINTED, Observation(a, b)) for a, b in zip(y, n)], rtol=1e-14)


# ---------------------------------------------------------------------------
# fitting


def test_fit_validates_arguments():
    t = load_dataset("shipyard")
    with pytest.raises(ValueError):
        fit_mom2(t, ConjugateSpec(Family.POISSON, 1, 1))
    with pytest.raises(ValueError):
        fit_mom2(t, ConjugateSpec(Family.BINOMIAL, 1, 1), m_max=0)
    with pytest.raises(ValueError):
        fit_mom2(t, ConjugateSpec(Family.BINOMIAL, 1, 1), eps=0)


def test_first_iteration_is_average_of_conjugate_moments():
    t = load_dataset("rat")
    one = fit_mom2(t, RAT_SPEC, max_iter=1, smooth=False)
    from dsgof.families import conditional_moments

    A, _ = conditional_moments(RAT_SPEC, t.y, t.size, 8)
    assert np.allclose(one.raw_coeffs, A.mean(axis=0), atol=1e-14)


def test_fit_records_diagnostics_and_bounds():
    t = load_dataset("rat")
    model = fit_mom2(t, RAT_SPEC)
    assert model.iterations >= 1 and model.k == 70
    assert len(model.bic_trace) == 9
    assert qlp(model) <= float(np.sum(model.raw_coeffs**2)) + 1e-15
    j = np.arange(1, 9)
    assert np.all(np.abs(model.coeffs) <= np.sqrt(2 * j + 1))
    if u_function(model).min < -0.05:
        assert any("max-entropy" in w for w in model.warnings)


def test_converged_fit_is_a_fixed_point():
    # a smooth, well-specified panel converges; at convergence the ghost
    # average reproduces the raw coefficients to within sqrt(eps)
    rng = np.random.default_rng(5)
    spec = ConjugateSpec(Family.NORMAL, 0.0, 1.0)
    t = simulate_panel(spec, draw_from_g(spec, 300, rng), rng)
    model = fit_mom2(t, spec, m_max=2, smooth=False)
    assert model.converged
    ghost = posterior_expect_T_lp(model, t)
    assert np.max(np.abs(ghost - model.coeffs)) <= math.sqrt(model.eps)


def test_fit_is_deterministic_and_serializable():
    t = load_dataset("shipyard")
    spec = ConjugateSpec(Family.BINOMIAL, 0.5, 0.5)
    a, b = fit_mom2(t, spec), fit_mom2(t, spec)
    assert np.array_equal(a.coeffs, b.coeffs)
    back = DSModel.from_dict(a.to_dict())
    assert back.representation is Representation.L2 and np.array_equal(back.raw_coeffs, a.raw_coeffs)


def test_exponential_family_fit_runs():
    rng = np.random.default_rng(6)
    theta = np.where(rng.random(300) < 0.5, rng.gamma(20, 0.05, 300), rng.gamma(20, 0.25, 300))
    t = StudyTable("exponential", rng.exponential(1 / theta))
    model = fit_mom2(t, ConjugateSpec(Family.EXPONENTIAL, 2.0, 1.0))
    assert model.m_selected >= 1  # a two-cluster prior departs from a single gamma
