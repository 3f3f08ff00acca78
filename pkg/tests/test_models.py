"""Model contracts against independent monolithic likelihood implementations."""

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import gammaln

from tallmc.errors import InvalidConfigError, InvalidPanelError
from tallmc.models import (
    AR1Model,
    LogisticModel,
    NormalLocationModel,
    SurvivalData,
    WeibullSurvivalModel,
    generate_ar1,
    generate_logistic,
    generate_weibull_panels,
)


# --------------------------------------------------------------------------
# independent reference implementations (different code paths on purpose)


def reference_logistic_loglik(y, x, beta):
    s = x @ beta
    from scipy.special import log_expit

    return float(np.sum(y * log_expit(s) + (1 - y) * log_expit(-s)))


def reference_ar1_loglik(series, theta, parameterization, nu):
    cur, lag = series[1:], series[:-1]
    if parameterization == "m1":
        eps = cur - theta[0] - theta[1] * lag
    else:
        eps = cur - theta[0] - theta[1] * (lag - theta[0])
    return float(np.sum(stats.t.logpdf(eps, df=nu)))


def reference_weibull_subject_loglik(t0, t1, y, x, theta, p):
    beta_l, beta_r, log_tau2 = theta[:p], theta[p:2 * p], theta[-1]
    tau = np.exp(0.5 * log_tau2)

    def conditional(gamma):
        lam = np.exp(gamma + x @ beta_l)
        rho = np.exp(x @ beta_r)
        h = np.exp(-lam * (t1**rho - t0**rho))
        return float(np.prod(np.where(y == 1.0, h, 1.0 - h)))

    def integrand(gamma):
        return conditional(gamma) * stats.norm.pdf(gamma, scale=tau)

    val, _ = integrate.quad(integrand, -8 * tau, 8 * tau, limit=200)
    return float(np.log(val))


# --------------------------------------------------------------------------
# logistic


def test_logistic_contribution_half_at_zero_predictor():
    model = LogisticModel(np.array([1.0, 0.0]), np.zeros((2, 2)))
    vals = model.contributions(np.zeros(2), np.array([0, 1]))
    np.testing.assert_allclose(vals, np.log(0.5), rtol=1e-15)


def test_logistic_large_predictor_stable():
    model = LogisticModel(np.array([1.0]), np.array([[30.0]]))
    val = model.contribution(np.array([1.0]), 0)
    assert val == pytest.approx(-9.357622968840175e-14, rel=1e-6)
    huge = LogisticModel(np.array([1.0, 0.0]), np.array([[700.0], [700.0]]))
    vals = huge.contributions(np.array([1.0]), np.array([0, 1]))
    assert np.all(np.isfinite(vals))


def test_logistic_sum_matches_reference():
    rng = np.random.default_rng(0)
    data = generate_logistic([0.3, -0.8, 0.5], 100, rng)
    model = LogisticModel(data.y, data.x)
    for _ in range(20):
        beta = rng.normal(scale=np.sqrt(10), size=3)
        ref = reference_logistic_loglik(data.y, data.x, beta)
        assert model.full_loglik(beta) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_logistic_point_derivatives_match_generic_glm():
    from tallmc.variates import bernoulli_logit_glm, glm_data_gradient_hessian

    rng = np.random.default_rng(21)
    data = generate_logistic([0.3, -0.8], 20, rng)
    model = LogisticModel(data.y, data.x)
    theta = np.array([0.4, -0.2])
    pts = model.proxy_points()
    grads, hessians = model.point_derivatives(theta, pts)
    spec = bernoulli_logit_glm()
    for i, z in enumerate(pts):
        g_ref, h_ref = glm_data_gradient_hessian(z, theta, spec)
        np.testing.assert_allclose(grads[i], g_ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(hessians[i], h_ref, rtol=1e-10, atol=1e-12)


def test_logistic_always_evaluate_is_the_responders():
    y = np.array([1.0, 0.0, 1.0, 0.0])
    model = LogisticModel(y, np.zeros((4, 1)))
    np.testing.assert_array_equal(model.always_evaluate, [0, 2])
    model2 = LogisticModel(y, np.zeros((4, 1)), subsample_ones=True)
    assert model2.always_evaluate.size == 0


# --------------------------------------------------------------------------
# AR(1)


def test_ar1_t_density_at_mode():
    model = AR1Model(np.array([0.0, 0.0]), parameterization="m1", nu=5.0)
    val = model.contribution(np.array([0.0, 0.0]), 0)
    expected = np.log(np.exp(gammaln(3.0)) / (np.exp(gammaln(2.5)) * np.sqrt(5 * np.pi)))
    assert val == pytest.approx(expected, rel=1e-12)


def test_ar1_population_tiles_series():
    series = np.arange(10.0)
    model = AR1Model(series)
    assert model.n == 9
    np.testing.assert_array_equal(model.current, series[1:])
    np.testing.assert_array_equal(model.lagged, series[:-1])


def test_ar1_m1_m2_reparameterization_identity():
    rng = np.random.default_rng(1)
    data = generate_ar1([0.3, 0.6], 500, rng)
    m1 = AR1Model(data.y, "m1")
    m2 = AR1Model(data.y, "m2")
    theta1 = np.array([0.3, 0.6])
    theta2 = AR1Model.m1_to_m2(theta1)
    assert theta2[0] == pytest.approx(0.75)
    idx = np.arange(m1.n)
    np.testing.assert_allclose(m1.contributions(theta1, idx),
                               m2.contributions(theta2, idx), rtol=1e-12)
    back = AR1Model.m2_to_m1(theta2)
    np.testing.assert_allclose(back, theta1, rtol=1e-14)


def test_ar1_sum_matches_reference():
    rng = np.random.default_rng(2)
    data = generate_ar1([0.3, 0.6], 300, rng, parameterization="m1")
    model = AR1Model(data.y, "m1", nu=5.0)
    for _ in range(20):
        theta = np.array([rng.uniform(-1, 1), rng.uniform(0.05, 0.95)])
        ref = reference_ar1_loglik(data.y, theta, "m1", 5.0)
        assert model.full_loglik(theta) == pytest.approx(ref, rel=1e-10)


def test_ar1_prior_support():
    model = AR1Model(np.zeros(5))
    assert np.isfinite(model.log_prior(np.array([0.0, 0.5])))
    assert model.log_prior(np.array([6.0, 0.5])) == -np.inf
    assert model.log_prior(np.array([0.0, 1.2])) == -np.inf


def test_ar1_data_derivatives_match_finite_differences():
    rng = np.random.default_rng(3)
    model = AR1Model(rng.normal(size=50), "m1")
    theta = np.array([0.2, 0.6])
    pts = rng.normal(size=(10, 2))
    grads, hessians = model.point_derivatives(theta, pts)
    step = 1e-6
    for i, z in enumerate(pts):
        for d in range(2):
            e = np.zeros(2)
            e[d] = step
            fd = (model.point_loglik(theta, (z + e)[None]) -
                  model.point_loglik(theta, (z - e)[None])) / (2 * step)
            assert grads[i, d] == pytest.approx(float(fd[0]), rel=1e-6, abs=1e-8)
        assert np.allclose(hessians[i], hessians[i].T)


# --------------------------------------------------------------------------
# Weibull survival


def _tiny_panel(theta=None, n_subjects=12, seed=4, max_periods=6):
    rng = np.random.default_rng(seed)
    return generate_weibull_panels([-1.2, 0.4], [0.1, -0.1], -1.0,
                                   n_subjects, rng, max_periods=max_periods)


def test_weibull_matches_adaptive_quadrature():
    data = _tiny_panel()
    model = WeibullSurvivalModel(data, step_h=0.01)
    theta = np.array([-1.2, 0.4, 0.1, -0.1, -1.0])
    vals = model.contributions(theta, np.arange(model.n))
    p = model.n_covariates
    for i in range(model.n):
        lo, hi = model.offsets[i], model.offsets[i + 1]
        ref = reference_weibull_subject_loglik(
            model.t_start[lo:hi], model.t_end[lo:hi], model.y[lo:hi],
            model.x[lo], theta, p)
        assert vals[i] == pytest.approx(ref, abs=1e-6)


def test_weibull_single_period_event_quadrature():
    x = np.array([[1.0, 0.5]])
    data = SurvivalData(subject=np.array([0]), period=np.array([1]),
                        t_start=np.array([0.0]), t_end=np.array([1.0]),
                        y=np.array([1.0]), x=x)
    model = WeibullSurvivalModel(data, step_h=0.01)
    theta = np.array([-0.5, 0.2, 0.1, 0.0, -0.5])
    val = model.contribution(theta, 0)
    ref = reference_weibull_subject_loglik(
        np.array([0.0]), np.array([1.0]), np.array([1.0]), x[0], theta, 2)
    assert val == pytest.approx(ref, abs=1e-6)


def test_weibull_tau_to_zero_recovers_conditional():
    data = _tiny_panel()
    base = np.array([-1.2, 0.4, 0.1, -0.1])
    model = WeibullSurvivalModel(data, step_h=0.01)
    tiny_tau = np.append(base, -40.0)  # log tau^2 = -40 -> tau ~ 2e-9

    # conditional log-likelihood at gamma = 0
    def conditional_loglik(i):
        lo, hi = model.offsets[i], model.offsets[i + 1]
        lam = np.exp(model.x[lo:hi] @ base[:2])
        rho = np.exp(model.x[lo:hi] @ base[2:4])
        h = np.exp(-lam * (model.t_end[lo:hi]**rho - model.t_start[lo:hi]**rho))
        return float(np.sum(np.where(model.y[lo:hi] == 1.0, np.log(h),
                                     np.log1p(-h))))

    vals = model.contributions(tiny_tau, np.arange(model.n))
    for i in range(model.n):
        assert vals[i] == pytest.approx(conditional_loglik(i), abs=1e-6)


def test_weibull_trapezoid_error_within_bound():
    data = _tiny_panel(n_subjects=4)
    theta = np.array([-1.2, 0.4, 0.1, -0.1, -1.0])
    model = WeibullSurvivalModel(data, step_h=0.01, coarse_h=0.5)
    fine = model.contributions(theta, np.arange(model.n))
    coarse = model.cheap_contributions(theta, np.arange(model.n))
    # trapezoid convergence is O(h^2): the coarse error against the fine
    # "true value" should be small and shrink by ~4x per halving
    h_sequence = [0.8, 0.4, 0.2]
    errs = []
    for h in h_sequence:
        vals = model.contributions_with_step(theta, np.arange(model.n), h)
        errs.append(np.max(np.abs(vals - fine)))
    assert errs[2] < errs[0]
    # allow slack over the asymptotic 4x factor per halving
    assert errs[2] <= errs[1] / 2.0 + 1e-12
    assert np.max(np.abs(coarse - fine)) < 0.05


def test_weibull_halving_ratio_is_second_order():
    data = _tiny_panel(n_subjects=3, seed=6)
    theta = np.array([-1.2, 0.4, 0.1, -0.1, -1.0])
    model = WeibullSurvivalModel(data, step_h=0.01)
    idx = np.arange(model.n)
    v1 = model.contributions_with_step(theta, idx, 0.4)
    v2 = model.contributions_with_step(theta, idx, 0.2)
    v3 = model.contributions_with_step(theta, idx, 0.1)
    change_12 = np.abs(v2 - v1)
    change_23 = np.abs(v3 - v2)
    # each halving shrinks the change by at most ~4x its successor's bound
    assert np.all(change_23 <= 4.0 * np.maximum(change_12, 1e-14))


def test_weibull_invalid_panel_rejected():
    x = np.ones((2, 1))
    bad = SurvivalData(subject=np.array([0, 0]), period=np.array([1, 2]),
                       t_start=np.array([0.0, 2.0]), t_end=np.array([2.0, 1.5]),
                       y=np.array([1.0, 0.0]), x=x)
    with pytest.raises(InvalidPanelError):
        WeibullSurvivalModel(bad)


def test_weibull_work_units():
    data = _tiny_panel(n_subjects=3)
    model = WeibullSurvivalModel(data, step_h=0.01, coarse_h=0.5, halfwidth=6.0)
    assert model.fine_nodes == 1201
    assert model.coarse_nodes == 25
    assert model.cheap_eval_cost == pytest.approx(25 / 1201)
    assert model.cost_unit == "work"


# --------------------------------------------------------------------------
# generators


def test_generator_determinism():
    a = generate_logistic([0.5, -0.5], 50, np.random.default_rng(9))
    b = generate_logistic([0.5, -0.5], 50, np.random.default_rng(9))
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.x, b.x)


def test_logistic_rate_at_zero_coefficients():
    data = generate_logistic([0.0, 0.0], 40_000, np.random.default_rng(10))
    se = 0.5 / np.sqrt(40_000)
    assert abs(data.y.mean() - 0.5) < 3 * se


def test_ar_generator_starts_at_stationary_mean_m2():
    data = generate_ar1([0.3, 0.99], 100_000, np.random.default_rng(11),
                        parameterization="m2")
    assert data.y[0] == pytest.approx(0.3)
    assert data.y.size == 100_000


def test_ar_generator_near_nonstationary_warns():
    with pytest.warns(UserWarning):
        generate_ar1([0.0, 1.0], 100, np.random.default_rng(12))


def test_generator_rejects_empty():
    with pytest.raises(InvalidConfigError):
        generate_logistic([0.1], 0, np.random.default_rng(0))


def test_survival_roundtrip_csv(tmp_path):
    data = _tiny_panel()
    path = tmp_path / "panel.csv"
    data.save(path)
    loaded = SurvivalData.load(path)
    np.testing.assert_array_equal(loaded.subject, data.subject)
    np.testing.assert_allclose(loaded.x, data.x, rtol=1e-15)
    model_a = WeibullSurvivalModel(data)
    model_b = WeibullSurvivalModel(loaded)
    theta = np.array([-1.2, 0.4, 0.1, -0.1, -1.0])
    np.testing.assert_allclose(model_a.contributions(theta, np.arange(3)),
                               model_b.contributions(theta, np.arange(3)),
                               rtol=1e-14)


def test_corrupted_csv_names_offending_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y\n1.0\nnot_a_number\n")
    from tallmc.models import ARData

    with pytest.raises(InvalidConfigError, match="line 3"):
        ARData.load(path)


def test_normal_conjugate_moments():
    rng = np.random.default_rng(13)
    y = rng.normal(1.0, 1.0, size=200)
    model = NormalLocationModel(y, sigma2=1.0, prior_mean=0.0, prior_variance=10.0)
    mean, var = model.posterior_moments()
    expected_var = 1.0 / (200 / 1.0 + 1 / 10.0)
    assert var == pytest.approx(expected_var, rel=1e-12)
    assert mean == pytest.approx(expected_var * y.sum(), rel=1e-12)
