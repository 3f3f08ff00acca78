"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Small instances get exact oracles (full enumeration, closed forms); chain
behavior is reproduced qualitatively at desk scale.  Tolerances are pinned
here, not tuned at runtime.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from tallmc.diagnostics import (
    error_scaling_study,
    inefficiency_factor,
    ks_statistic,
)
from tallmc.engine import (
    EngineConfig,
    acceptance_simplification_check,
    choose_m_for_target_error,
    find_mode_and_curvature,
    run_chain,
)
from tallmc.estimator import (
    CheapVariates,
    ExactVariates,
    estimate_from_terms,
    estimate_loglik,
)
from tallmc.models import (
    AR1Model,
    LogisticModel,
    NormalLocationModel,
    WeibullSurvivalModel,
    generate_ar1,
    generate_logistic,
    generate_weibull_panels,
)
from tallmc.sampling import (
    CorrelationParams,
    Subsample,
    draw_indicators,
    draw_srs,
    kappa_from_phi,
    propose_correlated_indicators,
)
from tallmc.variates import (
    TaylorVariates,
    bernoulli_logit_glm,
    glm_data_gradient_hessian,
    normal_glm,
)


def report(number, description, passed, elapsed, limit):
    status = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {number:02d} {status} ({elapsed:.1f}s / limit {limit:.0f}s) "
          f"- {description}")
    assert passed, f"criterion {number} failed: {description}"
    assert elapsed < limit, f"criterion {number} exceeded its runtime limit"


class FixedPopulation:
    eval_cost = 1.0

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    @property
    def n(self):
        return self.values.size

    def contributions(self, theta, indices):
        return self.values[np.asarray(indices)]


def test_criterion_01_exhaustive_unbiasedness():
    """E[lhat] and E[sigma2hat] exact by full enumeration, n<=6, m<=3."""
    start = time.time()
    rng = np.random.default_rng(1001)
    ok = True
    for n in range(2, 7):
        values = rng.normal(size=n)
        model = FixedPopulation(values)
        ramp = np.arange(1.0, n + 1.0)
        geom = 2.0 ** np.arange(n)
        rand = rng.random(n) + 0.05
        designs = [np.full(n, 1.0 / n), ramp / ramp.sum(),
                   geom / geom.sum(), rand / rand.sum()]
        for m in (2, 3):
            for p in designs:
                mean_val = second = mean_var = 0.0
                for tup in itertools.product(range(n), repeat=m):
                    weight = math.prod(p[k] for k in tup)
                    sub = Subsample(kind="indices",
                                    indices=np.asarray(tup),
                                    probabilities=p[np.asarray(tup)],
                                    expected_size=m)
                    est = estimate_loglik(model, None, sub)
                    mean_val += weight * est.value
                    second += weight * est.value**2
                    mean_var += weight * est.variance
                total = values.sum()
                exact_var = second - mean_val**2
                ok &= math.isclose(mean_val, total, rel_tol=1e-12, abs_tol=1e-12)
                ok &= math.isclose(mean_var, exact_var, rel_tol=1e-9, abs_tol=1e-12)
    report(1, "exhaustive unbiasedness of estimator and its variance",
           ok, time.time() - start, 10.0)


def test_criterion_02_compact_taylor_identity():
    """Compact cluster total equals the brute-force proxy sum, 1e-10 relative."""
    start = time.time()
    rng = np.random.default_rng(1002)
    data = generate_logistic([0.4, 0.9, -0.7], 1000, rng)
    model = LogisticModel(data.y, data.x, subsample_ones=True)
    ok = True
    for epsilon in (0.15, 0.3, 0.5, 0.8, 1.3):
        tv = TaylorVariates(model, epsilon=epsilon)
        for _ in range(20):
            theta = np.array([0.4, 0.9, -0.7]) + 0.4 * rng.standard_normal(3)
            values = tv.evaluate(theta)
            brute = float(values.at(np.arange(model.n)).sum())
            ok &= math.isclose(values.total, brute, rel_tol=1e-10)
    report(2, "compact Taylor proxy total equals brute-force sum",
           ok, time.time() - start, 30.0)


def test_criterion_03_glm_derivatives():
    """GLM data-space gradient and Hessian vs central finite differences."""
    start = time.time()
    rng = np.random.default_rng(1003)
    specs = {"normal": normal_glm(0.9), "logistic": bernoulli_logit_glm()}
    step = 1e-5
    worst = 0.0
    for name, spec in specs.items():
        for _ in range(100):
            beta = rng.normal(scale=0.7, size=2)
            if name == "normal":
                z = rng.normal(size=3)
            else:
                z = np.concatenate([[float(rng.integers(0, 2))],
                                    rng.normal(scale=0.7, size=2)])
            grad, hess = glm_data_gradient_hessian(z, beta, spec)

            def logdensity(zz):
                theta = spec.kinv(float(zz[1:] @ beta))
                return (np.log(spec.h(zz[0])) + np.log(spec.g(theta))
                        + spec.b(theta) * spec.T(zz[0]))

            d = z.size
            fd_grad = np.empty(d)
            fd_hess = np.empty((d, d))
            for i in range(d):
                e = np.zeros(d)
                e[i] = step
                fd_grad[i] = (logdensity(z + e) - logdensity(z - e)) / (2 * step)
                gp, _ = glm_data_gradient_hessian(z + e, beta, spec)
                gm, _ = glm_data_gradient_hessian(z - e, beta, spec)
                fd_hess[i] = (gp - gm) / (2 * step)
            gscale = max(np.max(np.abs(fd_grad)), 1.0)
            hscale = max(np.max(np.abs(fd_hess)), 1.0)
            worst = max(worst, np.max(np.abs(grad - fd_grad)) / gscale,
                        np.max(np.abs(hess - 0.5 * (fd_hess + fd_hess.T))) / hscale)
    report(3, f"GLM derivatives vs finite differences (worst {worst:.2e})",
           worst <= 1e-5, time.time() - start, 10.0)


def test_criterion_04_correlated_indicators():
    """Transition frequencies, marginal preservation, kappa-phi conversion."""
    start = time.time()
    ok = True
    rng = np.random.default_rng(1004)
    n = 1_000_000
    for kappa, fraction in ((0.9, 0.05), (0.99, 0.1), (0.2, 0.2)):
        params = CorrelationParams(kappa=kappa, fraction=fraction)
        current = draw_indicators(n, fraction, rng)
        proposed = propose_correlated_indicators(current, params, rng)
        n1 = int(current.indicators.sum())
        stay1 = float(np.mean(proposed.indicators[current.indicators]))
        marginal = float(np.mean(proposed.indicators))
        ok &= abs(stay1 - kappa) <= 3 * math.sqrt(kappa * (1 - kappa) / n1)
        ok &= abs(marginal - fraction) <= 3 * math.sqrt(
            fraction * (1 - fraction) / n)
    # conversion endpoints are exact
    ok &= kappa_from_phi(0.0, 0.05) == 0.05
    ok &= kappa_from_phi(0.0, 0.2) == 0.2
    ok &= kappa_from_phi(1.0, 0.05) == 1.0
    # quadrature vs Gaussian-copula simulation at phi = 0.99
    phi, fraction = 0.99, 0.05
    threshold = norm.ppf(fraction)
    both = first = 0
    chunk = 2_000_000
    for _ in range(5):  # 1e7 pairs total
        vc = rng.standard_normal(chunk)
        vp = phi * vc + math.sqrt(1 - phi**2) * rng.standard_normal(chunk)
        uc = vc <= threshold
        both += int(np.sum(uc & (vp <= threshold)))
        first += int(np.sum(uc))
    kappa_mc = both / first
    se = math.sqrt(kappa_mc * (1 - kappa_mc) / first)
    ok &= abs(kappa_from_phi(phi, fraction) - kappa_mc) <= 3 * se
    report(4, "correlated indicator transitions and kappa-phi conversion",
           ok, time.time() - start, 60.0)


def test_criterion_05_error_heuristic_inversion():
    """m for a 1% fractional error at variance 7, plus a simulation check."""
    start = time.time()
    m = choose_m_for_target_error(7.0, 0.01)
    ok = m == 1232
    # simulate the variance estimate with its chi-square spread; the normal
    # part of the estimator integrates out exactly (its conditional mean is
    # exp(sigma2/2)), leaving a low-noise estimate of the same expectation
    rng = np.random.default_rng(1005)
    sigma2 = 7.0
    reps = 1_000_000
    sigma2_hat = sigma2 * rng.chisquare(m - 1, size=reps) / (m - 1)
    ratio = np.exp(0.5 * (sigma2 - sigma2_hat))
    error = abs(float(ratio.mean()) - 1.0)
    ok &= 0.005 <= error <= 0.02
    report(5, f"error-heuristic inversion (m={m}, simulated error {error:.4f})",
           ok, time.time() - start, 60.0)


def test_criterion_06_acceptance_identity():
    """Full mixture-proposal ratio equals the simplified one, 1e-12 relative."""
    start = time.time()
    rng = np.random.default_rng(1006)
    worst = 0.0
    for _ in range(10_000):
        u_equal = bool(rng.random() < 0.2)
        full, simplified = acceptance_simplification_check(
            log_phat_p=rng.normal(scale=5),
            log_phat_c=rng.normal(scale=5),
            log_prior_p=rng.normal(),
            log_prior_c=rng.normal(),
            log_pu_p=-rng.uniform(0.1, 30),
            log_pu_c=-rng.uniform(0.1, 30),
            omega=rng.uniform(0.01, 0.99),
            log_q_theta_fwd=rng.normal(),
            log_q_theta_rev=rng.normal(),
            u_equal=u_equal)
        worst = max(worst, abs(full - simplified) / max(abs(simplified), 1e-300))
    report(6, f"joint-proposal acceptance ratio identity (worst {worst:.2e})",
           worst <= 1e-12, time.time() - start, 5.0)


def test_criterion_07_degeneracy_equivalence():
    """Perfect variates reproduce the exact chain bit for bit over 1e4 steps."""
    start = time.time()
    rng = np.random.default_rng(1007)
    model = NormalLocationModel(rng.normal(0.5, 1.0, size=100), sigma2=1.0)
    mode_info = find_mode_and_curvature(model)
    shared = dict(iterations=10_000, burnin_fraction=0.1, seed=77,
                  target_acceptance=0.35)
    exact = run_chain(model, EngineConfig(estimator="exact", **shared),
                      mode_info=mode_info)
    pm = run_chain(model,
                   EngineConfig(estimator="de-srs", m=5, omega=1.0, **shared),
                   variates=ExactVariates(model), mode_info=mode_info)
    ok = bool(np.array_equal(exact.accepted, pm.accepted))
    ok &= bool(np.array_equal(exact.theta, pm.theta))
    ok &= bool(np.all(pm.sigma2[np.isfinite(pm.sigma2)] == 0.0))
    report(7, "perfect-variate chain matches exact MH decisions bitwise",
           ok, time.time() - start, 60.0)


@pytest.fixture(scope="module")
def ar_m1_setup():
    rng = np.random.default_rng(81)
    data = generate_ar1([0.3, 0.6], 10_000, rng)
    model = AR1Model(data.y, "m1", nu=5.0)
    mode_info = find_mode_and_curvature(model)
    return model, mode_info


def test_criterion_08_posterior_accuracy(ar_m1_setup):
    """AR M1 subsampled posterior within 0.2 SD and KS 0.05 of exact MH."""
    start = time.time()
    model, mode_info = ar_m1_setup
    exact = run_chain(model, EngineConfig(iterations=50_000, estimator="exact",
                                          seed=801), mode_info=mode_info)
    tv = TaylorVariates(model, epsilon=0.15)
    pm = run_chain(model,
                   EngineConfig(iterations=50_000, estimator="de-srs",
                                fraction=0.05, omega=1.0, seed=802),
                   variates=tv, mode_info=mode_info)
    ok = True
    stats = []
    for j in range(model.dim):
        a = pm.draws()[:, j]
        b = exact.draws()[:, j]
        diff = abs(a.mean() - b.mean()) / b.std()
        ks = ks_statistic(a, b)
        stats.append((diff, ks))
        ok &= diff <= 0.2 and ks <= 0.05
    detail = ", ".join(f"|d|={d:.3f} ks={k:.3f}" for d, k in stats)
    report(8, f"posterior accuracy vs exact MH ({detail})",
           ok, time.time() - start, 600.0)


def test_criterion_09_sampling_fraction_ordering(ar_m1_setup):
    """Correlated subsamples need a smaller mean sampling fraction than
    uncorrelated ones when each targets its prescribed estimator variance
    (2.1 uncorrelated, 7 correlated)."""
    start = time.time()
    model, mode_info = ar_m1_setup
    tv = TaylorVariates(model, epsilon=0.3)

    # pilot at the mode fixes the correlated chain's subsample size from its
    # variance target; the uncorrelated chain adapts to its target per step
    pilot = draw_srs(model.n, 2000, np.random.default_rng(901))
    est = estimate_loglik(model, mode_info[0], pilot, variates=tv)
    m_corr = max(2, math.ceil(est.subsample_size * est.variance / 7.0))

    uncorr = run_chain(model,
                       EngineConfig(iterations=4000, estimator="de-srs", m=100,
                                    omega=1.0, v_max=2.1, seed=902),
                       variates=tv, mode_info=mode_info)
    corr = run_chain(model,
                     EngineConfig(iterations=4000, estimator="de-srs", m=m_corr,
                                  correlation=CorrelationParams(
                                      kappa=0.99, fraction=m_corr / model.n),
                                  seed=902),
                     variates=tv, mode_info=mode_info)
    f_corr = corr.mean_sampling_fraction()
    f_uncorr = uncorr.mean_sampling_fraction()
    ok = f_corr < f_uncorr
    report(9, f"mean sampling fraction: correlated {f_corr:.3f} < "
              f"uncorrelated {f_uncorr:.3f}",
           ok, time.time() - start, 900.0)


def test_criterion_10_infrequent_update_benefit():
    """Rare subsample refreshes lower the inefficiency for every parameter."""
    start = time.time()
    rng = np.random.default_rng(101)
    data = generate_logistic([-2.0, 0.8, -0.5], 10_000, rng)
    model = LogisticModel(data.y, data.x)
    mode_info = find_mode_and_curvature(model)
    pool = np.setdiff1d(np.arange(model.n), model.always_evaluate)
    tv = TaylorVariates(model, epsilon=1.2, subset=pool)
    ifs = {}
    for omega in (1.0, 0.01):
        trace = run_chain(model,
                          EngineConfig(iterations=20_000, estimator="de-srs",
                                       proposal="imh", fraction=0.05,
                                       omega=omega, seed=7),
                          variates=tv, pool=pool, mode_info=mode_info)
        draws = trace.draws()
        ifs[omega] = [inefficiency_factor(draws[:, j]) for j in range(model.dim)]
    ok = all(a <= b for a, b in zip(ifs[0.01], ifs[1.0]))
    detail = (f"IF(0.01)={[round(v, 1) for v in ifs[0.01]]} vs "
              f"IF(1)={[round(v, 1) for v in ifs[1.0]]}")
    report(10, f"infrequent updates improve efficiency ({detail})",
           ok, time.time() - start, 600.0)


def test_criterion_11_error_scaling():
    """Fractional errors shrink with m; fitted log-log slope <= -0.4."""
    start = time.time()
    rng = np.random.default_rng(111)
    data = generate_logistic([0.3, 0.7, -0.4], 2000, rng)
    model = LogisticModel(data.y, data.x, subsample_ones=True)
    mode_info = find_mode_and_curvature(model)
    tv = TaylorVariates(model, epsilon=1.2)
    thetas = [mode_info[0],
              mode_info[0] + np.array([0.35, -0.3, 0.25]),
              mode_info[0] + np.array([-0.3, 0.27, 0.24])]
    out = error_scaling_study(model, thetas, [25, 50, 100, 200, 400, 800, 1600],
                              10_000, np.random.default_rng(1111), variates=tv)
    good = total = 0
    for t in range(len(thetas)):
        errs = [r["median_error"] for r in out["rows"] if r["theta_index"] == t]
        for a, b in zip(errs, errs[1:]):
            total += 1
            good += b <= a
    trend = good / total
    slope_ok = all(s <= -0.4 for s in out["median_slopes"])
    ok = trend >= 0.8 and slope_ok
    report(11, f"error scaling (trend {good}/{total}, "
               f"slopes {[round(s, 2) for s in out['median_slopes']]})",
           ok, time.time() - start, 600.0)


def test_criterion_12_adaptive_subsample_size():
    """Weibull run with v_max=1 keeps the variance at bay via adaptation."""
    start = time.time()
    rng = np.random.default_rng(121)
    data = generate_weibull_panels([-1.5, 0.5], [0.1, 0.0], -1.0, 200, rng,
                                   max_periods=10)
    model = WeibullSurvivalModel(data, step_h=0.01, coarse_h=0.5)
    mode_info = find_mode_and_curvature(model)
    trace = run_chain(model,
                      EngineConfig(iterations=2000, burnin_fraction=0.2,
                                   estimator="de-srs", m=2, omega=1.0,
                                   v_max=1.0, seed=5, target_acceptance=0.23),
                      variates=CheapVariates(model), mode_info=mode_info)
    post = slice(trace.burnin, trace.completed)
    sigma2 = trace.sigma2[post]
    evaluated = np.isfinite(sigma2)
    frac_ok = float(np.mean(sigma2[evaluated] <= 1.2))
    rounds = trace.adapt_rounds[post]
    # every adaptation round is recorded alongside the pre-adaptation variance
    recorded = bool(np.all(np.isfinite(trace.sigma2_first[post][evaluated])))
    triggered = int(rounds.max()) >= 1
    ok = frac_ok >= 0.95 and recorded and triggered
    report(12, f"adaptive subsample sizing (sigma2<=1.2 in {frac_ok:.1%}, "
               f"max rounds {int(rounds.max())})",
           ok, time.time() - start, 900.0)


def test_criterion_13_inefficiency_oracle():
    """IF estimates match the closed-form AR(1) value."""
    start = time.time()
    rng = np.random.default_rng(131)
    ok = True
    values = {}
    for rho, tol in ((0.5, 0.10), (0.9, 0.15)):
        innovations = rng.standard_normal(100_000)
        x = np.empty(100_000)
        x[0] = innovations[0] / math.sqrt(1 - rho**2)
        for t in range(1, x.size):
            x[t] = rho * x[t - 1] + innovations[t]
        estimate = inefficiency_factor(x)
        target = (1 + rho) / (1 - rho)
        values[rho] = estimate
        ok &= abs(estimate - target) <= tol * target
    report(13, f"inefficiency-factor oracle (IF(0.5)={values[0.5]:.2f}, "
               f"IF(0.9)={values[0.9]:.2f})",
           ok, time.time() - start, 30.0)
