import math

import numpy as np
import pytest

from ipwmeta import dl_fit, fit, parametric_bootstrap, sandwich_covariance
from ipwmeta.estimation import _g_matrix, default_equation_spec
from ipwmeta.inference import (NotConvergedWarning, dl_sandwich, dl_wald_ci,
                               two_sided_p)
from ipwmeta.selection import dprob_dbeta, prob, selection_statistics

from tests.test_estimation import make_dataset


@pytest.fixture(scope="module")
def clop_fit(clopidogrel):
    return fit(clopidogrel, "logistic1")


@pytest.fixture(scope="module")
def clop_sandwich(clopidogrel, clop_fit):
    return sandwich_covariance(clopidogrel, clop_fit)


def test_dl_wald_golden(clopidogrel):
    dl = dl_fit(clopidogrel)
    (lo, hi), p = dl_wald_ci(dl)
    assert math.exp(lo) == pytest.approx(0.441, abs=0.005)
    assert math.exp(hi) == pytest.approx(0.877, abs=0.005)
    assert p == pytest.approx(0.007, abs=0.002)


def test_sandwich_beta_ci_matches_published_analysis(clopidogrel):
    # asymptotic intervals for the selection parameter, both 1-param families
    sw = sandwich_covariance(clopidogrel, fit(clopidogrel, "logistic1"))
    assert sw.wald_cis[0][0] == pytest.approx(-0.222, abs=0.005)
    assert sw.wald_cis[0][1] == pytest.approx(2.257, abs=0.005)
    sw = sandwich_covariance(clopidogrel, fit(clopidogrel, "mlogistic1"))
    assert sw.wald_cis[0][0] == pytest.approx(-0.114, abs=0.005)
    assert sw.wald_cis[0][1] == pytest.approx(2.733, abs=0.005)


def test_sandwich_symmetric_psd(clop_sandwich):
    cov = clop_sandwich.covariance
    assert np.allclose(cov, cov.T, atol=1e-14)
    eig = np.linalg.eigvalsh(cov)
    assert eig.min() >= -1e-10 * np.trace(cov)


def test_sandwich_tau_boundary_flagged(clop_sandwich):
    assert clop_sandwich.tau_at_boundary
    lo, hi = clop_sandwich.wald_cis[1]
    assert lo == 0.0 and hi > 0.0   # tau2 interval truncated at zero


def test_sandwich_ci_brackets_point(clop_sandwich):
    for th, (lo, hi) in zip(clop_sandwich.theta, clop_sandwich.wald_cis):
        assert lo <= th <= hi


def test_fd_jacobian_matches_analytic_beta_block(clopidogrel):
    for family in ("logistic1", "probit2"):
        est = fit(clopidogrel, family)
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sw = sandwich_covariance(clopidogrel, est)
        nb = est.model.arity
        arr = clopidogrel.arrays()
        t = selection_statistics(arr["effect"], arr["se"], family)
        pi = prob(est.model, t, arr["se"])
        grad = dprob_dbeta(est.model, t, arr["se"])      # (nb, N)
        g_pub = _g_matrix(default_equation_spec(family), arr["n_pub"])
        s = clopidogrel.s_total
        analytic = (g_pub[:, None, :] * grad[None, :, :] / pi ** 2).sum(axis=2) / s
        fd = sw.jacobian[:nb, :nb]
        assert np.max(np.abs(fd - analytic) / np.maximum(np.abs(analytic), 1e-10)) < 1e-4


def test_sandwich_matches_classical_re_variance():
    # pi = 1, M = 0, many equal-sigma studies: se(mu) ~ sqrt((sigma^2+tau2)/N)
    rng = np.random.default_rng(21)
    n = 400
    sigma = 0.5
    tau = 0.3
    y = rng.normal(-0.5, math.hypot(sigma, tau), n)
    ds = make_dataset(y, [sigma] * n, n_pub=[200] * n)
    est = fit(ds, "logistic1")
    assert est.beta_hat[0] == 0.0
    sw = sandwich_covariance(ds, est)
    se_mu = sw.standard_errors[-1]
    expected = math.sqrt((sigma ** 2 + est.tau2_hat) / n)
    assert se_mu == pytest.approx(expected, rel=0.05)


def test_sandwich_warns_on_nonconverged(clopidogrel):
    est = fit(clopidogrel, "probit2")
    assert not est.converged
    with pytest.warns(NotConvergedWarning):
        sandwich_covariance(clopidogrel, est)


def test_dl_sandwich_tau2_interval(clopidogrel):
    dl = dl_fit(clopidogrel)
    sw = dl_sandwich(clopidogrel, dl)
    assert sw.labels == ("tau2", "mu")
    lo, hi = sw.wald_cis[0]
    assert lo == 0.0 and hi > 0.0
    assert np.allclose(sw.covariance, sw.covariance.T)


def test_two_sided_p():
    assert two_sided_p(0.0, 1.0) == pytest.approx(1.0)
    assert two_sided_p(1.959963984540054, 1.0) == pytest.approx(0.05, abs=1e-10)
    assert math.isnan(two_sided_p(1.0, 0.0))


# --------------------------------------------------------------- bootstrap

def test_bootstrap_determinism(clopidogrel, clop_fit):
    b1 = parametric_bootstrap(clopidogrel, clop_fit, b_replicates=300, seed=17,
                              keep_draws=True)
    b2 = parametric_bootstrap(clopidogrel, clop_fit, b_replicates=300, seed=17,
                              keep_draws=True)
    assert b1.ci_mu == b2.ci_mu
    assert b1.ci_tau2 == b2.ci_tau2
    assert b1.sigma_boot_mu == b2.sigma_boot_mu
    assert np.array_equal(b1.replicate_draws["mu"], b2.replicate_draws["mu"])
    b3 = parametric_bootstrap(clopidogrel, clop_fit, b_replicates=300, seed=18)
    assert b3.ci_mu != b1.ci_mu


def test_bootstrap_tau2_interval_floored(clopidogrel, clop_fit):
    assert clop_fit.tau2_hat == 0.0
    boot = parametric_bootstrap(clopidogrel, clop_fit, b_replicates=400, seed=5)
    assert boot.ci_tau2[0] == 0.0
    assert boot.ci_tau2[1] >= 0.0


def test_bootstrap_monotone_level(clopidogrel, clop_fit):
    b95 = parametric_bootstrap(clopidogrel, clop_fit, b_replicates=500, seed=9,
                               level=0.95)
    b99 = parametric_bootstrap(clopidogrel, clop_fit, b_replicates=500, seed=9,
                               level=0.99)
    assert b99.ci_mu[0] <= b95.ci_mu[0]
    assert b99.ci_mu[1] >= b95.ci_mu[1]


def test_bootstrap_ci_near_published_value(clopidogrel, clop_fit):
    boot = parametric_bootstrap(clopidogrel, clop_fit, b_replicates=2000, seed=1)
    assert math.exp(boot.ci_mu[0]) == pytest.approx(0.471, abs=0.03)
    assert math.exp(boot.ci_mu[1]) == pytest.approx(0.953, abs=0.03)
    assert boot.n_failed == 0


def test_bootstrap_two_param_runs(clopidogrel):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = fit(clopidogrel, "probit2")
        boot = parametric_bootstrap(clopidogrel, est, b_replicates=40, seed=2)
    assert boot.ci_mu[0] < est.mu_hat < boot.ci_mu[1]


def test_bootstrap_validates_inputs(clopidogrel, clop_fit):
    with pytest.raises(ValueError):
        parametric_bootstrap(clopidogrel, clop_fit, b_replicates=0, seed=1)
    with pytest.raises(ValueError):
        parametric_bootstrap(clopidogrel, clop_fit, b_replicates=10, seed=1,
                             level=1.5)
