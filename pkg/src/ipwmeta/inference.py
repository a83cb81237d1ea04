"""Uncertainty quantification: sandwich asymptotics and parametric bootstrap.

The stacked per-study estimating functions for theta = (beta, tau2, mu) are

    U_i^beta = {1 - D_i/pi_i(beta)} g(n_i)
    U_i^tau2 = D_i/(sigma_i^2 pi_i) {(y_i - mu)^2 - tau2} - 1
    U_i^mu   = D_i/[(sigma_i^2 + tau2) pi_i] (y_i - mu)

evaluated at the fitted values; the covariance of theta-hat is the usual
M-estimation sandwich J^-1 M J^-T / S with J the finite-difference Jacobian
of the mean score.  The mu-score's variance weights use max(tau2, 0): the
mean estimator is always fed the truncated between-study variance, and at
the tau2 = 0 boundary this one-sided evaluation is what keeps the Wald
interval for mu in line with the moment estimator actually used (interior
tau2 is unaffected).  Boundary cases are flagged via ``tau_at_boundary``.

The parametric bootstrap redraws published effects from
N(mu_hat, sigma_i^2 + tau2_hat), re-solves beta on each replicate (keeping
every D_i fixed), recomputes tau2 and mu, and builds intervals from the
empirical quantiles of the standardized draws.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ipwmeta import backend
from ipwmeta import _kernels_numpy as _knp
from ipwmeta.estimation import (EstimatingEquationSpec, DlEstimates,
                                PointEstimates, default_equation_spec,
                                _g_matrix)
from ipwmeta.model import MetaDataset
from ipwmeta.selection import (SelectionModel, family_arity, family_code,
                               prob, selection_statistics)


class SingularJacobianError(RuntimeError):
    """The sandwich Jacobian is numerically singular; no CIs available."""


class NotConvergedWarning(UserWarning):
    """Inference requested at a fit whose solver did not converge."""


class TooManyFailuresWarning(UserWarning):
    """More than 10% of bootstrap replicates failed to solve."""


@dataclass(frozen=True)
class SandwichResult:
    labels: tuple
    theta: np.ndarray
    covariance: np.ndarray
    standard_errors: np.ndarray
    wald_cis: tuple
    wald_p_mu: float
    wald_p_beta1: float | None
    level: float
    tau_at_boundary: bool
    jacobian: np.ndarray | None = None


@dataclass(frozen=True)
class BootstrapResult:
    b_replicates: int
    sigma_boot_mu: float
    sigma_boot_tau2: float
    ci_mu: tuple
    ci_tau2: tuple
    seed: int
    n_failed: int
    level: float
    replicate_draws: dict | None = None


def _z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    return float(ndtri(0.5 + level / 2.0))


def two_sided_p(estimate: float, se: float) -> float:
    if se <= 0 or not np.isfinite(se):
        return float("nan")
    return float(2.0 * (1.0 - ndtr(abs(estimate) / se)))


def dl_wald_ci(dl: DlEstimates, level: float = 0.95):
    """Classical Wald interval and p-value for the DL mean."""
    z = _z(level)
    return ((dl.mu_hat - z * dl.se_mu, dl.mu_hat + z * dl.se_mu),
            two_sided_p(dl.mu_hat, dl.se_mu))


def _sandwich_core(score_fn, theta):
    """Covariance J^-1 M J^-T / S from a per-study score function."""
    k = len(theta)
    scores = score_fn(theta)          # (k, S)
    s = scores.shape[1]
    meat = scores @ scores.T / s
    jac = np.empty((k, k))
    for j in range(k):
        h = 1e-6 * (1.0 + abs(theta[j]))
        up = theta.copy(); up[j] += h
        dn = theta.copy(); dn[j] -= h
        jac[:, j] = (score_fn(up).sum(axis=1) - score_fn(dn).sum(axis=1)) / (2.0 * h * s)
    det = np.linalg.det(jac)
    scale = np.prod(np.maximum(np.linalg.norm(jac, axis=1), 1e-30))
    if not np.isfinite(det) or abs(det) <= 1e-12 * scale:
        raise SingularJacobianError(f"|det J| = {abs(det):.3g} below 1e-12 of scale")
    jinv = np.linalg.inv(jac)
    cov = jinv @ meat @ jinv.T / s
    return cov, jac


def sandwich_covariance(dataset: MetaDataset, estimates: PointEstimates,
                        family: str | None = None,
                        spec: EstimatingEquationSpec | None = None,
                        level: float = 0.95) -> SandwichResult:
    """Sandwich covariance and Wald intervals for (beta, tau2, mu)."""
    family = family or estimates.model.family
    if spec is None:
        spec = default_equation_spec(family)
    alternative = estimates.alternative
    if not estimates.converged:
        warnings.warn("sandwich evaluated at a non-converged fit; intervals "
                      "are not trustworthy", NotConvergedWarning)
    z = _z(level)
    arr = dataset.arrays()
    y, se = arr["effect"], arr["se"]
    t = selection_statistics(y, se, family, alternative)
    g_all = _g_matrix(spec, arr["n_all"])
    g_pub = _g_matrix(spec, arr["n_pub"])
    pub = arr["published"]
    nb = estimates.model.arity
    s_total = dataset.s_total

    def score_fn(theta):
        beta, tau2, mu = theta[:nb], theta[nb], theta[nb + 1]
        pi = prob(SelectionModel(family, beta), t, se)
        rows = np.zeros((nb + 2, s_total))
        rows[:nb, :] = g_all
        rows[:nb, pub] -= g_pub / pi
        r_tau = (1.0 / (se ** 2 * pi)) * ((y - mu) ** 2 - tau2)
        rows[nb, :] = -1.0
        rows[nb, pub] += r_tau
        rows[nb + 1, pub] = (y - mu) / ((se ** 2 + max(tau2, 0.0)) * pi)
        return rows

    theta = np.concatenate([estimates.beta_hat,
                            [estimates.tau2_hat, estimates.mu_hat]])
    cov, jac = _sandwich_core(score_fn, theta)
    ses = np.sqrt(np.maximum(np.diag(cov), 0.0))
    cis = []
    for kdx, (th, sk) in enumerate(zip(theta, ses)):
        lo, hi = th - z * sk, th + z * sk
        if kdx == nb:  # tau2 cannot be negative
            lo = max(lo, 0.0)
        cis.append((float(lo), float(hi)))
    beta_labels = ("beta0", "beta1") if nb == 2 else ("beta",)
    labels = beta_labels + ("tau2", "mu")
    return SandwichResult(labels=labels, theta=theta, covariance=cov,
                          standard_errors=ses, wald_cis=tuple(cis),
                          wald_p_mu=two_sided_p(estimates.mu_hat, ses[-1]),
                          wald_p_beta1=two_sided_p(theta[nb - 1], ses[nb - 1]),
                          level=level,
                          tau_at_boundary=bool(estimates.tau2_hat == 0.0),
                          jacobian=jac)


def dl_sandwich(dataset: MetaDataset, dl: DlEstimates,
                level: float = 0.95) -> SandwichResult:
    """M-estimation interval for (tau2, mu) of the unadjusted DL fit.

    Same stacked scores with pi = 1 over the published studies only; used
    to report a tau2 interval for the baseline row.
    """
    z = _z(level)
    arr = dataset.arrays()
    y, se = arr["effect"], arr["se"]

    def score_fn(theta):
        tau2, mu = theta
        return np.vstack([
            (1.0 / se ** 2) * ((y - mu) ** 2 - tau2) - 1.0,
            (y - mu) / (se ** 2 + max(tau2, 0.0)),
        ])

    theta = np.array([dl.tau2_hat, dl.mu_hat])
    cov, jac = _sandwich_core(score_fn, theta)
    ses = np.sqrt(np.maximum(np.diag(cov), 0.0))
    cis = ((max(theta[0] - z * ses[0], 0.0), theta[0] + z * ses[0]),
           (theta[1] - z * ses[1], theta[1] + z * ses[1]))
    return SandwichResult(labels=("tau2", "mu"), theta=theta, covariance=cov,
                          standard_errors=ses, wald_cis=cis,
                          wald_p_mu=two_sided_p(dl.mu_hat, ses[1]),
                          wald_p_beta1=None, level=level,
                          tau_at_boundary=bool(dl.tau2_hat == 0.0),
                          jacobian=jac)


def _batch_tau2_mu(fam, beta_rows, t_mat, y_mat, se, s_total):
    """Vectorized tau2 and mu over bootstrap replicates (rows)."""
    if fam <= 1:
        pi = _knp._pi_one(fam, beta_rows[:, :1], t_mat, se)
    else:
        pi = _knp._pi_two(fam, beta_rows[:, :1], beta_rows[:, 1:2], t_mat)
    w2 = 1.0 / (se ** 2 * pi)
    sw2 = np.sum(w2, axis=1)
    mu_f = np.sum(w2 * y_mat, axis=1) / sw2
    q = np.sum(w2 * (y_mat - mu_f[:, None]) ** 2, axis=1)
    a_s = np.sum(1.0 / (se ** 4 * pi), axis=1) / s_total
    b_s = sw2 / s_total
    denom = sw2 - a_s / b_s
    with np.errstate(divide="ignore", invalid="ignore"):
        tau2 = np.where(denom > 0, (q - (s_total - 1)) / denom, 0.0)
    tau2 = np.maximum(tau2, 0.0)
    wr = 1.0 / ((se ** 2 + tau2[:, None]) * pi)
    mu = np.sum(wr * y_mat, axis=1) / np.sum(wr, axis=1)
    return tau2, mu


def _quantile_ci(center, draws, sigma, level):
    if sigma == 0.0:
        return (float(center), float(center))
    zq = np.quantile((draws - draws.mean()) / sigma,
                     [0.5 - level / 2.0, 0.5 + level / 2.0])
    return (float(center + zq[0] * sigma), float(center + zq[1] * sigma))


def parametric_bootstrap(dataset: MetaDataset, estimates: PointEstimates,
                         family: str | None = None,
                         spec: EstimatingEquationSpec | None = None,
                         b_replicates: int = 1000, seed: int = 0,
                         level: float = 0.95,
                         keep_draws: bool = False) -> BootstrapResult:
    """Parametric bootstrap intervals for mu and tau2.

    Deterministic given (inputs, seed, b_replicates): the published-effect
    draws come from a single generator keyed by ``seed``; replicate b is row
    b of the draw matrix.  One-parameter replicates whose equation has no
    root are dropped and counted in ``n_failed``; two-parameter replicates
    always return their best point (converged or not), matching the main
    solver's contract.  B of at least a few hundred is needed before the
    quantile intervals mean much.
    """
    if b_replicates < 1:
        raise ValueError("b_replicates must be >= 1")
    _z(level)  # validates the level
    family = family or estimates.model.family
    if spec is None:
        spec = default_equation_spec(family)
    alternative = estimates.alternative
    if not estimates.converged:
        warnings.warn("bootstrap around a non-converged fit", NotConvergedWarning)

    arr = dataset.arrays()
    se = arr["se"]
    fam = family_code(family)
    sqrtn_pub = np.sqrt(arr["n_pub"])
    sqrtn_total = float(np.sum(np.sqrt(arr["n_all"])))
    s_total = float(dataset.s_total)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    scale = np.sqrt(se ** 2 + estimates.tau2_hat)
    y_mat = estimates.mu_hat + scale * rng.standard_normal((b_replicates, len(se)))
    t_mat = selection_statistics(y_mat, se, family, alternative)

    if family_arity(family) == 1:
        beta, ok, _, _ = backend.solve_one_param_batch(
            fam, np.ascontiguousarray(t_mat), np.ascontiguousarray(se),
            np.ascontiguousarray(sqrtn_pub), sqrtn_total)
        beta_rows = beta[:, None]
    else:
        beta_rows = np.empty((b_replicates, 2))
        ok = np.ones(b_replicates, dtype=bool)
        for b in range(b_replicates):
            b0, b1, _, _ = backend.solve_two_param_multistart(
                fam, np.ascontiguousarray(t_mat[b]), np.ascontiguousarray(se),
                np.ascontiguousarray(sqrtn_pub), s_total, sqrtn_total, 20.0)
            beta_rows[b] = (b0, b1)
            ok[b] = np.isfinite(b0) and np.isfinite(b1)

    n_failed = int(b_replicates - ok.sum())
    if n_failed > b_replicates / 10.0:
        warnings.warn(f"{n_failed}/{b_replicates} bootstrap replicates failed "
                      "to solve; intervals may be unreliable", TooManyFailuresWarning)
    if ok.sum() == 0:
        raise RuntimeError("every bootstrap replicate failed to solve")

    tau2_d, mu_d = _batch_tau2_mu(fam, beta_rows[ok], t_mat[ok], y_mat[ok],
                                  se, s_total)
    sig_mu = float(np.sqrt(np.mean((mu_d - mu_d.mean()) ** 2)))
    sig_tau2 = float(np.sqrt(np.mean((tau2_d - tau2_d.mean()) ** 2)))
    ci_mu = _quantile_ci(estimates.mu_hat, mu_d, sig_mu, level)
    lo_t, hi_t = _quantile_ci(estimates.tau2_hat, tau2_d, sig_tau2, level)
    ci_tau2 = (max(lo_t, 0.0), max(hi_t, 0.0))
    draws = {"mu": mu_d, "tau2": tau2_d} if keep_draws else None
    return BootstrapResult(b_replicates=b_replicates, sigma_boot_mu=sig_mu,
                           sigma_boot_tau2=sig_tau2, ci_mu=ci_mu,
                           ci_tau2=ci_tau2, seed=seed, n_failed=n_failed,
                           level=level, replicate_draws=draws)
