"""Point estimation: DerSimonian-Laird baseline and the IPW estimators.

The selection parameters solve the registry-calibrated estimating equation

    U(beta) = sum_i {1 - D_i/pi_i(beta)} g(n_i) = 0,

with g(n) = sqrt(n) for one-parameter families and g(n) = (1, sqrt(n)) for
two-parameter families.  Unpublished studies contribute g(n_i) exactly; their
pi is never evaluated.  With beta in hand, the selection-adjusted moment
estimator of the between-study variance and the weighted means follow in
closed form.

One-parameter equations are monotone in beta and are solved by bracketed
bisection plus a short Newton polish.  Two-parameter systems are searched by
a multi-start Nelder-Mead on |U_0| + |U_1| (with a damped-Newton polish on
the smooth system) inside the box |beta_k| <= 20; on small datasets the two
components can be nearly collinear and admit no exact root, in which case
the best point is returned with ``converged=False``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ipwmeta import backend
from ipwmeta.model import MetaDataset
from ipwmeta.selection import (SelectionModel, family_arity, family_code,
                               prob, selection_statistics)

BETA_BOUND = 20.0
RESID_TOL_FACTOR = 1e-8   # 1-parameter: |U| <= factor * sum sqrt(n)
OBJ_TOL_FACTOR = 1e-6     # 2-parameter: |U0|+|U1| <= factor * (S + sum sqrt(n))


class NoRootError(RuntimeError):
    """U(beta) has constant sign on the maximal bracket."""


class DegenerateDenominatorWarning(UserWarning):
    """The moment-equation denominator was <= 0; tau2 reported as 0."""


@dataclass(frozen=True)
class EstimatingEquationSpec:
    """Choice of g(n) in the estimating equation."""

    g_kind: str = "sqrt_n"  # "sqrt_n" (arity 1) or "one_and_sqrt_n" (arity 2)

    def __post_init__(self):
        if self.g_kind not in ("sqrt_n", "one_and_sqrt_n"):
            raise ValueError(f"unknown g_kind {self.g_kind!r}")

    @property
    def arity(self) -> int:
        return 1 if self.g_kind == "sqrt_n" else 2


def default_equation_spec(family: str) -> EstimatingEquationSpec:
    return EstimatingEquationSpec("sqrt_n" if family_arity(family) == 1
                                  else "one_and_sqrt_n")


@dataclass(frozen=True)
class SolverReport:
    method: str
    iterations: int
    residual: float
    tolerance: float
    converged: bool
    n_starts: int = 1
    at_bound: bool = False


@dataclass(frozen=True)
class DlEstimates:
    mu_hat: float
    tau2_hat: float
    q: float
    mu_fixed: float
    i2: float
    se_mu: float  # classical Wald standard error of mu_hat


@dataclass(frozen=True)
class PointEstimates:
    beta_hat: np.ndarray
    tau2_hat: float
    mu_hat: float
    mu_fixed_hat: float
    q_ipw: float
    h2_ipw: float
    i2_ipw: float
    converged: bool
    solver_report: SolverReport
    model: SelectionModel | None = None
    alternative: str = "less"


def dl_fit(dataset: MetaDataset) -> DlEstimates:
    """DerSimonian-Laird random-effects fit on the published studies."""
    arr = dataset.arrays()
    y, se = arr["effect"], arr["se"]
    n = len(y)
    if n < 2:
        raise ValueError("DL fit needs at least two published studies")
    w = se ** -2.0
    mu_fixed = float(np.sum(w * y) / np.sum(w))
    q = float(np.sum(w * (y - mu_fixed) ** 2))
    denom = np.sum(w) - np.sum(w ** 2) / np.sum(w)
    tau2 = max(0.0, (q - (n - 1)) / denom)
    wr = 1.0 / (se ** 2 + tau2)
    mu = float(np.sum(wr * y) / np.sum(wr))
    i2 = max(0.0, (q - (n - 1)) / q) if q > 0 else 0.0
    return DlEstimates(mu_hat=mu, tau2_hat=float(tau2), q=q, mu_fixed=mu_fixed,
                       i2=float(i2), se_mu=float(np.sqrt(1.0 / np.sum(wr))))


def _g_matrix(spec: EstimatingEquationSpec, n: np.ndarray) -> np.ndarray:
    """g(n) stacked as shape (arity, len(n))."""
    if spec.arity == 1:
        return np.sqrt(n)[None, :]
    return np.vstack([np.ones_like(n), np.sqrt(n)])


def u_beta(dataset: MetaDataset, model: SelectionModel,
           spec: EstimatingEquationSpec | None = None,
           alternative: str = "less") -> np.ndarray:
    """Estimating-function value U(beta), one entry per component of g."""
    if spec is None:
        spec = default_equation_spec(model.family)
    if spec.arity != model.arity:
        raise ValueError("estimating-equation arity must match the selection family")
    arr = dataset.arrays()
    t = selection_statistics(arr["effect"], arr["se"], model.family, alternative)
    pi = prob(model, t, arr["se"])
    g_all = _g_matrix(spec, arr["n_all"])
    g_pub = _g_matrix(spec, arr["n_pub"])
    return g_all.sum(axis=1) - (g_pub / pi).sum(axis=1)


def solve_beta_1param(dataset: MetaDataset, family: str,
                      spec: EstimatingEquationSpec | None = None,
                      alternative: str = "less"):
    """Root of the one-parameter estimating equation.

    Returns (beta_hat, SolverReport); raises NoRootError when U keeps one
    sign on the maximal bracket.
    """
    if family_arity(family) != 1:
        raise ValueError(f"{family} is not a one-parameter family")
    if spec is not None and spec.arity != 1:
        raise ValueError("spec arity must be 1")
    arr = dataset.arrays()
    t = selection_statistics(arr["effect"], arr["se"], family, alternative)
    sqrtn_total = float(np.sum(np.sqrt(arr["n_all"])))
    beta, ok, resid, iters = backend.solve_one_param_batch(
        family_code(family), np.ascontiguousarray(t[None, :]),
        np.ascontiguousarray(arr["se"]), np.ascontiguousarray(np.sqrt(arr["n_pub"])),
        sqrtn_total)
    tol = RESID_TOL_FACTOR * sqrtn_total
    if not ok[0]:
        raise NoRootError(f"U(beta) has constant sign on the maximal bracket "
                          f"(|U| = {resid[0]:.3g} > tol = {tol:.3g})")
    report = SolverReport(method="bisect+newton", iterations=int(iters),
                          residual=float(resid[0]), tolerance=tol, converged=True)
    return float(beta[0]), report


def solve_beta_2param(dataset: MetaDataset, family: str,
                      spec: EstimatingEquationSpec | None = None,
                      alternative: str = "less"):
    """Best point of the two-parameter system under |U0| + |U1|.

    Always returns (beta_hat, SolverReport); ``report.converged`` is False
    when the objective stays above tolerance (no root) or the solution sits
    on the box bound.
    """
    if family_arity(family) != 2:
        raise ValueError(f"{family} is not a two-parameter family")
    if spec is not None and spec.arity != 2:
        raise ValueError("spec arity must be 2")
    arr = dataset.arrays()
    t = selection_statistics(arr["effect"], arr["se"], family, alternative)
    sqrtn_total = float(np.sum(np.sqrt(arr["n_all"])))
    s_total = float(dataset.s_total)
    b0, b1, obj, iters = backend.solve_two_param_multistart(
        family_code(family), np.ascontiguousarray(t),
        np.ascontiguousarray(arr["se"]), np.ascontiguousarray(np.sqrt(arr["n_pub"])),
        s_total, sqrtn_total, BETA_BOUND)
    tol = OBJ_TOL_FACTOR * (s_total + sqrtn_total)
    at_bound = bool(max(abs(b0), abs(b1)) >= BETA_BOUND - 1e-6)
    converged = bool(obj <= tol) and not at_bound
    report = SolverReport(method="nelder-mead+newton", iterations=int(iters),
                          residual=float(obj), tolerance=tol,
                          converged=converged, n_starts=9, at_bound=at_bound)
    return np.array([b0, b1]), report


def _pi_published(dataset: MetaDataset, model: SelectionModel, alternative: str):
    arr = dataset.arrays()
    t = selection_statistics(arr["effect"], arr["se"], model.family, alternative)
    return arr["effect"], arr["se"], prob(model, t, arr["se"])


def ipw_fixed_mean_from_probs(effect, se, pi) -> float:
    """Fixed-effect IPW mean given per-study publication probabilities."""
    w = 1.0 / (se ** 2 * pi)
    return float(np.sum(w * effect) / np.sum(w))


def ipw_mean_from_probs(effect, se, pi, tau2) -> float:
    """Random-effects IPW mean given probabilities and tau2 >= 0."""
    w = 1.0 / ((se ** 2 + tau2) * pi)
    return float(np.sum(w * effect) / np.sum(w))


def ipw_fixed_mean(dataset: MetaDataset, model: SelectionModel,
                   alternative: str = "less") -> float:
    y, se, pi = _pi_published(dataset, model, alternative)
    return ipw_fixed_mean_from_probs(y, se, pi)


def ipw_tau2(dataset: MetaDataset, model: SelectionModel,
             alternative: str = "less"):
    """Selection-adjusted moment estimator of the between-study variance.

    Returns (tau2, q_ipw) with tau2 truncated at zero.  A non-positive
    moment denominator yields tau2 = 0 with DegenerateDenominatorWarning.
    """
    y, se, pi = _pi_published(dataset, model, alternative)
    s = dataset.s_total
    w2 = 1.0 / (se ** 2 * pi)
    mu_fixed = np.sum(w2 * y) / np.sum(w2)
    q_ipw = float(np.sum(w2 * (y - mu_fixed) ** 2))
    a_s = np.sum(1.0 / (se ** 4 * pi)) / s
    b_s = np.sum(w2) / s
    denom = np.sum(w2) - a_s / b_s
    # unreachable with >= 2 published studies (the weight sum strictly
    # dominates the weighted mean of 1/sigma^2); kept for the contract
    if denom <= 0:
        warnings.warn("moment denominator <= 0; reporting tau2 = 0",
                      DegenerateDenominatorWarning)
        return 0.0, q_ipw
    return float(max(0.0, (q_ipw - (s - 1)) / denom)), q_ipw


def ipw_mean(dataset: MetaDataset, model: SelectionModel, tau2: float,
             alternative: str = "less") -> float:
    if tau2 < 0:
        raise ValueError("tau2 must be nonnegative")
    y, se, pi = _pi_published(dataset, model, alternative)
    return ipw_mean_from_probs(y, se, pi, tau2)


def heterogeneity(q_ipw: float, s: int):
    """H^2 and I^2 from the selection-adjusted Q statistic."""
    if s < 2:
        raise ValueError("need s >= 2")
    h2 = q_ipw / (s - 1)
    i2 = (h2 - 1.0) / h2 if h2 > 1.0 else 0.0
    return float(h2), float(i2)


def fit(dataset: MetaDataset, family: str,
        spec: EstimatingEquationSpec | None = None,
        alternative: str = "less") -> PointEstimates:
    """Full IPW pipeline: solve beta, then tau2, mean, and heterogeneity.

    Examples
    --------
    >>> from ipwmeta import load_dataset, fit
    >>> ds = load_dataset("data/clopidogrel.csv")
    >>> est = fit(ds, "logistic1")
    >>> round(float(est.beta_hat[0]), 3), round(float(np.exp(est.mu_hat)), 3)
    (1.018, 0.666)
    """
    if spec is None:
        spec = default_equation_spec(family)
    if spec.arity != family_arity(family):
        raise ValueError("estimating-equation arity must match the selection family")
    if family_arity(family) == 1:
        beta, report = solve_beta_1param(dataset, family, spec, alternative)
        model = SelectionModel(family, np.array([beta]))
    else:
        beta2, report = solve_beta_2param(dataset, family, spec, alternative)
        model = SelectionModel(family, beta2)
    tau2, q_ipw = ipw_tau2(dataset, model, alternative)
    mu = ipw_mean(dataset, model, tau2, alternative)
    mu_fixed = ipw_fixed_mean(dataset, model, alternative)
    h2, i2 = heterogeneity(q_ipw, dataset.s_total)
    return PointEstimates(beta_hat=model.beta, tau2_hat=tau2, mu_hat=mu,
                          mu_fixed_hat=mu_fixed, q_ipw=q_ipw, h2_ipw=h2,
                          i2_ipw=i2, converged=report.converged,
                          solver_report=report, model=model,
                          alternative=alternative)
