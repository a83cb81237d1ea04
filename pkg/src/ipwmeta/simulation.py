"""Monte Carlo machinery: generate trial populations, apply selective
publication, run estimators over replicates, and aggregate table metrics.

Each study of a population is a two-arm binomial trial: the study-level true
log odds ratio is N(mu, tau^2); the control event rate is U(0.2, 0.9); the
treated rate follows from the odds-ratio identity; the total sample size is
lognormal LN(5, 1) rounded and floored at 20; subjects land in the treatment
arm with probability one half.  The empirical log odds ratio and its
standard error come from the same 2x2 pathway the data loader uses.

Replicate r draws its generator from spawn key (r, attempt) under the
scenario seed, so metrics are invariant to execution order and worker
count; a replicate whose selection leaves fewer than two published studies
is discarded and regenerated under attempt+1 (and counted).
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ipwmeta.estimation import NoRootError, dl_fit, fit
from ipwmeta.inference import (SingularJacobianError, dl_wald_ci,
                               parametric_bootstrap, sandwich_covariance)
from ipwmeta.model import MetaDataset, StudyRecord, TwoByTwoCounts, effect_from_counts
from ipwmeta.selection import SelectionModel, prob, selection_statistics

MIN_SAMPLE_SIZE = 20
CI_KINDS = ("asymptotic", "bootstrap", "none")


class AllSuppressedError(RuntimeError):
    """Selection left fewer than two published studies."""


@dataclass(frozen=True)
class GenerativeConfig:
    tau: float
    s_total: int
    selection: SelectionModel
    seed: int
    n_replicates: int
    mu: float = -0.50
    alternative: str = "less"

    def __post_init__(self):
        if self.s_total < 2:
            raise ValueError("s_total must be >= 2")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")


@dataclass(frozen=True)
class MethodSpec:
    """One estimator column of a scenario: DL baseline or IPW x family."""

    method: str                 # "dl" or "ipw"
    family: str | None = None   # selection family for "ipw"
    ci: str = "asymptotic"      # "asymptotic", "bootstrap" or "none"
    boot_b: int = 1000

    def __post_init__(self):
        if self.method not in ("dl", "ipw"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.ci not in CI_KINDS:
            raise ValueError(f"unknown ci kind {self.ci!r}")
        if self.method == "ipw" and self.family is None:
            raise ValueError("ipw method needs a selection family")
        if self.method == "dl" and self.ci == "bootstrap":
            raise ValueError("bootstrap CIs are implemented for ipw methods only")

    @property
    def label(self) -> str:
        return "dl" if self.method == "dl" else f"ipw:{self.family}"


@dataclass(frozen=True)
class ScenarioMetrics:
    scenario_id: str
    method: str
    family: str
    ci_kind: str
    parameter: str
    ave: float
    sd: float
    cp: float
    loci: float
    noc: int
    noz: int
    n_replicates: int
    seed: int


def generate_population(cfg: GenerativeConfig, rng) -> tuple[MetaDataset, dict]:
    """Draw a complete population of cfg.s_total studies, all published.

    Returns the dataset plus a truth record with the per-study latent
    quantities (true log odds ratio, arm event rates, arm sizes).
    """
    s = cfg.s_total
    mu_i = rng.normal(cfg.mu, cfg.tau, s)
    p_ctl = rng.uniform(0.2, 0.9, s)
    p_trt = np.exp(mu_i) * p_ctl / (1.0 - p_ctl + p_ctl * np.exp(mu_i))
    n = np.maximum(np.rint(rng.lognormal(5.0, 1.0, s)).astype(int), MIN_SAMPLE_SIZE)
    n_trt = rng.binomial(n, 0.5)
    while np.any((n_trt == 0) | (n_trt == n)):   # a one-armed draw is not a trial
        bad = (n_trt == 0) | (n_trt == n)
        n_trt[bad] = rng.binomial(n[bad], 0.5)
    n_ctl = n - n_trt
    ev_trt = rng.binomial(n_trt, p_trt)
    ev_ctl = rng.binomial(n_ctl, p_ctl)
    records = []
    for i in range(s):
        counts = TwoByTwoCounts(int(ev_trt[i]), int(n_trt[i]),
                                int(ev_ctl[i]), int(n_ctl[i]))
        effect, se = effect_from_counts(counts)
        records.append(StudyRecord(f"study-{i:04d}", effect, se, int(n[i]), True))
    truth = {"mu_i": mu_i, "p_ctl": p_ctl, "p_trt": p_trt,
             "n_trt": n_trt, "n_ctl": n_ctl}
    return MetaDataset(tuple(records)), truth


def apply_selection(population: MetaDataset, true_model: SelectionModel, rng,
                    alternative: str = "less") -> MetaDataset:
    """Draw publication indicators and erase effect/se of suppressed studies."""
    arr = population.arrays()
    t = selection_statistics(arr["effect"], arr["se"], true_model.family, alternative)
    pi = prob(true_model, t, arr["se"])
    published = rng.random(len(pi)) < pi
    if published.sum() < 2:
        raise AllSuppressedError("fewer than two studies published")
    records = []
    for s, pub in zip(population.studies, published):
        if pub:
            records.append(s)
        else:
            records.append(StudyRecord(s.id, None, None, s.n_total, False))
    return MetaDataset(tuple(records))


def _replicate_rng(seed: int, r: int, attempt: int):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(r, attempt)))


MAX_REGENERATION_ATTEMPTS = 100


def _run_replicate(cfg: GenerativeConfig, methods: tuple, r: int) -> dict:
    """One replicate: generate, select, fit every method."""
    attempt = 0
    while True:
        rng = _replicate_rng(cfg.seed, r, attempt)
        population, _ = generate_population(cfg, rng)
        try:
            dataset = apply_selection(population, cfg.selection, rng,
                                      cfg.alternative)
            break
        except AllSuppressedError:
            attempt += 1
            if attempt >= MAX_REGENERATION_ATTEMPTS:
                raise AllSuppressedError(
                    f"replicate {r}: fewer than two studies published in "
                    f"{attempt} consecutive populations; the selection "
                    "process suppresses essentially everything") from None
    out = {"regenerated": attempt, "methods": []}
    for m in methods:
        rec = {"estimate": None, "tau2": None, "converged": False,
               "ci_mu": None, "ci_tau2": None}
        try:
            if m.method == "dl":
                dl = dl_fit(dataset)
                rec.update(estimate=dl.mu_hat, tau2=dl.tau2_hat, converged=True)
                if m.ci == "asymptotic":
                    (lo, hi), _ = dl_wald_ci(dl)
                    rec["ci_mu"] = (lo, hi)
            else:
                est = fit(dataset, m.family, alternative=cfg.alternative)
                rec.update(estimate=est.mu_hat, tau2=est.tau2_hat,
                           converged=est.converged)
                if m.ci == "asymptotic":
                    try:
                        with warnings.catch_warnings():
                            warnings.simplefilter("ignore")
                            sw = sandwich_covariance(dataset, est)
                        rec["ci_mu"] = sw.wald_cis[-1]
                        rec["ci_tau2"] = sw.wald_cis[-2]
                    except SingularJacobianError:
                        pass
                elif m.ci == "bootstrap":
                    boot_seed = int(rng.integers(2 ** 63))
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        boot = parametric_bootstrap(dataset, est,
                                                    b_replicates=m.boot_b,
                                                    seed=boot_seed)
                    rec["ci_mu"] = boot.ci_mu
                    rec["ci_tau2"] = boot.ci_tau2
        except NoRootError:
            pass
        out["methods"].append(rec)
    return out


def run_scenario(cfg: GenerativeConfig, methods, threads: int = 1,
                 scenario_id: str | None = None, progress=None):
    """Run every method over n_replicates populations; aggregate metrics.

    AVE/SD/NOZ aggregate over all replicates that produced an estimate
    (two-parameter best-effort fits included; their strict convergence
    status is what NOC counts).  CP and LOCI aggregate over replicates
    carrying a confidence interval.  Returns a list of ScenarioMetrics rows,
    two per method (parameters mu and tau2).
    """
    methods = tuple(methods)
    if not methods:
        raise ValueError("need at least one method")
    if scenario_id is None:
        scenario_id = (f"{cfg.selection.family}_S{cfg.s_total}_tau{cfg.tau:g}"
                       f"_mu{cfg.mu:g}")
    indices = range(cfg.n_replicates)
    if threads in (0, None):
        import os
        threads = os.cpu_count() or 1
    if threads > 1:
        _warm_up(cfg, methods)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_worker,
                                    [(cfg, methods, r) for r in indices],
                                    chunksize=max(1, cfg.n_replicates // (4 * threads))))
    else:
        results = []
        for r in indices:
            results.append(_run_replicate(cfg, methods, r))
            if progress is not None:
                progress(r + 1, cfg.n_replicates)

    regenerated = sum(res["regenerated"] for res in results)
    if regenerated:
        warnings.warn(f"{regenerated} population(s) were regenerated because "
                      "selection left fewer than two published studies")

    rows = []
    truth = {"mu": cfg.mu, "tau2": cfg.tau ** 2}
    for j, m in enumerate(methods):
        recs = [res["methods"][j] for res in results]
        noc = sum(rec["converged"] for rec in recs)
        for param, key, ci_key in (("mu", "estimate", "ci_mu"),
                                   ("tau2", "tau2", "ci_tau2")):
            vals = np.array([rec[key] for rec in recs if rec[key] is not None])
            cis = [rec[ci_key] for rec in recs
                   if rec[key] is not None and rec[ci_key] is not None]
            ave = float(vals.mean()) if vals.size else float("nan")
            sd = float(vals.std()) if vals.size else float("nan")
            if cis:
                cover = np.array([lo <= truth[param] <= hi for lo, hi in cis])
                cp = float(cover.mean())
                loci = float(np.mean([hi - lo for lo, hi in cis]))
            else:
                cp = float("nan")
                loci = float("nan")
            noz = int(np.sum(np.array([rec["tau2"] for rec in recs
                                       if rec["tau2"] is not None]) == 0.0))
            rows.append(ScenarioMetrics(
                scenario_id=scenario_id, method=m.method,
                family=m.family or "", ci_kind=m.ci, parameter=param,
                ave=ave, sd=sd, cp=cp, loci=loci, noc=noc, noz=noz,
                n_replicates=cfg.n_replicates, seed=cfg.seed))
    return rows


def _replicate_worker(args):
    cfg, methods, r = args
    return _run_replicate(cfg, methods, r)


def _warm_up(cfg: GenerativeConfig, methods):
    """Trigger any JIT compilation in the parent before forking workers."""
    small = replace(cfg, n_replicates=1, s_total=max(cfg.s_total, 4))
    _run_replicate(small, methods, 0)


METRIC_COLUMNS = ["scenario_id", "method", "family", "ci_kind", "parameter",
                  "ave", "sd", "cp", "loci", "noc", "noz", "n_replicates",
                  "seed"]


def metrics_to_csv_rows(rows):
    """ScenarioMetrics -> list of csv-writable lists, header first."""
    out = [list(METRIC_COLUMNS)]
    for r in rows:
        out.append([r.scenario_id, r.method, r.family, r.ci_kind, r.parameter,
                    _fmt(r.ave), _fmt(r.sd), _fmt(r.cp), _fmt(r.loci),
                    r.noc, r.noz, r.n_replicates, r.seed])
    return out


def _fmt(x):
    return "" if x != x else repr(float(x))   # NaN -> empty cell


def config_from_dict(d: dict) -> tuple[GenerativeConfig, list[MethodSpec]]:
    """Parse the JSON scenario document; returns (config, methods)."""
    try:
        selection = SelectionModel.from_dict(d["selection"])
        cfg = GenerativeConfig(
            mu=float(d.get("mu", -0.50)),
            tau=float(d["tau"]),
            s_total=int(d["s_total"]),
            selection=selection,
            seed=int(d["seed"]),
            n_replicates=int(d["n_replicates"]),
            alternative=d.get("alternative", "less"),
        )
        methods = [MethodSpec(method=m["method"], family=m.get("family"),
                              ci=m.get("ci", "asymptotic"),
                              boot_b=int(m.get("boot_b", 1000)))
                   for m in d["methods"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"invalid scenario config: {exc}") from exc
    if not methods:
        raise ValueError("invalid scenario config: empty methods list")
    return cfg, methods


def load_config(path) -> tuple[GenerativeConfig, list[MethodSpec]]:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))
