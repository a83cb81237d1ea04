"""Selection functions pi(t, sigma; beta) for the publication process.

Four families, keyed by the names used in CLI flags and JSON:

    logistic1   2*exp(-b*{1-Phi(t)}) / (1 + exp(-b*{1-Phi(t)}))
    mlogistic1  the same with b replaced by b*sigma
    probit2     Phi(b0 + b1*t)
    logistic2   expit(b0 + b1*t)

``prob`` and ``dprob_dbeta`` evaluate these formulas literally at whatever t
they are given.  The one-parameter families are significance-based: the
quantity 1-Phi(t) is the study's one-sided p-value for a *positive* effect,
so when the findings that drive publication are negative effects (the usual
situation for log odds ratios of adverse outcomes, and the default
throughout this package) the whole pipeline feeds them t = -y/sigma.  That
orientation lives in ``selection_statistics`` and is controlled by the
``alternative`` argument ("less" or "greater"); the two-parameter families
take t = y/sigma either way, since the sign of b1 is estimated from data.

Probabilities are clamped to [PROB_FLOOR, 1] so that inverse weights remain
finite everywhere solvers and bootstrap replicates may roam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ipwmeta._kernels_numpy import PROB_FLOOR, _expit, _upper_tail, _SQRT2PI

# name -> (kernel family code, arity)
FAMILIES = {
    "logistic1": (0, 1),
    "mlogistic1": (1, 1),
    "probit2": (2, 2),
    "logistic2": (3, 2),
}

ALTERNATIVES = ("less", "greater")


def family_code(family: str) -> int:
    return FAMILIES[family][0]


def family_arity(family: str) -> int:
    try:
        return FAMILIES[family][1]
    except KeyError:
        raise ValueError(f"unknown selection family {family!r}; "
                         f"expected one of {sorted(FAMILIES)}") from None


@dataclass(frozen=True, eq=False)
class SelectionModel:
    """A selection family plus its parameter vector."""

    family: str
    beta: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __eq__(self, other):
        if not isinstance(other, SelectionModel):
            return NotImplemented
        return self.family == other.family and np.array_equal(self.beta, other.beta)

    def __hash__(self):
        return hash((self.family, self.beta.tobytes()))

    def __post_init__(self):
        arity = family_arity(self.family)
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if beta.shape != (arity,):
            raise ValueError(f"{self.family} takes {arity} parameter(s), "
                             f"got beta of shape {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta components must be finite")
        object.__setattr__(self, "beta", beta)

    @property
    def arity(self) -> int:
        return family_arity(self.family)

    def to_dict(self) -> dict:
        return {"family": self.family, "beta": [float(b) for b in self.beta]}

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionModel":
        return cls(family=d["family"], beta=np.asarray(d["beta"], dtype=np.float64))


def selection_statistics(effect, se, family: str, alternative: str = "less"):
    """Orient the Wald statistics y/sigma for a selection family.

    One-parameter families consume the one-sided p-value of each study;
    ``alternative`` names the direction in which a small p-value favors
    publication ("less": significant negative effects are the publishable
    findings).  Two-parameter families use y/sigma unchanged.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    t = np.asarray(effect, dtype=np.float64) / np.asarray(se, dtype=np.float64)
    if family_arity(family) == 1 and alternative == "less":
        return -t
    return t


def prob(model: SelectionModel, t, sigma):
    """Publication probability pi(t, sigma; beta), clamped to [PROB_FLOOR, 1]."""
    t = np.asarray(t, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    b = model.beta
    if model.family == "logistic1":
        p = 2.0 * _expit(-b[0] * _upper_tail(t))
    elif model.family == "mlogistic1":
        p = 2.0 * _expit(-b[0] * sigma * _upper_tail(t))
    elif model.family == "probit2":
        p = _upper_tail(-(b[0] + b[1] * t))
    elif model.family == "logistic2":
        p = _expit(b[0] + b[1] * t)
    else:  # pragma: no cover - guarded by SelectionModel
        raise ValueError(model.family)
    return np.clip(p, PROB_FLOOR, 1.0)


def dprob_dbeta(model: SelectionModel, t, sigma):
    """Analytic gradient of the unclamped ``prob`` with respect to beta.

    Returns an array of shape (arity,) + shape(t).
    """
    t = np.asarray(t, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    b = model.beta
    if model.family in ("logistic1", "mlogistic1"):
        q = _upper_tail(t)
        if model.family == "mlogistic1":
            q = sigma * q
        p = _expit(-b[0] * q)
        return np.asarray([-2.0 * q * p * (1.0 - p)])
    eta = b[0] + b[1] * t
    if model.family == "probit2":
        d = np.exp(-0.5 * eta * eta) / _SQRT2PI
    else:
        p = _expit(eta)
        d = p * (1.0 - p)
    return np.stack([d * np.ones_like(t), d * t])
