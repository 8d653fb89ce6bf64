"""Fixed covariates, response probabilities and Bernoulli response draws.

A population is 2n subjects with p real covariates observed before
allocation, together with two per-subject probabilities of a positive
response: one if the subject is treated (coded +1) and one if it is a
control (coded -1). Probabilities are generated from a log-odds-linear
model or supplied directly. Exact 0/1 probabilities are legal; they simply
produce degenerate Bernoulli responses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "CovariateMatrix",
    "PotentialOutcomes",
    "EffectSummary",
    "logistic_outcomes",
    "effect_summary",
    "draw_responses",
    "write_population_csv",
    "read_population_csv",
]


@dataclass(frozen=True)
class CovariateMatrix:
    """2n x p matrix of real covariates, fixed before allocation."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"covariates must be a 2-D array, got ndim={values.ndim}")
        rows, cols = values.shape
        if rows == 0 or rows % 2 != 0:
            raise ValueError(f"subject count must be positive and even, got {rows}")
        if cols == 0:
            raise ValueError("at least one covariate column is required")
        if not np.all(np.isfinite(values)):
            raise ValueError("covariates contain non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def two_n(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[0] // 2

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]


@dataclass(frozen=True)
class PotentialOutcomes:
    """Per-subject probabilities of positive response under each arm."""

    p_treat: np.ndarray
    p_control: np.ndarray

    def __post_init__(self) -> None:
        p_treat = np.asarray(self.p_treat, dtype=float)
        p_control = np.asarray(self.p_control, dtype=float)
        if p_treat.ndim != 1 or p_control.ndim != 1:
            raise ValueError("probability vectors must be 1-D")
        if p_treat.shape != p_control.shape:
            raise ValueError(
                f"arm probability vectors differ in length: "
                f"{p_treat.shape[0]} vs {p_control.shape[0]}"
            )
        if p_treat.shape[0] == 0 or p_treat.shape[0] % 2 != 0:
            raise ValueError(f"subject count must be positive and even, got {p_treat.shape[0]}")
        for name, vec in (("p_treat", p_treat), ("p_control", p_control)):
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{name} contains non-finite entries")
            if np.any(vec < 0.0) or np.any(vec > 1.0):
                raise ValueError(f"{name} has entries outside [0, 1]")
        p_treat.setflags(write=False)
        p_control.setflags(write=False)
        object.__setattr__(self, "p_treat", p_treat)
        object.__setattr__(self, "p_control", p_control)

    @property
    def two_n(self) -> int:
        return self.p_treat.shape[0]


@dataclass(frozen=True)
class EffectSummary:
    """Half-difference ``tau``, its mean, and per-subject average probability ``v``.

    Satisfies the reconstruction identities ``p_treat = v + tau`` and
    ``p_control = v - tau`` exactly.
    """

    tau: np.ndarray
    tau_bar: float
    v: np.ndarray

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if tau.shape != v.shape or tau.ndim != 1:
            raise ValueError("tau and v must be 1-D vectors of equal length")
        tau.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "v", v)


def logistic_outcomes(
    x: CovariateMatrix, beta0: float, beta: np.ndarray, beta_t: float
) -> PotentialOutcomes:
    """Response probabilities from a log-odds-linear model with additive arm effect.

    The linear predictor for subject i is ``beta0 + beta . x_i + beta_t * w_i``
    with the arm coded as w_i = +1 (treatment) or -1 (control); the inverse
    logit of the predictor gives the response probability for that arm.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.shape[0] != x.p:
        raise ValueError(f"beta must have length p={x.p}, got shape {beta.shape}")
    base = beta0 + x.values @ beta
    if not np.all(np.isfinite(base)) or not np.isfinite(beta_t):
        raise ValueError("non-finite linear predictor")
    # expit is overflow-safe for any finite argument
    return PotentialOutcomes(p_treat=expit(base + beta_t), p_control=expit(base - beta_t))


def effect_summary(po: PotentialOutcomes) -> EffectSummary:
    """Half-difference and average of the two arm probabilities, per subject."""
    tau = (po.p_treat - po.p_control) / 2.0
    v = (po.p_treat + po.p_control) / 2.0
    return EffectSummary(tau=tau, tau_bar=float(tau.mean()), v=v)


def draw_responses(
    po: PotentialOutcomes, w: "Assignment | np.ndarray", rng: np.random.Generator
) -> np.ndarray:
    """Draw one binary response vector given an assignment.

    Subject i responds Bernoulli(p_treat[i]) if assigned +1 and
    Bernoulli(p_control[i]) if assigned -1, independently across subjects.
    """
    w_vec = np.asarray(getattr(w, "w", w))
    if w_vec.shape != (po.two_n,):
        raise ValueError(f"assignment length {w_vec.shape} does not match 2n={po.two_n}")
    probs = np.where(w_vec > 0, po.p_treat, po.p_control)
    return (rng.random(po.two_n) < probs).astype(np.int8)


def write_population_csv(path, x: CovariateMatrix, po: PotentialOutcomes) -> None:
    """Write subjects as rows: subject id, covariates, then arm probabilities."""
    if x.two_n != po.two_n:
        raise ValueError("covariates and probabilities disagree on subject count")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject"] + [f"x{j + 1}" for j in range(x.p)] + ["pT", "pC"])
        for i in range(x.two_n):
            writer.writerow(
                [i]
                + [repr(float(val)) for val in x.values[i]]
                + [repr(float(po.p_treat[i])), repr(float(po.p_control[i]))]
            )


def read_population_csv(path) -> tuple[CovariateMatrix, PotentialOutcomes]:
    """Inverse of :func:`write_population_csv`. Rows must be sorted by subject id."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "subject" or header[-2:] != ["pT", "pC"]:
            raise ValueError(f"unexpected population CSV header: {header}")
        p = len(header) - 3
        xs, pts, pcs = [], [], []
        for lineno, row in enumerate(reader):
            if int(row[0]) != lineno:
                raise ValueError(f"subject ids must be 0..2n-1 in order, got {row[0]}")
            xs.append([float(val) for val in row[1 : 1 + p]])
            pts.append(float(row[-2]))
            pcs.append(float(row[-1]))
    return (
        CovariateMatrix(np.array(xs)),
        PotentialOutcomes(p_treat=np.array(pts), p_control=np.array(pcs)),
    )
