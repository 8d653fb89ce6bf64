"""Asymptotic variance functionals and power under local alternatives.

For a fixed population and block structure this module evaluates:

- the design-dependent average within-block variance of the mean response
  probabilities v (computed blockwise, never via a dense covariance);
- the design-free Bernoulli variance term;
- their sum ``eta_n``, the asymptotic variance functional of the normalized
  treatment-control contrast (smaller means higher power);
- the per-block variances sigma_b^2 and the per-block variance functional
  eta_b, whose block average recovers eta_n;
- the small-block second-order penalty that shifts the noncentral mean
  toward zero at finite n;
- the noncentrality c = sqrt(2n) * tau_bar and the resulting two-sided
  asymptotic power of the chi-squared(1) test.

All quantities are finite-n plug-ins for their asymptotic counterparts and
are labeled as such in the output record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from blockpower.designs import BlockStructure
from blockpower.population import PotentialOutcomes, effect_summary

__all__ = [
    "TheorySummary",
    "eta_n",
    "second_order_penalty",
    "asymptotic_power",
    "block_eta",
]


@dataclass(frozen=True)
class TheorySummary:
    """Finite-n evaluation of the asymptotic power functionals."""

    v_quad: float  # (1/2n) v' Sigma v: average within-block variance of v
    bernoulli_term: float  # (pT'(1-pT) + pC'(1-pC)) / (4n)
    eta: float  # v_quad + bernoulli_term
    second_order: float  # (||tau||^2 - tau' Sigma tau) / (n_B - 1)
    local_c: float  # sqrt(2n) * tau_bar
    power: float  # two-sided power at the alpha used to build the summary
    alpha: float
    sigma_b2: tuple[float, ...]  # per-block variance of v, (n_B/(n_B-1)) scaling
    sigma_min2: float
    sigma_max2: float
    v_tilde0: float  # mean Bernoulli variance; reported, drives no logic
    two_n: int
    B: int

    def to_json(self) -> str:
        record = {
            "twoN": self.two_n,
            "B": self.B,
            "vQuad": self.v_quad,
            "bernoulliTerm": self.bernoulli_term,
            "etaN": self.eta,
            "secondOrder": self.second_order,
            "localC": self.local_c,
            "asymptoticPower": self.power,
            "alpha": self.alpha,
            "sigmaMin2": self.sigma_min2,
            "sigmaMax2": self.sigma_max2,
            "sigmaRatio": self.sigma_min2 / self.sigma_max2 if self.sigma_max2 > 0 else math.nan,
            "vTilde0": self.v_tilde0,
        }
        return json.dumps(record, indent=2)

    def csv_row(self) -> list:
        return [
            self.two_n,
            self.B,
            repr(self.v_quad),
            repr(self.bernoulli_term),
            repr(self.eta),
            repr(self.second_order),
            repr(self.local_c),
            repr(self.power),
        ]


def _check_lengths(po: PotentialOutcomes, bs: BlockStructure) -> None:
    if po.two_n != bs.two_n:
        raise ValueError(
            f"population has 2n={po.two_n} subjects but block structure has {bs.two_n}"
        )


def eta_n(po: PotentialOutcomes, bs: BlockStructure, alpha: float = 0.05) -> TheorySummary:
    """Evaluate all power functionals for one population and block structure."""
    _check_lengths(po, bs)
    summary = effect_summary(po)
    two_n, n_B = bs.two_n, bs.n_B

    vb = summary.v[bs.blocks]
    centered = vb - vb.mean(axis=1, keepdims=True)
    per_block_ss = (centered * centered).sum(axis=1)
    sigma_b2 = n_B / (n_B - 1) * per_block_ss
    v_quad = float(sigma_b2.sum() / two_n)

    bern = po.p_treat * (1.0 - po.p_treat) + po.p_control * (1.0 - po.p_control)
    bernoulli_term = float(bern.sum() / (4 * bs.n))
    eta = v_quad + bernoulli_term

    penalty = second_order_penalty(po, bs)
    local_c = math.sqrt(two_n) * summary.tau_bar
    power = _power_from_shift(local_c, eta, alpha)

    return TheorySummary(
        v_quad=v_quad,
        bernoulli_term=bernoulli_term,
        eta=eta,
        second_order=penalty,
        local_c=local_c,
        power=power,
        alpha=alpha,
        sigma_b2=tuple(float(s) for s in sigma_b2),
        sigma_min2=float(sigma_b2.min()),
        sigma_max2=float(sigma_b2.max()),
        v_tilde0=float(bern.sum() / (4 * bs.n)),
        two_n=two_n,
        B=bs.B,
    )


def second_order_penalty(po: PotentialOutcomes, bs: BlockStructure) -> float:
    """Small-block drag term (||tau||^2 - tau' Sigma tau) / (n_B - 1).

    Non-negative whenever all same-block tau entries share a sign; large for
    small blocks, vanishing as blocks grow.
    """
    _check_lengths(po, bs)
    tau = effect_summary(po).tau
    n_B = bs.n_B
    tb = tau[bs.blocks]
    centered = tb - tb.mean(axis=1, keepdims=True)
    tau_quad = n_B / (n_B - 1) * float((centered * centered).sum())
    return (float(tau @ tau) - tau_quad) / (n_B - 1)


def asymptotic_power(summary: TheorySummary, alpha: float) -> float:
    """Two-sided power of the chi-squared(1) test against the shifted normal root.

    The signed root is asymptotically normal with unit variance and mean
    c / sqrt(eta); the chi-squared threshold test rejects when its absolute
    value exceeds the two-sided normal critical value.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if summary.eta <= 0.0:
        raise ValueError("eta must be positive to evaluate power")
    return _power_from_shift(summary.local_c, summary.eta, alpha)


def _power_from_shift(local_c: float, eta: float, alpha: float) -> float:
    if eta <= 0.0:
        return math.nan
    shift = local_c / math.sqrt(eta)
    z = norm.ppf(1.0 - alpha / 2.0)
    return float(norm.sf(z - shift) + norm.cdf(-z - shift))


def block_eta(po: PotentialOutcomes, bs: BlockStructure, b: int) -> float:
    """Per-block variance functional; its block average equals eta_n.

    eta_b combines the centered variance of v within block b with the mean
    Bernoulli variance of the block's subjects.
    """
    _check_lengths(po, bs)
    if not 0 <= b < bs.B:
        raise ValueError(f"block index {b} out of range for B={bs.B}")
    members = bs.blocks[b]
    n_B = bs.n_B
    v = effect_summary(po).v[members]
    ss = float(((v - v.mean()) ** 2).sum())
    bern = (
        po.p_treat[members] * (1.0 - po.p_treat[members])
        + po.p_control[members] * (1.0 - po.p_control[members])
    )
    return ss / (n_B - 1) + float(bern.sum()) / (2 * n_B)
