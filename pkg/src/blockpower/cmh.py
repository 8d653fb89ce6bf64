"""The Cochran-Mantel-Haenszel statistic for blocked binary data.

Two algebraically equivalent routes are provided: the classical stratified
2x2 contingency-table form and a quadratic form in the assignment vector and
the design covariance. Both yield the statistic, its signed square root and
the chi-squared(1) rejection decision.

A zero denominator (every block's responses constant) makes the statistic
undefined; this is a value state, not an error, and undefined statistics
never reject. The signed root carries the sign of w'y, a convention this
module fixes since either sign squares to the same statistic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from blockpower.designs import Assignment, BlockStructure, DesignCovariance, quadratic_form

__all__ = [
    "StratifiedTables",
    "MHResult",
    "tabulate",
    "mh_table_form",
    "mh_quadratic_form",
    "reject",
    "chi2_threshold",
    "write_tables_csv",
]


@dataclass(frozen=True)
class StratifiedTables:
    """Per-block 2x2 counts by (arm, outcome); arm margins are n_B/2 each."""

    n_t1: np.ndarray  # treated, response 1
    n_t0: np.ndarray  # treated, response 0
    n_c1: np.ndarray  # control, response 1
    n_c0: np.ndarray  # control, response 0

    def __post_init__(self) -> None:
        arrays = {}
        for name in ("n_t1", "n_t0", "n_c1", "n_c0"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a 1-D count vector")
            if np.any(arr < 0):
                raise ValueError(f"{name} contains negative counts")
            arrays[name] = arr
        lengths = {arr.shape[0] for arr in arrays.values()}
        if len(lengths) != 1:
            raise ValueError("count vectors must share the same number of blocks")
        treat = arrays["n_t1"] + arrays["n_t0"]
        control = arrays["n_c1"] + arrays["n_c0"]
        if np.any(treat != control):
            raise ValueError("arm totals differ within a block; allocation not balanced")
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def B(self) -> int:
        return self.n_t1.shape[0]

    @property
    def n_B(self) -> int:
        return int(self.n_t1[0] + self.n_t0[0] + self.n_c1[0] + self.n_c0[0])

    @property
    def n1(self) -> np.ndarray:
        """Responders per block."""
        return self.n_t1 + self.n_c1

    @property
    def n0(self) -> np.ndarray:
        """Non-responders per block."""
        return self.n_t0 + self.n_c0


@dataclass(frozen=True)
class MHResult:
    """Statistic value, signed root, and the two quotient pieces.

    When ``defined`` is False the denominator was zero and all numeric
    fields are NaN except ``numerator``/``denominator``.
    """

    mh: float
    signed_root: float
    numerator: float
    denominator: float
    defined: bool


def tabulate(bs: BlockStructure, w: Assignment, y: np.ndarray) -> StratifiedTables:
    """Count the per-block (arm, outcome) cells from an assignment and responses."""
    y = np.asarray(y)
    if y.shape != (bs.two_n,):
        raise ValueError(f"responses must have length 2n={bs.two_n}, got {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("responses must be binary 0/1")
    if w.structure is not bs and not np.array_equal(w.structure.blocks, bs.blocks):
        raise ValueError("assignment was generated under a different block structure")
    wb = w.w[bs.blocks]  # (B, n_B)
    yb = y[bs.blocks]
    treated = wb > 0
    return StratifiedTables(
        n_t1=(treated & (yb == 1)).sum(axis=1),
        n_t0=(treated & (yb == 0)).sum(axis=1),
        n_c1=(~treated & (yb == 1)).sum(axis=1),
        n_c0=(~treated & (yb == 0)).sum(axis=1),
    )


def _result(numerator: float, denominator: float, sign: float) -> MHResult:
    if denominator <= 0.0:
        return MHResult(
            mh=math.nan,
            signed_root=math.nan,
            numerator=numerator,
            denominator=denominator,
            defined=False,
        )
    mh = numerator / denominator
    return MHResult(
        mh=mh,
        signed_root=math.copysign(math.sqrt(mh), sign) if mh > 0 else 0.0,
        numerator=numerator,
        denominator=denominator,
        defined=True,
    )


def mh_table_form(t: StratifiedTables, n_B: int | None = None) -> MHResult:
    """Statistic from the stratified contingency tables.

    Numerator: squared sum over blocks of (treated responders minus half the
    block's responders). Denominator: sum of per-block responder times
    non-responder products, scaled by 1/(4(n_B - 1)).
    """
    if n_B is None:
        n_B = t.n_B
    if n_B < 2:
        raise ValueError(f"need block size n_B >= 2, got {n_B}")
    excess = float(np.sum(t.n_t1 - t.n1 / 2.0))
    numerator = excess * excess
    denominator = float(np.sum(t.n1 * t.n0)) / (4.0 * (n_B - 1))
    return _result(numerator, denominator, sign=excess)


def mh_quadratic_form(bs: BlockStructure, w: Assignment, y: np.ndarray) -> MHResult:
    """Statistic as (w'y)^2 over the design-covariance quadratic form of y."""
    y = np.asarray(y, dtype=float)
    if y.shape != (bs.two_n,):
        raise ValueError(f"responses must have length 2n={bs.two_n}, got {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("responses must be binary 0/1")
    wy = float(w.w @ y)
    denominator = quadratic_form(DesignCovariance(bs), y)
    return _result(wy * wy, denominator, sign=wy)


def chi2_threshold(alpha: float) -> float:
    """Upper-alpha quantile of chi-squared with one degree of freedom."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(chi2.ppf(1.0 - alpha, df=1))


def reject(r: MHResult, alpha: float) -> bool:
    """True iff the statistic is defined and exceeds the chi-squared(1) threshold."""
    threshold = chi2_threshold(alpha)
    return bool(r.defined and r.mh > threshold)


def write_tables_csv(path, t: StratifiedTables) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "nT1", "nT0", "nC1", "nC0"])
        for b in range(t.B):
            writer.writerow(
                [b, int(t.n_t1[b]), int(t.n_t0[b]), int(t.n_c1[b]), int(t.n_c0[b])]
            )
