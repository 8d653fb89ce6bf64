"""Deterministic Monte Carlo size/power sweeps over block designs.

A sweep is a grid of cells. One cell fixes the sample size 2n, block count
B, covariate dimension p, effect size and replicate count, then repeatedly
randomizes, draws responses, and tests. Rejection rates come back with
binomial confidence intervals; null cells additionally carry a calibration
z-test p-value, Bonferroni-correctable across the whole run.

Determinism contract: results depend only on the cell parameters and the
master seed, never on worker count or execution order. Covariates are drawn
from a stream keyed by (seed, 2n, p) only, so every cell sharing those
values sees the same subjects; the per-cell replicate stream is a
counter-based Philox generator keyed by the full cell identity. Cells are
the unit of parallelism and replicates are vectorized in fixed-size batches
inside each cell.
"""

from __future__ import annotations

import csv
import enum
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import yaml
from scipy.stats import beta as beta_dist
from scipy.stats import norm

from blockpower.cmh import chi2_threshold
from blockpower.designs import (
    BlockStructure,
    quantile_blocks,
    hierarchical_blocks,
)
from blockpower.matching import mahalanobis_distances, min_weight_perfect_matching, pm_blockstructure
from blockpower.population import CovariateMatrix, PotentialOutcomes, logistic_outcomes
from blockpower.theory import eta_n as theory_eta_n

__all__ = [
    "DesignKind",
    "CellSpec",
    "PowerCellResult",
    "SizeReport",
    "admissible_block_counts",
    "enumerate_cells",
    "draw_population",
    "build_structure",
    "run_cell",
    "simulate_signed_roots",
    "sweep",
    "bonferroni_size_report",
    "load_sweep_config",
    "apply_overrides",
    "cells_from_config",
    "write_results_csv",
    "RESULT_COLUMNS",
]

_BATCH = 2048


class DesignKind(str, enum.Enum):
    QUANTILE = "quantile_blocks"
    HIERARCHICAL = "hierarchical_blocks"
    PAIRWISE = "pairwise_match"
    BCRD = "bcrd"


@dataclass(frozen=True)
class CellSpec:
    """Everything needed to reproduce one simulation cell."""

    two_n: int
    B: int
    p: int
    beta0: float
    beta_t: float
    beta: tuple[float, ...]
    n_y: int
    alpha: float
    seed: int
    design_kind: DesignKind

    def __post_init__(self) -> None:
        if self.two_n <= 0 or self.two_n % 2 != 0:
            raise ValueError(f"2n must be positive and even, got {self.two_n}")
        if self.B < 1 or self.two_n % self.B != 0:
            raise ValueError(f"B={self.B} does not divide 2n={self.two_n}")
        if (self.two_n // self.B) % 2 != 0:
            raise ValueError(f"block size 2n/B={self.two_n // self.B} must be even")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if len(self.beta) != self.p:
            raise ValueError(f"beta must have length p={self.p}, got {len(self.beta)}")
        if self.n_y < 1:
            raise ValueError(f"replicate count must be >= 1, got {self.n_y}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        kind = DesignKind(self.design_kind)
        object.__setattr__(self, "design_kind", kind)
        if kind is DesignKind.BCRD and self.B != 1:
            raise ValueError("BCRD cells must have B = 1")
        if kind is DesignKind.PAIRWISE and self.B != self.two_n // 2:
            raise ValueError(f"pairwise matching requires B = n = {self.two_n // 2}")
        if kind is DesignKind.HIERARCHICAL and self.p < 2:
            raise ValueError("hierarchical blocking requires p >= 2")

    @property
    def n_B(self) -> int:
        return self.two_n // self.B

    def key(self) -> tuple:
        return (self.two_n, self.B, self.p, self.beta_t, self.design_kind.value)


@dataclass(frozen=True)
class PowerCellResult:
    """Rejection-rate estimate with interval and the cell's theory functionals."""

    spec: CellSpec
    rejections: int
    undefined_count: int
    rate: float
    ci_low: float
    ci_high: float
    size_test_p: float | None
    eta: float
    v_quad: float
    second_order: float
    wallclock_seconds: float
    error: str | None = None

    @property
    def mc_stderr(self) -> float:
        return math.sqrt(max(self.rate * (1.0 - self.rate), 0.0) / self.spec.n_y)


RESULT_COLUMNS = [
    "twoN",
    "B",
    "p",
    "betaT",
    "designKind",
    "NY",
    "rejections",
    "undefinedCount",
    "rate",
    "ciLow",
    "ciHigh",
    "sizeTestP",
    "etaN",
    "vQuad",
    "secondOrder",
    "wallclockSeconds",
    "error",
]


def _float_bits(value: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(value)))[0]


def _covariate_rng(seed: int, two_n: int, p: int) -> np.random.Generator:
    # keyed by (seed, 2n, p) only: covariates are shared across B, beta_t, design
    ss = np.random.SeedSequence(entropy=[seed & 0xFFFFFFFFFFFFFFFF, 0xC0DE, two_n, p])
    return np.random.Generator(np.random.Philox(ss))


def _cell_rng(spec: CellSpec) -> np.random.Generator:
    kinds = list(DesignKind)
    ss = np.random.SeedSequence(
        entropy=[
            spec.seed & 0xFFFFFFFFFFFFFFFF,
            0xCE11,
            spec.two_n,
            spec.B,
            spec.p,
            _float_bits(spec.beta_t),
            kinds.index(spec.design_kind),
        ]
    )
    return np.random.Generator(np.random.Philox(ss))


def admissible_block_counts(two_n: int, *, even_b: bool = True) -> list[int]:
    """Block counts B with B | 2n, even block size, and B <= n.

    With ``even_b`` (needed whenever hierarchical blocking must be able to
    reuse the same cells) odd B are dropped, including B = 1; BCRD is added
    back separately by :func:`enumerate_cells` when requested.
    """
    if two_n <= 0 or two_n % 2 != 0:
        raise ValueError(f"2n must be positive and even, got {two_n}")
    n = two_n // 2
    counts = [b for b in range(1, n + 1) if two_n % b == 0 and (two_n // b) % 2 == 0]
    if even_b:
        counts = [b for b in counts if b % 2 == 0]
    return counts


def enumerate_cells(
    two_n_list: list[int],
    *,
    p: int = 1,
    beta0: float = 0.0,
    beta_t: float = 0.7,
    beta: tuple[float, ...] | None = None,
    n_y: int = 100_000,
    alpha: float = 0.05,
    seed: int = 0,
    even_b: bool = True,
    include_bcrd: bool = True,
    block_counts: list[int] | None = None,
) -> list[CellSpec]:
    """All admissible cells for the given sample sizes.

    For every 2n the admissible B are those dividing 2n with even block size
    up to B = n; the B = n cell is the pairwise design, realized through
    Mahalanobis matching when p >= 2 and through sorted pairing when p = 1.
    """
    if beta is None:
        beta = tuple(1.0 for _ in range(p))
    cells: list[CellSpec] = []
    for two_n in two_n_list:
        n = two_n // 2
        counts = block_counts if block_counts is not None else admissible_block_counts(
            two_n, even_b=even_b
        )
        b_values = list(counts)
        if include_bcrd and 1 not in b_values:
            b_values = [1] + b_values
        for B in b_values:
            if B == 1:
                kind = DesignKind.BCRD
            elif B == n and p >= 2:
                kind = DesignKind.PAIRWISE
            elif p >= 2:
                kind = DesignKind.HIERARCHICAL
            else:
                kind = DesignKind.QUANTILE
            cells.append(
                CellSpec(
                    two_n=two_n,
                    B=B,
                    p=p,
                    beta0=beta0,
                    beta_t=beta_t,
                    beta=tuple(beta),
                    n_y=n_y,
                    alpha=alpha,
                    seed=seed,
                    design_kind=kind,
                )
            )
    return cells


def draw_population(spec: CellSpec) -> tuple[CovariateMatrix, PotentialOutcomes]:
    """Standard-normal covariates plus log-odds-linear response probabilities.

    The covariate stream depends only on (seed, 2n, p): cells differing in B,
    effect size or design kind see identical subjects.
    """
    rng = _covariate_rng(spec.seed, spec.two_n, spec.p)
    x = CovariateMatrix(rng.standard_normal((spec.two_n, spec.p)))
    po = logistic_outcomes(x, spec.beta0, np.array(spec.beta), spec.beta_t)
    return x, po


def build_structure(spec: CellSpec, x: CovariateMatrix) -> BlockStructure:
    """Realize the cell's block structure from its covariates."""
    kind = spec.design_kind
    if kind is DesignKind.BCRD:
        return BlockStructure.single_block(spec.two_n)
    if kind is DesignKind.QUANTILE:
        return quantile_blocks(x.column(0), spec.B)
    if kind is DesignKind.HIERARCHICAL:
        return hierarchical_blocks(x, spec.B)
    if kind is DesignKind.PAIRWISE:
        if x.p == 1:
            # one covariate: optimal pairing is sorted-adjacent
            return quantile_blocks(x.column(0), spec.B)
        matching = min_weight_perfect_matching(mahalanobis_distances(x))
        return pm_blockstructure(matching)
    raise ValueError(f"unknown design kind {kind}")


def _replicate_batches(
    spec: CellSpec,
    bs: BlockStructure,
    po: PotentialOutcomes,
    rng: np.random.Generator,
    batch: int = _BATCH,
):
    """Yield (w'y, y'Sigma y) arrays over the cell's replicates, in fixed batches.

    Uses binary-count algebra for the blockwise quadratic form: with s_b
    responders in a block, the centered sum of squares is s_b (n_B - s_b)/n_B.
    """
    B, n_B, two_n = bs.B, bs.n_B, bs.two_n
    idx = bs.blocks
    p_treat, p_control = po.p_treat, po.p_control
    half = n_B // 2
    done = 0
    while done < spec.n_y:
        m = min(batch, spec.n_y - done)
        u = rng.random((m, B, n_B))
        ranks = np.argsort(np.argsort(u, axis=2), axis=2)
        signs = np.where(ranks < half, 1.0, -1.0)
        w = np.empty((m, two_n))
        w[:, idx.ravel()] = signs.reshape(m, -1)
        probs = np.where(w > 0, p_treat, p_control)
        y = rng.random((m, two_n)) < probs
        wy = np.einsum("ij,ij->i", w, y)
        s = y[:, idx].sum(axis=2)
        denom = (n_B / (n_B - 1)) * (s * (n_B - s) / n_B).sum(axis=1)
        yield wy, denom
        done += m


def run_cell(spec: CellSpec, *, ci_method: str = "normal", record_timing: bool = True) -> PowerCellResult:
    """Estimate the cell's rejection rate over its replicates.

    Undefined statistics (all responses constant within every block) count
    as non-rejections and are tallied separately. ``ci_method`` is "normal"
    (matching the calibration z-test) or "exact" (Clopper-Pearson, useful
    for rates near 0 or 1).
    """
    start = time.perf_counter()
    x, po = draw_population(spec)
    bs = build_structure(spec, x)
    threshold = chi2_threshold(spec.alpha)
    rng = _cell_rng(spec)

    rejections = 0
    undefined = 0
    for wy, denom in _replicate_batches(spec, bs, po, rng):
        defined = denom > 0.0
        undefined += int((~defined).sum())
        mh = np.zeros_like(wy)
        np.divide(wy * wy, denom, out=mh, where=defined)
        rejections += int((defined & (mh > threshold)).sum())

    rate = rejections / spec.n_y
    ci_low, ci_high = _binomial_ci(rejections, spec.n_y, method=ci_method)
    size_test_p = _size_test_p(rate, spec.alpha, spec.n_y) if spec.beta_t == 0.0 else None
    theory = theory_eta_n(po, bs, alpha=spec.alpha)
    elapsed = time.perf_counter() - start if record_timing else 0.0
    return PowerCellResult(
        spec=spec,
        rejections=rejections,
        undefined_count=undefined,
        rate=rate,
        ci_low=ci_low,
        ci_high=ci_high,
        size_test_p=size_test_p,
        eta=theory.eta,
        v_quad=theory.v_quad,
        second_order=theory.second_order,
        wallclock_seconds=elapsed,
    )


def simulate_signed_roots(spec: CellSpec) -> np.ndarray:
    """Signed roots of the statistic over the cell's replicates.

    Undefined replicates yield NaN. Uses the same streams as
    :func:`run_cell`, so the two agree replicate-by-replicate.
    """
    x, po = draw_population(spec)
    bs = build_structure(spec, x)
    rng = _cell_rng(spec)
    out = []
    for wy, denom in _replicate_batches(spec, bs, po, rng):
        root = np.full_like(wy, np.nan)
        defined = denom > 0.0
        np.divide(wy, np.sqrt(denom, where=defined, out=np.ones_like(denom)), out=root, where=defined)
        out.append(root)
    return np.concatenate(out)


def _binomial_ci(successes: int, trials: int, method: str = "normal", level: float = 0.95):
    rate = successes / trials
    if method == "normal":
        z = norm.ppf(0.5 + level / 2.0)
        half = z * math.sqrt(max(rate * (1.0 - rate), 0.0) / trials)
        return max(rate - half, 0.0), min(rate + half, 1.0)
    if method == "exact":
        lo = 0.0 if successes == 0 else float(
            beta_dist.ppf((1 - level) / 2, successes, trials - successes + 1)
        )
        hi = 1.0 if successes == trials else float(
            beta_dist.ppf(1 - (1 - level) / 2, successes + 1, trials - successes)
        )
        return lo, hi
    raise ValueError(f"unknown CI method {method!r}")


def _size_test_p(rate: float, alpha: float, trials: int) -> float:
    """Two-sided one-proportion z-test of the null that the true size is alpha."""
    se = math.sqrt(alpha * (1.0 - alpha) / trials)
    z = (rate - alpha) / se
    return float(2.0 * norm.sf(abs(z)))


def _run_cell_safe(args) -> PowerCellResult:
    spec, ci_method, record_timing = args
    try:
        return run_cell(spec, ci_method=ci_method, record_timing=record_timing)
    except Exception as exc:  # per-cell failures must not abort the sweep
        return PowerCellResult(
            spec=spec,
            rejections=0,
            undefined_count=0,
            rate=math.nan,
            ci_low=math.nan,
            ci_high=math.nan,
            size_test_p=None,
            eta=math.nan,
            v_quad=math.nan,
            second_order=math.nan,
            wallclock_seconds=0.0,
            error=f"{type(exc).__name__}: {exc}",
        )


def sweep(
    specs: list[CellSpec],
    parallelism: int = 1,
    *,
    ci_method: str = "normal",
    record_timing: bool = True,
) -> list[PowerCellResult]:
    """Run all cells; results are in spec order regardless of worker count."""
    jobs = [(spec, ci_method, record_timing) for spec in specs]
    if parallelism <= 1 or len(specs) <= 1:
        return [_run_cell_safe(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_cell_safe, jobs))


@dataclass(frozen=True)
class SizeReport:
    """Bonferroni-corrected calibration summary over a sweep's null cells."""

    total_cells: int
    null_cells: int
    test_alpha: float
    threshold: float
    flagged: tuple[tuple, ...]  # (cell key, rate, size_test_p)

    def lines(self) -> list[str]:
        out = [
            f"calibration: {self.null_cells} null cells of {self.total_cells} total, "
            f"Bonferroni threshold {self.threshold:.3g}",
        ]
        if not self.flagged:
            out.append("no cells flagged")
        for key, rate, pval in self.flagged:
            out.append(f"FLAG {key}: rate={rate:.4f} p={pval:.3g}")
        return out


def bonferroni_size_report(results: list[PowerCellResult], test_alpha: float = 0.05) -> SizeReport:
    """Flag null cells whose calibration z-test rejects at the corrected level.

    The correction divides by the total number of cells in the run (null and
    alternative alike), mirroring a correction over the whole simulation.
    """
    total = len(results)
    if total == 0:
        return SizeReport(0, 0, test_alpha, math.nan, ())
    threshold = test_alpha / total
    null_cells = [r for r in results if r.size_test_p is not None]
    flagged = tuple(
        (r.spec.key(), r.rate, r.size_test_p)
        for r in null_cells
        if r.size_test_p < threshold
    )
    return SizeReport(
        total_cells=total,
        null_cells=len(null_cells),
        test_alpha=test_alpha,
        threshold=threshold,
        flagged=flagged,
    )


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------

_CONFIG_DEFAULTS = {
    "two_n": [96],
    "p": [1],
    "beta0": 0.0,
    "beta": 1.0,
    "beta_t": [0.7],
    "n_y": 100_000,
    "alpha": 0.05,
    "seed": 0,
    "even_b": True,
    "include_bcrd": True,
    "block_counts": "all",
    "parallelism": 1,
    "ci_method": "normal",
}

_LIST_KEYS = {"two_n", "p", "beta_t"}


def load_sweep_config(path) -> dict:
    """Read a sweep config (YAML key-value with nested lists), applying defaults."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError("sweep config must be a mapping")
    unknown = set(raw) - set(_CONFIG_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    config = dict(_CONFIG_DEFAULTS)
    config.update(raw)
    return _normalize_config(config)


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply CLI ``key=value`` overrides on top of a config mapping."""
    config = dict(config)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in _CONFIG_DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        config[key] = yaml.safe_load(value)
    return _normalize_config(config)


def _normalize_config(config: dict) -> dict:
    config = dict(config)
    for key in _LIST_KEYS:
        if not isinstance(config[key], list):
            config[key] = [config[key]]
    if config["block_counts"] not in ("all", None) and not isinstance(
        config["block_counts"], list
    ):
        config["block_counts"] = [config["block_counts"]]
    return config


def cells_from_config(config: dict) -> list[CellSpec]:
    """Expand a config's grids into the full list of cells."""
    cells: list[CellSpec] = []
    block_counts = config["block_counts"]
    for p in config["p"]:
        beta_val = config["beta"]
        beta = tuple(beta_val) if isinstance(beta_val, list) else tuple([float(beta_val)] * p)
        if len(beta) != p:
            raise ValueError(f"beta list length {len(beta)} does not match p={p}")
        for beta_t in config["beta_t"]:
            cells.extend(
                enumerate_cells(
                    config["two_n"],
                    p=p,
                    beta0=float(config["beta0"]),
                    beta_t=float(beta_t),
                    beta=beta,
                    n_y=int(config["n_y"]),
                    alpha=float(config["alpha"]),
                    seed=int(config["seed"]),
                    even_b=bool(config["even_b"]),
                    include_bcrd=bool(config["include_bcrd"]),
                    block_counts=None if block_counts in ("all", None) else [int(b) for b in block_counts],
                )
            )
    return cells


def write_results_csv(path, results: list[PowerCellResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            s = r.spec
            writer.writerow(
                [
                    s.two_n,
                    s.B,
                    s.p,
                    repr(s.beta_t),
                    s.design_kind.value,
                    s.n_y,
                    r.rejections,
                    r.undefined_count,
                    repr(r.rate),
                    repr(r.ci_low),
                    repr(r.ci_high),
                    "" if r.size_test_p is None else repr(r.size_test_p),
                    repr(r.eta),
                    repr(r.v_quad),
                    repr(r.second_order),
                    repr(r.wallclock_seconds),
                    r.error or "",
                ]
            )
