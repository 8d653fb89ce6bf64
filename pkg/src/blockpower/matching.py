"""Mahalanobis distances and exact minimum-weight pairwise matching.

For multivariate covariates the pairwise design is built by computing the
Mahalanobis distance between every pair of subjects and solving an exact
minimum-weight perfect matching on the resulting complete graph. The solver
delegates to networkx's blossom implementation (O(n^3), exact optimum); a
greedy nearest-neighbor pairing is available behind an explicit flag for
benchmarking only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import networkx as nx
import numpy as np

from blockpower.designs import BlockStructure
from blockpower.population import CovariateMatrix

__all__ = [
    "DistanceMatrix",
    "Matching",
    "mahalanobis_distances",
    "min_weight_perfect_matching",
    "greedy_pairing",
    "pm_blockstructure",
    "write_matching_csv",
    "read_distances_csv",
    "write_distances_csv",
]

# Relative reciprocal-condition cutoff below which the sample covariance is
# treated as singular rather than silently regularized.
_RCOND_MIN = 1e-10


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric non-negative 2n x 2n distance matrix with zero diagonal."""

    d: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError(f"distance matrix must be square, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("distance matrix contains non-finite entries")
        if np.any(d < 0):
            raise ValueError("distance matrix contains negative entries")
        if not np.allclose(d, d.T, atol=1e-12):
            raise ValueError("distance matrix is not symmetric")
        if np.any(np.diag(d) != 0):
            raise ValueError("distance matrix diagonal must be zero")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def two_n(self) -> int:
        return self.d.shape[0]


@dataclass(frozen=True)
class Matching:
    """A perfect matching: n unordered index pairs and their total weight."""

    pairs: tuple[tuple[int, int], ...]
    total_weight: float

    def __post_init__(self) -> None:
        flat = [i for pair in self.pairs for i in pair]
        if sorted(flat) != list(range(2 * len(self.pairs))):
            raise ValueError("pairs must partition 0..2n-1")
        canonical = tuple(sorted(tuple(sorted(pair)) for pair in self.pairs))
        object.__setattr__(self, "pairs", canonical)


def mahalanobis_distances(x: CovariateMatrix) -> DistanceMatrix:
    """Squared Mahalanobis distance between every pair of subject covariate rows.

    Uses the sample covariance over the 2n rows (denominator 2n - 1). A
    singular covariance (collinear covariates or p >= 2n) is a hard error:
    silently pseudo-inverting would change the induced design unobservably.
    """
    values = x.values
    if x.two_n <= x.p:
        raise ValueError(
            f"sample covariance is singular: p={x.p} >= 2n={x.two_n} subjects"
        )
    cov = np.cov(values, rowvar=False, ddof=1).reshape(x.p, x.p)
    rcond = np.linalg.cond(cov)
    if not np.isfinite(rcond) or rcond > 1.0 / _RCOND_MIN:
        raise ValueError(
            "sample covariance of the covariates is singular or near-singular "
            f"(condition number {rcond:.3g}); check for collinear columns"
        )
    inv = np.linalg.inv(cov)
    diff = values[:, None, :] - values[None, :, :]
    d = np.einsum("ijk,kl,ijl->ij", diff, inv, diff)
    d = np.maximum((d + d.T) / 2.0, 0.0)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d)


def min_weight_perfect_matching(d: DistanceMatrix) -> Matching:
    """Exact minimum-total-weight perfect matching on the complete graph."""
    two_n = d.two_n
    if two_n % 2 != 0:
        raise ValueError(f"perfect matching needs an even subject count, got {two_n}")
    if two_n == 2:
        return Matching(pairs=((0, 1),), total_weight=float(d.d[0, 1]))
    graph = nx.Graph()
    for i in range(two_n):
        for j in range(i + 1, two_n):
            graph.add_edge(i, j, weight=float(d.d[i, j]))
    mate = nx.min_weight_matching(graph)
    pairs = tuple(tuple(sorted(pair)) for pair in mate)
    if len(pairs) != two_n // 2:
        raise RuntimeError("matching is not perfect")  # complete even graph: unreachable
    weight = float(sum(d.d[i, j] for i, j in pairs))
    return Matching(pairs=pairs, total_weight=weight)


def greedy_pairing(d: DistanceMatrix) -> Matching:
    """Nearest-neighbor pairing; benchmarking aid only, never optimal by contract.

    Repeatedly pairs the globally closest unmatched pair, breaking ties by
    lexicographic pair index.
    """
    two_n = d.two_n
    if two_n % 2 != 0:
        raise ValueError(f"perfect matching needs an even subject count, got {two_n}")
    remaining = list(range(two_n))
    pairs = []
    while remaining:
        best = None
        for a_pos, i in enumerate(remaining):
            for j in remaining[a_pos + 1 :]:
                key = (d.d[i, j], i, j)
                if best is None or key < best:
                    best = key
        _, i, j = best
        pairs.append((i, j))
        remaining.remove(i)
        remaining.remove(j)
    weight = float(sum(d.d[i, j] for i, j in pairs))
    return Matching(pairs=tuple(pairs), total_weight=weight)


def pm_blockstructure(m: Matching) -> BlockStructure:
    """Re-label the n matched pairs as n blocks of size 2."""
    return BlockStructure(np.array(m.pairs, dtype=np.intp))


def write_matching_csv(path, m: Matching, d: DistanceMatrix | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if d is None:
            writer.writerow(["subject_a", "subject_b"])
            for i, j in m.pairs:
                writer.writerow([i, j])
        else:
            writer.writerow(["subject_a", "subject_b", "distance"])
            for i, j in m.pairs:
                writer.writerow([i, j, repr(float(d.d[i, j]))])


def write_distances_csv(path, d: DistanceMatrix) -> None:
    np.savetxt(path, d.d, delimiter=",")


def read_distances_csv(path) -> DistanceMatrix:
    return DistanceMatrix(np.loadtxt(path, delimiter=",", ndmin=2))
