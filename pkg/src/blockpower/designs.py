"""Block structures, balanced within-block randomization, and the design covariance.

A block structure partitions the 2n subjects into B blocks of identical even
size n_B = 2n/B. Randomization assigns exactly n_B/2 subjects of every block
to each arm, uniformly over the balanced labelings and independently across
blocks. Under this scheme the assignment vector has a block-diagonal
covariance with 1 on the diagonal and -1/(n_B - 1) within blocks; it is kept
implicit and all quadratic forms are evaluated blockwise in O(2n).

B = 1 is admitted as the degenerate one-block structure (balanced complete
randomization). Divisibility violations are hard errors: only B dividing 2n
with even n_B is supported.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from blockpower.population import CovariateMatrix

__all__ = [
    "BlockStructure",
    "Assignment",
    "DesignCovariance",
    "quantile_blocks",
    "hierarchical_blocks",
    "sample_assignment",
    "design_moment",
    "quadratic_form",
    "write_blocks_csv",
    "read_blocks_csv",
    "write_assignment_csv",
    "read_assignment_csv",
]

# Dense covariance materialization is a test-oracle convenience only.
DENSE_LIMIT = 64


@dataclass(frozen=True)
class BlockStructure:
    """Partition of subject indices 0..2n-1 into B blocks of equal even size."""

    blocks: np.ndarray  # (B, n_B) integer index array

    def __post_init__(self) -> None:
        blocks = np.asarray(self.blocks, dtype=np.intp)
        if blocks.ndim != 2:
            raise ValueError("blocks must be a (B, n_B) index array")
        B, n_B = blocks.shape
        if B < 1 or n_B < 2 or n_B % 2 != 0:
            raise ValueError(f"need B >= 1 and even n_B >= 2, got B={B}, n_B={n_B}")
        flat = np.sort(blocks.ravel())
        if not np.array_equal(flat, np.arange(B * n_B)):
            raise ValueError("blocks must partition 0..2n-1 exactly")
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def B(self) -> int:
        return self.blocks.shape[0]

    @property
    def n_B(self) -> int:
        return self.blocks.shape[1]

    @property
    def two_n(self) -> int:
        return self.blocks.size

    @property
    def n(self) -> int:
        return self.blocks.size // 2

    def block_of(self) -> np.ndarray:
        """Length-2n vector mapping subject index to block index."""
        labels = np.empty(self.two_n, dtype=np.intp)
        for b in range(self.B):
            labels[self.blocks[b]] = b
        return labels

    @classmethod
    def single_block(cls, two_n: int) -> "BlockStructure":
        """The B = 1 structure: balanced complete randomization."""
        return cls(np.arange(two_n).reshape(1, two_n))


@dataclass(frozen=True)
class Assignment:
    """A +1/-1 arm labeling balanced within every block of its structure."""

    w: np.ndarray
    structure: BlockStructure

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.int8)
        if w.shape != (self.structure.two_n,):
            raise ValueError(
                f"assignment length {w.shape} does not match 2n={self.structure.two_n}"
            )
        if not np.all(np.abs(w) == 1):
            raise ValueError("assignment entries must be +1 or -1")
        if np.any(w[self.structure.blocks].sum(axis=1) != 0):
            raise ValueError("assignment is not balanced within every block")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


def quantile_blocks(x: np.ndarray, B: int) -> BlockStructure:
    """Blocks from sorting a single covariate and slicing at sample quantiles.

    Block b holds the subjects with the b-th smallest n_B values of ``x``.
    Ties are broken by original subject index (stable sort), so the result is
    deterministic across runs and platforms.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a 1-D covariate vector")
    two_n = x.shape[0]
    _check_divisibility(two_n, B)
    order = np.argsort(x, kind="stable")
    return BlockStructure(order.reshape(B, two_n // B))


def hierarchical_blocks(x: CovariateMatrix, B: int) -> BlockStructure:
    """Two-level blocking on the first two covariates.

    Sort on covariate 1 and slice into B/2 strata at sample quantiles; within
    each stratum sort on covariate 2 and split into 2 blocks. Covariates
    beyond the second are ignored. Requires even B.
    """
    if x.p < 2:
        raise ValueError("hierarchical blocking needs at least two covariates")
    if B % 2 != 0:
        raise ValueError(f"hierarchical blocking needs even B, got B={B}")
    two_n = x.two_n
    _check_divisibility(two_n, B)
    n_B = two_n // B
    stratum_size = 2 * n_B
    outer = np.argsort(x.column(0), kind="stable").reshape(B // 2, stratum_size)
    blocks = np.empty((B, n_B), dtype=np.intp)
    for s in range(B // 2):
        members = outer[s]
        inner = members[np.argsort(x.column(1)[members], kind="stable")]
        blocks[2 * s] = inner[:n_B]
        blocks[2 * s + 1] = inner[n_B:]
    return BlockStructure(blocks)


def sample_assignment(bs: BlockStructure, rng: np.random.Generator) -> Assignment:
    """Uniformly random balanced labeling per block, independent across blocks."""
    half = bs.n_B // 2
    template = np.concatenate([np.ones(half, dtype=np.int8), -np.ones(half, dtype=np.int8)])
    w = np.empty(bs.two_n, dtype=np.int8)
    for b in range(bs.B):
        w[bs.blocks[b]] = rng.permutation(template)
    return Assignment(w=w, structure=bs)


def sample_assignment_batch(
    bs: BlockStructure, rng: np.random.Generator, count: int
) -> np.ndarray:
    """``count`` independent balanced assignments as a (count, 2n) float array.

    Within each block the subjects holding the n_B/2 smallest of n_B iid
    uniforms get +1; ranking iid uniforms picks a uniformly random balanced
    subset, so the distribution matches :func:`sample_assignment`.
    """
    u = rng.random((count, bs.B, bs.n_B))
    ranks = np.argsort(np.argsort(u, axis=2), axis=2)
    signs = np.where(ranks < bs.n_B // 2, 1.0, -1.0)
    w = np.empty((count, bs.two_n))
    w[:, bs.blocks.ravel()] = signs.reshape(count, -1)
    return w


def design_moment(bs: BlockStructure, indices: Sequence[int]) -> float:
    """Exact product moment E[prod W_i] for 2-4 distinct co-blocked indices.

    Pairs give -1/(n_B - 1), triples 0, and quadruples
    3/((n_B - 3)(n_B - 1)); the quadruple formula has a pole at n_B <= 3.
    """
    idx = list(indices)
    if len(set(idx)) != len(idx):
        raise ValueError(f"indices must be distinct, got {idx}")
    if not 2 <= len(idx) <= 4:
        raise ValueError(f"need 2 to 4 indices, got {len(idx)}")
    labels = bs.block_of()
    if len({int(labels[i]) for i in idx}) != 1:
        raise ValueError(f"indices {idx} do not share a block")
    n_B = bs.n_B
    if len(idx) == 2:
        return -1.0 / (n_B - 1)
    if len(idx) == 3:
        return 0.0
    if n_B <= 3:
        raise ValueError(f"fourth moment undefined for n_B={n_B} <= 3")
    return 3.0 / ((n_B - 3) * (n_B - 1))


@dataclass(frozen=True)
class DesignCovariance:
    """Implicit block-diagonal covariance of the balanced block assignment.

    Diagonal 1, within-block off-diagonal -1/(n_B - 1), zero across blocks.
    Never materialized densely except for small test oracles.
    """

    structure: BlockStructure

    @property
    def n_B(self) -> int:
        return self.structure.n_B

    def quadratic(self, z: np.ndarray) -> float:
        return quadratic_form(self, z)

    def dense(self) -> np.ndarray:
        """Dense 2n x 2n matrix; refuses above DENSE_LIMIT subjects."""
        bs = self.structure
        if bs.two_n > DENSE_LIMIT:
            raise ValueError(
                f"dense covariance limited to 2n <= {DENSE_LIMIT}, got {bs.two_n}"
            )
        off = -1.0 / (bs.n_B - 1)
        sigma = np.zeros((bs.two_n, bs.two_n))
        for b in range(bs.B):
            members = bs.blocks[b]
            sigma[np.ix_(members, members)] = off
        np.fill_diagonal(sigma, 1.0)
        return sigma


def quadratic_form(dc: DesignCovariance, z: np.ndarray) -> float:
    """z' Sigma z evaluated blockwise as (n_B/(n_B-1)) * sum of centered squares."""
    bs = dc.structure
    z = np.asarray(z, dtype=float)
    if z.shape != (bs.two_n,):
        raise ValueError(f"z must have length 2n={bs.two_n}, got {z.shape}")
    zb = z[bs.blocks]
    centered = zb - zb.mean(axis=1, keepdims=True)
    return float(bs.n_B / (bs.n_B - 1) * np.sum(centered * centered))


def _check_divisibility(two_n: int, B: int) -> None:
    if two_n <= 0 or two_n % 2 != 0:
        raise ValueError(f"subject count must be positive and even, got {two_n}")
    if B < 1 or two_n % B != 0:
        raise ValueError(f"B={B} does not divide 2n={two_n}")
    if (two_n // B) % 2 != 0:
        raise ValueError(f"block size 2n/B={two_n // B} must be even (2n={two_n}, B={B})")


def write_blocks_csv(path, bs: BlockStructure) -> None:
    labels = bs.block_of()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "block"])
        for i in range(bs.two_n):
            writer.writerow([i, int(labels[i])])


def read_blocks_csv(path) -> BlockStructure:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["subject", "block"]:
            raise ValueError(f"unexpected blocks CSV header: {header}")
        pairs = [(int(row[0]), int(row[1])) for row in reader]
    two_n = len(pairs)
    labels = np.full(two_n, -1, dtype=np.intp)
    for subject, block in pairs:
        if not 0 <= subject < two_n:
            raise ValueError(f"subject id {subject} out of range for 2n={two_n}")
        labels[subject] = block
    B = int(labels.max()) + 1
    if two_n % B != 0:
        raise ValueError(f"blocks CSV has unequal block sizes (2n={two_n}, B={B})")
    n_B = two_n // B
    blocks = np.empty((B, n_B), dtype=np.intp)
    for b in range(B):
        members = np.flatnonzero(labels == b)
        if members.shape[0] != n_B:
            raise ValueError(f"block {b} has {members.shape[0]} members, expected {n_B}")
        blocks[b] = members
    return BlockStructure(blocks)


def write_assignment_csv(path, a: Assignment) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "w"])
        for i in range(a.structure.two_n):
            writer.writerow([i, int(a.w[i])])


def read_assignment_csv(path, bs: BlockStructure) -> Assignment:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["subject", "w"]:
            raise ValueError(f"unexpected assignment CSV header: {header}")
        w = np.zeros(bs.two_n, dtype=np.int8)
        seen = 0
        for row in reader:
            w[int(row[0])] = int(row[1])
            seen += 1
    if seen != bs.two_n:
        raise ValueError(f"assignment CSV has {seen} rows, expected {bs.two_n}")
    return Assignment(w=w, structure=bs)
