import itertools
from fractions import Fraction

import numpy as np
import pytest

from blockpower.designs import (
    Assignment,
    BlockStructure,
    DesignCovariance,
    design_moment,
    hierarchical_blocks,
    quadratic_form,
    quantile_blocks,
    read_assignment_csv,
    read_blocks_csv,
    sample_assignment,
    write_assignment_csv,
    write_blocks_csv,
)
from blockpower.designs import sample_assignment_batch
from blockpower.population import CovariateMatrix


def _block_sets(bs):
    return {frozenset(int(i) for i in row) for row in bs.blocks}


def balanced_labelings(n_B):
    """Brute-force oracle: all balanced +/-1 labelings of one block."""
    out = []
    for treated in itertools.combinations(range(n_B), n_B // 2):
        w = [-1] * n_B
        for i in treated:
            w[i] = 1
        out.append(tuple(w))
    return out


class TestBlockStructure:
    def test_partition_enforced(self):
        with pytest.raises(ValueError, match="partition"):
            BlockStructure(np.array([[0, 1], [1, 2]]))

    def test_odd_block_size_rejected(self):
        with pytest.raises(ValueError, match="even"):
            BlockStructure(np.array([[0, 1, 2], [3, 4, 5]]))

    def test_single_block(self):
        bs = BlockStructure.single_block(8)
        assert (bs.B, bs.n_B, bs.n) == (1, 8, 4)

    def test_block_of(self):
        bs = BlockStructure(np.array([[3, 0], [1, 2]]))
        assert list(bs.block_of()) == [0, 1, 1, 0]


class TestQuantileBlocks:
    def test_sorting_example(self):
        bs = quantile_blocks(np.array([3.0, 1.0, 4.0, 2.0]), B=2)
        assert _block_sets(bs) == {frozenset({1, 3}), frozenset({0, 2})}

    def test_single_block_is_complete_randomization(self):
        bs = quantile_blocks(np.arange(10.0), B=1)
        assert bs.B == 1 and bs.n_B == 10

    def test_pairs_from_sorted_input(self):
        x = np.array([0.1, 0.5, 1.2, 3.0, 3.1, 7.0])
        bs = quantile_blocks(x, B=3)
        assert _block_sets(bs) == {frozenset({0, 1}), frozenset({2, 3}), frozenset({4, 5})}

    def test_ties_broken_by_index(self):
        bs = quantile_blocks(np.zeros(4), B=2)
        assert [sorted(map(int, b)) for b in bs.blocks] == [[0, 1], [2, 3]]

    @pytest.mark.parametrize("B", [3, 5, 7])
    def test_nondivisor_rejected(self, B):
        with pytest.raises(ValueError):
            quantile_blocks(np.arange(8.0), B)

    def test_odd_block_size_rejected(self):
        # B=4 over 8 subjects is fine, B=8 gives n_B=1
        with pytest.raises(ValueError, match="even"):
            quantile_blocks(np.arange(8.0), 8)


class TestHierarchicalBlocks:
    def test_two_by_two_example(self):
        # first covariate splits {0..3} from {4..7}; second splits each stratum
        x1 = np.array([0, 1, 2, 3, 10, 11, 12, 13.0])
        x2 = np.array([0, 1, 0, 1, 1, 0, 1, 0.0])
        x = CovariateMatrix(np.column_stack([x1, x2]))
        bs = hierarchical_blocks(x, B=4)
        assert _block_sets(bs) == {
            frozenset({0, 2}),
            frozenset({1, 3}),
            frozenset({5, 7}),
            frozenset({4, 6}),
        }

    def test_constant_second_covariate_keeps_first_order(self):
        x1 = np.array([7.0, 3.0, 5.0, 1.0, 6.0, 2.0, 8.0, 4.0])
        x = CovariateMatrix(np.column_stack([x1, np.ones(8)]))
        bs = hierarchical_blocks(x, B=4)
        # strata by x1: {3,5},{1,7},{2,4},{0,6}; constant x2 keeps index order
        assert _block_sets(bs) == {
            frozenset({3, 5}),
            frozenset({1, 7}),
            frozenset({2, 4}),
            frozenset({0, 6}),
        }

    def test_extra_covariates_ignored(self):
        rng = np.random.default_rng(3)
        first_two = rng.standard_normal((16, 2))
        x2 = CovariateMatrix(first_two)
        x5 = CovariateMatrix(np.hstack([first_two, rng.standard_normal((16, 3))]))
        assert np.array_equal(hierarchical_blocks(x2, 4).blocks, hierarchical_blocks(x5, 4).blocks)

    def test_odd_b_rejected(self):
        x = CovariateMatrix(np.random.default_rng(0).standard_normal((12, 2)))
        with pytest.raises(ValueError, match="even B"):
            hierarchical_blocks(x, 3)

    def test_single_covariate_rejected(self):
        x = CovariateMatrix(np.zeros((8, 1)))
        with pytest.raises(ValueError, match="two covariates"):
            hierarchical_blocks(x, 2)


class TestSampleAssignment:
    def test_per_block_balance(self):
        rng = np.random.default_rng(0)
        bs = quantile_blocks(rng.standard_normal(24), B=4)
        for _ in range(50):
            a = sample_assignment(bs, rng)
            assert np.all(a.w[bs.blocks].sum(axis=1) == 0)
            assert a.w.sum() == 0

    def test_pair_block_is_fair_coin(self):
        bs = BlockStructure(np.array([[0, 1]]))
        rng = np.random.default_rng(42)
        heads = sum(int(sample_assignment(bs, rng).w[0] == 1) for _ in range(10_000))
        assert abs(heads / 10_000 - 0.5) < 0.02

    def test_mean_zero(self):
        bs = quantile_blocks(np.arange(8.0), B=2)
        rng = np.random.default_rng(7)
        w = sample_assignment_batch(bs, rng, 100_000)
        assert np.all(np.abs(w.mean(axis=0)) < 0.02)

    def test_pair_correlation_within_block(self):
        # same-block product moment for blocks of four: -1/3
        bs = quantile_blocks(np.arange(8.0), B=2)
        rng = np.random.default_rng(11)
        w = sample_assignment_batch(bs, rng, 100_000)
        i1, i2 = bs.blocks[0][0], bs.blocks[0][1]
        assert abs((w[:, i1] * w[:, i2]).mean() + 1.0 / 3.0) < 0.02

    def test_cross_block_independence(self):
        bs = quantile_blocks(np.arange(8.0), B=2)
        rng = np.random.default_rng(13)
        w = sample_assignment_batch(bs, rng, 100_000)
        i, j = bs.blocks[0][0], bs.blocks[1][0]
        assert abs((w[:, i] * w[:, j]).mean()) < 0.02

    def test_batch_matches_single_distribution(self):
        bs = BlockStructure(np.array([[0, 1, 2, 3]]))
        rng = np.random.default_rng(5)
        w = sample_assignment_batch(bs, rng, 60_000)
        labelings = {tuple(int(v) for v in row) for row in w}
        assert labelings == set(balanced_labelings(4))
        # uniform over the six labelings
        counts = np.array(
            [np.sum(np.all(w == np.array(lab), axis=1)) for lab in balanced_labelings(4)]
        )
        assert counts.min() > 0.8 * counts.max()


class TestDesignMoment:
    def test_pair_block(self):
        bs = BlockStructure(np.array([[0, 1]]))
        assert design_moment(bs, [0, 1]) == -1.0

    def test_triple_zero(self):
        bs = BlockStructure.single_block(6)
        assert design_moment(bs, [0, 3, 5]) == 0.0

    def test_quadruple_block_of_four(self):
        bs = BlockStructure.single_block(4)
        assert design_moment(bs, [0, 1, 2, 3]) == 1.0

    def test_cross_block_rejected(self):
        bs = BlockStructure(np.array([[0, 1], [2, 3]]))
        with pytest.raises(ValueError, match="share a block"):
            design_moment(bs, [0, 2])

    @pytest.mark.parametrize("n_B", [2, 4, 6])
    def test_enumeration_oracle(self, n_B):
        """Exhaustive balanced labelings reproduce every product moment exactly."""
        bs = BlockStructure.single_block(n_B)
        labelings = balanced_labelings(n_B)
        for size in (2, 3, 4):
            if size > n_B or (size == 4 and n_B <= 3):
                continue
            for idx in itertools.combinations(range(n_B), size):
                total = Fraction(0)
                for w in labelings:
                    prod = 1
                    for i in idx:
                        prod *= w[i]
                    total += prod
                expected = total / len(labelings)
                if size == 4 and n_B <= 3:
                    continue
                got = Fraction(design_moment(bs, list(idx))).limit_denominator(10**6)
                assert got == expected


class TestQuadraticForm:
    def test_constant_within_blocks_vanishes(self):
        bs = BlockStructure(np.array([[0, 1], [2, 3]]))
        dc = DesignCovariance(bs)
        assert quadratic_form(dc, np.array([5.0, 5.0, -2.0, -2.0])) == 0.0

    def test_single_pair(self):
        bs = BlockStructure(np.array([[0, 1]]))
        dc = DesignCovariance(bs)
        assert quadratic_form(dc, np.array([1.0, 0.0])) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("B,n_B", [(1, 2), (2, 4), (4, 4), (2, 8), (1, 16)])
    def test_dense_oracle(self, B, n_B):
        rng = np.random.default_rng(B * 100 + n_B)
        two_n = B * n_B
        bs = BlockStructure(rng.permutation(two_n).reshape(B, n_B))
        dc = DesignCovariance(bs)
        sigma = dc.dense()
        assert np.allclose(sigma, sigma.T)
        assert np.allclose(sigma[bs.blocks[0]][:, bs.blocks[0]].sum(axis=1), 0.0)
        for _ in range(20):
            z = rng.standard_normal(two_n)
            assert quadratic_form(dc, z) == pytest.approx(z @ sigma @ z, abs=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(17)
        bs = BlockStructure(rng.permutation(24).reshape(12, 2))
        dc = DesignCovariance(bs)
        for _ in range(100):
            z = rng.standard_normal(24)
            q = quadratic_form(dc, z)
            assert 0.0 <= q <= 2.0 * (z @ z) + 1e-12

    def test_pairwise_offdiagonal_is_minus_one(self):
        bs = quantile_blocks(np.arange(8.0), B=4)
        sigma = DesignCovariance(bs).dense()
        for b in bs.blocks:
            assert sigma[b[0], b[1]] == -1.0

    def test_dense_refuses_large(self):
        bs = BlockStructure.single_block(66)
        with pytest.raises(ValueError, match="dense"):
            DesignCovariance(bs).dense()


class TestAssignmentValidation:
    def test_unbalanced_rejected(self):
        bs = BlockStructure(np.array([[0, 1], [2, 3]]))
        with pytest.raises(ValueError, match="balanced"):
            Assignment(w=np.array([1, 1, 1, -1]), structure=bs)

    def test_bad_entries_rejected(self):
        bs = BlockStructure(np.array([[0, 1]]))
        with pytest.raises(ValueError, match="\\+1 or -1"):
            Assignment(w=np.array([1, 0]), structure=bs)


def test_blocks_csv_roundtrip(tmp_path):
    bs = quantile_blocks(np.random.default_rng(0).standard_normal(12), B=3)
    path = tmp_path / "blocks.csv"
    write_blocks_csv(path, bs)
    bs2 = read_blocks_csv(path)
    assert _block_sets(bs) == _block_sets(bs2)


def test_assignment_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    bs = quantile_blocks(rng.standard_normal(12), B=3)
    a = sample_assignment(bs, rng)
    path = tmp_path / "assignment.csv"
    write_assignment_csv(path, a)
    a2 = read_assignment_csv(path, bs)
    assert np.array_equal(a.w, a2.w)
