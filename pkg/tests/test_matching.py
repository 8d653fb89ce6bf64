import itertools

import numpy as np
import pytest

from blockpower.designs import DesignCovariance, quadratic_form
from blockpower.matching import (
    DistanceMatrix,
    Matching,
    greedy_pairing,
    mahalanobis_distances,
    min_weight_perfect_matching,
    pm_blockstructure,
    read_distances_csv,
    write_distances_csv,
)
from blockpower.population import CovariateMatrix


def brute_force_min_weight(d: np.ndarray) -> float:
    """Enumerate all (2n-1)!! perfect matchings; independent optimality oracle."""

    def rec(remaining):
        if not remaining:
            return 0.0
        first = remaining[0]
        best = np.inf
        for k in range(1, len(remaining)):
            partner = remaining[k]
            rest = remaining[1:k] + remaining[k + 1 :]
            best = min(best, d[first, partner] + rec(rest))
        return best

    return rec(list(range(d.shape[0])))


def squared_line_distances(points) -> DistanceMatrix:
    points = np.asarray(points, dtype=float)
    return DistanceMatrix((points[:, None] - points[None, :]) ** 2)


class TestDistanceMatrix:
    def test_asymmetric_rejected(self):
        bad = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(ValueError, match="symmetric"):
            DistanceMatrix(bad)

    def test_negative_rejected(self):
        bad = np.array([[0.0, -1.0], [-1.0, 0.0]])
        with pytest.raises(ValueError, match="negative"):
            DistanceMatrix(bad)

    def test_nonzero_diagonal_rejected(self):
        with pytest.raises(ValueError, match="diagonal"):
            DistanceMatrix(np.ones((2, 2)))


class TestMahalanobis:
    def test_scalar_case_orders_like_squared_difference(self):
        x = CovariateMatrix(np.array([[0.0], [1.0], [3.0], [10.0]]))
        d = mahalanobis_distances(x).d
        sq = (x.values[:, 0][:, None] - x.values[:, 0][None, :]) ** 2
        iu = np.triu_indices(4, k=1)
        assert np.array_equal(np.argsort(d[iu]), np.argsort(sq[iu]))

    def test_identical_rows_have_zero_distance(self):
        x = CovariateMatrix(
            np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0], [3.0, -1.0], [2.0, 5.0], [-4.0, 0.5]])
        )
        d = mahalanobis_distances(x).d
        assert d[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_whitened_covariates_give_euclidean(self):
        rng = np.random.default_rng(0)
        raw = rng.standard_normal((20, 3))
        # whiten so the sample covariance is the identity
        centered = raw - raw.mean(axis=0)
        cov = np.cov(centered, rowvar=False, ddof=1)
        chol = np.linalg.cholesky(np.linalg.inv(cov))
        white = centered @ chol
        x = CovariateMatrix(white)
        d = mahalanobis_distances(x).d
        diff = white[:, None, :] - white[None, :, :]
        euclid = (diff**2).sum(axis=2)
        assert np.allclose(d, euclid, atol=1e-10)

    def test_collinear_covariates_rejected(self):
        base = np.random.default_rng(1).standard_normal(10)
        x = CovariateMatrix(np.column_stack([base, 2.0 * base]))
        with pytest.raises(ValueError, match="singular"):
            mahalanobis_distances(x)

    def test_p_at_least_two_n_rejected(self):
        x = CovariateMatrix(np.random.default_rng(2).standard_normal((4, 5)))
        with pytest.raises(ValueError, match="singular"):
            mahalanobis_distances(x)


class TestMinWeightPerfectMatching:
    def test_two_clusters_on_a_line(self):
        d = squared_line_distances([0.0, 0.1, 5.0, 5.2])
        m = min_weight_perfect_matching(d)
        assert set(m.pairs) == {(0, 1), (2, 3)}

    def test_two_subjects(self):
        d = squared_line_distances([1.0, 4.0])
        m = min_weight_perfect_matching(d)
        assert m.pairs == ((0, 1),)
        assert m.total_weight == pytest.approx(9.0)

    def test_odd_count_rejected(self):
        d = squared_line_distances([0.0, 1.0, 2.0])
        with pytest.raises(ValueError, match="even"):
            min_weight_perfect_matching(d)

    @pytest.mark.parametrize("two_n", [6, 8, 10])
    def test_brute_force_oracle(self, two_n):
        rng = np.random.default_rng(two_n)
        for _ in range(10):
            pts = rng.random((two_n, 2)) * 10
            diff = pts[:, None, :] - pts[None, :, :]
            d = DistanceMatrix((diff**2).sum(axis=2))
            m = min_weight_perfect_matching(d)
            assert m.total_weight == pytest.approx(brute_force_min_weight(d.d), abs=1e-9)

    def test_never_worse_than_greedy(self):
        rng = np.random.default_rng(9)
        for two_n in (6, 8, 10, 12):
            pts = rng.random((two_n, 3))
            diff = pts[:, None, :] - pts[None, :, :]
            d = DistanceMatrix((diff**2).sum(axis=2))
            exact = min_weight_perfect_matching(d)
            greedy = greedy_pairing(d)
            assert exact.total_weight <= greedy.total_weight + 1e-12

    def test_scalar_matching_equals_sorted_adjacent_pairing(self):
        rng = np.random.default_rng(21)
        x = rng.standard_normal(12)
        d = squared_line_distances(x)
        m = min_weight_perfect_matching(d)
        order = np.argsort(x)
        expected = {
            tuple(sorted((int(order[2 * k]), int(order[2 * k + 1])))) for k in range(6)
        }
        assert set(m.pairs) == expected

    def test_scale_invariance_of_mahalanobis_matching(self):
        rng = np.random.default_rng(33)
        raw = rng.standard_normal((14, 2))
        x1 = CovariateMatrix(raw)
        x2 = CovariateMatrix(raw * np.array([3.0, -0.25]))
        m1 = min_weight_perfect_matching(mahalanobis_distances(x1))
        m2 = min_weight_perfect_matching(mahalanobis_distances(x2))
        assert set(m1.pairs) == set(m2.pairs)


class TestMatchingType:
    def test_pairs_must_partition(self):
        with pytest.raises(ValueError, match="partition"):
            Matching(pairs=((0, 1), (1, 2)), total_weight=0.0)

    def test_pairs_canonicalized(self):
        m = Matching(pairs=((3, 2), (1, 0)), total_weight=0.0)
        assert m.pairs == ((0, 1), (2, 3))


class TestPmBlockStructure:
    def test_relabeling(self):
        m = Matching(pairs=((0, 1), (2, 3)), total_weight=0.0)
        bs = pm_blockstructure(m)
        assert bs.B == 2 and bs.n_B == 2
        assert {frozenset(map(int, b)) for b in bs.blocks} == {frozenset({0, 1}), frozenset({2, 3})}

    def test_single_pair(self):
        bs = pm_blockstructure(Matching(pairs=((0, 1),), total_weight=0.0))
        assert bs.B == 1 and bs.n_B == 2

    def test_quadratic_form_roundtrip(self):
        rng = np.random.default_rng(4)
        pts = rng.standard_normal(8)
        m = min_weight_perfect_matching(squared_line_distances(pts))
        bs = pm_blockstructure(m)
        dc = DesignCovariance(bs)
        v = rng.random(8)
        expected = sum((v[i] - v[j]) ** 2 for i, j in m.pairs)
        assert quadratic_form(dc, v) == pytest.approx(expected, abs=1e-12)
        assert quadratic_form(dc, v) == pytest.approx(v @ dc.dense() @ v, abs=1e-12)


def test_distance_csv_roundtrip(tmp_path):
    d = squared_line_distances([0.0, 1.5, 2.0, 7.0])
    path = tmp_path / "d.csv"
    write_distances_csv(path, d)
    d2 = read_distances_csv(path)
    assert np.allclose(d.d, d2.d, atol=1e-12)
