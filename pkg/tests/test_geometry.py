"""Projective primitive tests, each checked against hand or brute-force values."""

import numpy as np
import pytest

from planefilter.errors import DegenerateSample
from planefilter.geometry import (
    HomographyModel,
    apply_homography,
    fit_homography_dlt,
    inlier_set,
    normalize_homography,
    quasi_affine_mask,
    quasi_affine_set,
    reprojection_errors,
    sample_degeneracy_check,
)

from conftest import matches_through, random_projective, random_similarity

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def brute_quasi_affine(h, anchor1, anchor2, matches):
    """Per-point scalar sign check, both directions."""
    h_inv = np.linalg.inv(h)
    wa1 = h[2, 0] * anchor1[0] + h[2, 1] * anchor1[1] + h[2, 2]
    wa2 = h_inv[2, 0] * anchor2[0] + h_inv[2, 1] * anchor2[1] + h_inv[2, 2]
    keep = []
    for i, (x1, y1, x2, y2) in enumerate(matches):
        w1 = h[2, 0] * x1 + h[2, 1] * y1 + h[2, 2]
        w2 = h_inv[2, 0] * x2 + h_inv[2, 1] * y2 + h_inv[2, 2]
        if w1 * wa1 > 0 and w2 * wa2 > 0:
            keep.append(i)
    return np.array(keep, dtype=int)


class TestFitHomography:
    def test_unit_square_identity(self):
        m = np.hstack([UNIT_SQUARE, UNIT_SQUARE])
        h, _ = fit_homography_dlt(m)
        assert np.allclose(h, np.eye(3) / np.sqrt(3.0), atol=1e-12)

    def test_recovers_known_homography(self, rng):
        h_gt = random_projective(rng)
        pts = rng.uniform(0, 500, size=(8, 2))
        m = matches_through(h_gt, pts)
        h, _ = fit_homography_dlt(m)
        assert reprojection_errors(h, m).max() < 1e-6

    def test_collinear_image1_degenerate(self):
        pts1 = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [30.0, 0.0]])
        pts2 = np.array([[0.0, 0.0], [10.0, 5.0], [25.0, 0.0], [30.0, 40.0]])
        with pytest.raises(DegenerateSample):
            fit_homography_dlt(np.hstack([pts1, pts2]))

    def test_four_point_fit_is_exact(self, rng):
        worst = 0.0
        for _ in range(200):
            h_gt = random_projective(rng)
            pts = rng.uniform(0, 400, size=(4, 2))
            if np.linalg.norm(pts[1] - pts[0]) < 5:
                continue
            m = matches_through(h_gt, pts)
            try:
                h, _ = fit_homography_dlt(m)
            except DegenerateSample:
                continue
            worst = max(worst, reprojection_errors(h, m).max())
        assert worst < 1e-6


class TestReprojectionError:
    def test_zero_for_fixed_point(self):
        e = reprojection_errors(np.eye(3), [[0, 0, 0, 0]])
        assert e[0] == 0.0

    def test_euclidean_distance(self):
        e = reprojection_errors(np.eye(3), [[0, 0, 3, 4]])
        assert e[0] == pytest.approx(5.0, abs=1e-12)

    def test_anisotropic_scale(self):
        h = np.diag([2.0, 1.0, 1.0])
        e = reprojection_errors(h, [[1, 0, 2, 0], [1, 0, 3, 0]])
        assert e[0] == pytest.approx(0.0, abs=1e-12)
        assert e[1] == pytest.approx(1.0, abs=1e-12)  # max(1, 0.5)

    def test_symmetry(self, rng):
        for _ in range(20):
            h = random_projective(rng)
            m = rng.uniform(0, 300, size=(10, 4))
            swapped = m[:, [2, 3, 0, 1]]
            e1 = reprojection_errors(h, m)
            e2 = reprojection_errors(np.linalg.inv(h), swapped)
            assert np.allclose(e1, e2, atol=1e-9)

    def test_point_at_infinity_is_inf(self):
        h = normalize_homography(np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 1.0]]))
        e = reprojection_errors(h, [[1.0, 0.0, 5.0, 5.0]])
        assert np.isinf(e[0])


class TestQuasiAffine:
    def test_identity_keeps_all(self, rng):
        m = rng.uniform(0, 100, size=(15, 4))
        idx = quasi_affine_set(np.eye(3), (0.0, 0.0), (0.0, 0.0), m)
        assert len(idx) == 15

    def test_sign_flip_excluded(self):
        h = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, -0.1, 1.0]])
        anchor1 = np.array([0.0, 0.0])
        anchor2 = apply_homography(h, anchor1)
        good = np.hstack([[[0.0, 2.0]], apply_homography(h, [[0.0, 2.0]])])
        bad = np.array([[0.0, 20.0, 0.0, -1.0]])  # last coord -1 vs anchor +1
        m = np.vstack([good, bad])
        idx = quasi_affine_set(h, anchor1, anchor2, m)
        assert list(idx) == [0]

    def test_all_behind_is_empty(self):
        h = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, -0.1, 1.0]])
        m = np.array([[0.0, 20.0, 0.0, 5.0], [3.0, 30.0, 1.0, 7.0]])
        idx = quasi_affine_set(h, (0.0, 0.0), (0.0, 0.0), m)
        assert len(idx) == 0

    def test_matches_brute_force(self, rng):
        for _ in range(100):
            h = random_projective(rng, strength=5e-3)
            anchor1 = rng.uniform(0, 200, size=2)
            anchor2 = apply_homography(h, anchor1)
            m = rng.uniform(-500, 700, size=(20, 4))
            got = quasi_affine_set(h, anchor1, anchor2, m)
            want = brute_quasi_affine(h, anchor1, anchor2, m)
            assert np.array_equal(got, want)


class TestInlierSet:
    def _model(self, h, sample):
        h = normalize_homography(h)
        return HomographyModel(
            h=h, h_inv=np.linalg.inv(h), anchor1=sample[0, :2], anchor2=sample[0, 2:],
            sample=sample, smallest_singular=1.0,
        )

    def test_exact_inliers_all_kept(self, rng):
        h = random_projective(rng)
        m = matches_through(h, rng.uniform(0, 400, size=(30, 2)))
        model = self._model(h, m[:4])
        assert len(inlier_set(model, m, 1e-3)) == 30

    def test_zero_threshold_empty_on_noise(self, rng):
        h = random_projective(rng)
        m = matches_through(h, rng.uniform(0, 400, size=(10, 2)))
        m[:, 2:] += rng.normal(0, 1, size=(10, 2))
        model = self._model(h, m[:4])
        assert len(inlier_set(model, m, 0.0)) == 0

    def test_mixed_errors_at_relaxed_threshold(self):
        m = np.array([
            [0.0, 0.0, 0.5, 0.0],
            [10.0, 0.0, 17.0, 0.0],
            [0.0, 10.0, 20.0, 10.0],
        ])
        model = self._model(np.eye(3), np.hstack([UNIT_SQUARE * 100, UNIT_SQUARE * 100]))
        assert list(inlier_set(model, m, 15.0)) == [0, 1]

    def test_monotone_in_threshold(self, rng):
        h = random_projective(rng)
        m = matches_through(h, rng.uniform(0, 400, size=(40, 2)))
        m[:, 2:] += rng.normal(0, 3, size=(40, 2))
        model = self._model(h, m[:4])
        for t1, t2 in [(0.5, 1.0), (1.0, 5.0), (5.0, 15.0)]:
            s1 = set(inlier_set(model, m, t1))
            s2 = set(inlier_set(model, m, t2))
            assert s1 <= s2


class TestSampleDegeneracy:
    def test_close_keypoints_rejected(self):
        sample = np.array([
            [0.0, 0.0, 0.0, 0.0],
            [3.0, 0.0, 100.0, 0.0],
            [100.0, 100.0, 100.0, 100.0],
            [0.0, 100.0, 0.0, 100.0],
        ])
        assert not sample_degeneracy_check(sample, 1.0, t_l=15.0)

    def test_spread_square_accepted(self):
        square = UNIT_SQUARE * 100.0
        m = np.hstack([square, square])
        _, sv = fit_homography_dlt(m)
        assert sv > 0.05
        assert sample_degeneracy_check(m, sv, t_l=15.0)

    def test_near_collinear_rejected_by_singular_value(self):
        pts1 = np.array([
            [0.0, 0.0], [50.0, 1e-4], [100.0, -1e-4], [150.0, 1e-4],
        ])
        m = np.hstack([pts1, pts1])
        _, sv = fit_homography_dlt(m)
        assert sv <= 0.05
        assert not sample_degeneracy_check(m, sv, t_l=15.0)


def test_similarity_invariance(rng):
    h = random_projective(rng)
    m = matches_through(h, rng.uniform(50, 400, size=(40, 2)))
    m[:, 2:] += rng.normal(0, 2, size=(40, 2))
    h_fit, _ = fit_homography_dlt(m)
    base_inliers = reprojection_errors(h_fit, m) <= 2.0

    for _ in range(10):
        s1 = random_similarity(rng)
        s2 = random_similarity(rng)
        mt = np.hstack([
            apply_homography(s1, m[:, :2]),
            apply_homography(s2, m[:, 2:]),
        ])
        h_t, _ = fit_homography_dlt(mt)
        h_back = normalize_homography(np.linalg.inv(s2) @ h_t @ s1)
        inliers = reprojection_errors(h_back, m) <= 2.0
        assert np.array_equal(inliers, base_inliers)
