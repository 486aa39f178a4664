"""Sequential plane search tests against labeled synthetic scenes."""

import numpy as np
import pytest

from planefilter.errors import NoCompatiblePlane, NoModel
from planefilter.geometry import HomographyModel, normalize_homography, reprojection_errors
from planefilter.mop import (
    ModelBuffer,
    MopConfig,
    SinglePlaneFamily,
    assign_homography,
    mop_filter,
    ransac_plane,
)
from planefilter.synth import OUTLIER, SceneSpec, gen_planar_scene

from conftest import matches_through, random_projective


def _affine_model(h, counts=None):
    """Model wrapper around an affine-like map; quasi-affinity is trivial."""
    h = normalize_homography(h)
    sample = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [100.0, 0.0, 100.0, 0.0],
        [100.0, 100.0, 100.0, 100.0],
        [0.0, 100.0, 0.0, 100.0],
    ])
    model = HomographyModel(h=h, h_inv=np.linalg.inv(h), anchor1=sample[0, :2],
                            anchor2=sample[0, 2:], sample=sample, smallest_singular=1.0)
    if counts is not None:
        model.inliers_weak = np.arange(counts)
    return model


class TestRansacPlane:
    def test_single_exact_plane(self, rng):
        h = random_projective(rng)
        m = matches_through(h, rng.uniform(20, 400, size=(50, 2)))
        cfg = MopConfig(seed=3)
        model = ransac_plane(m, np.arange(50), ModelBuffer(5), cfg,
                             np.random.default_rng(cfg.seed))
        assert len(model.inliers_weak) == 50
        assert reprojection_errors(model.h, m).max() < 1e-6

    def test_minimal_input(self, rng):
        h = random_projective(rng)
        m = matches_through(h, np.array([[0.0, 0.0], [200.0, 10.0], [190.0, 180.0], [15.0, 210.0]]))
        cfg = MopConfig(seed=1)
        model = ransac_plane(m, np.arange(4), ModelBuffer(5), cfg,
                             np.random.default_rng(cfg.seed))
        assert len(model.inliers_weak) == 4

    def test_degenerate_minimal_input_raises(self):
        m = np.array([
            [0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 1.0, 0.0],
            [2.0, 0.0, 2.0, 0.0],
            [3.0, 0.0, 3.0, 0.0],
        ])
        cfg = MopConfig(seed=1, c_max=60)
        with pytest.raises(NoModel):
            ransac_plane(m, np.arange(4), ModelBuffer(5), cfg,
                         np.random.default_rng(cfg.seed))

    def test_buffer_bootstrap_keeps_coverage(self, rng):
        scene = gen_planar_scene(SceneSpec(planes=1, matches_per_plane=60,
                                           noise_sigma=1.0, outlier_fraction=0.4, seed=9))
        m = scene.matches
        cfg = MopConfig(seed=4)
        family = SinglePlaneFamily(cfg)
        gt_support = np.nonzero(scene.labels == 0)[0]
        seed_model = family.fit(m[gt_support[:4]])
        assert seed_model is not None
        buffer = ModelBuffer(5)
        seed_mask = seed_model.inlier_mask(m, cfg.t_l)
        buffer.offer(seed_model, seed_mask, None)
        seed_count = int(seed_mask.sum())
        model = ransac_plane(m, np.arange(len(m)), buffer, cfg,
                             np.random.default_rng(cfg.seed))
        assert len(model.inliers_weak) >= seed_count


class TestMopFilter:
    def test_two_plane_scene(self):
        scene = gen_planar_scene(SceneSpec(planes=2, matches_per_plane=100,
                                           noise_sigma=0.0, outlier_fraction=0.2, seed=70))
        result = mop_filter(scene.matches, MopConfig(seed=0))
        assert len(result.planes) >= 2
        kept = set(result.kept)
        inlier_idx = np.nonzero(scene.labels != OUTLIER)[0]
        outlier_idx = np.nonzero(scene.labels == OUTLIER)[0]
        assert sum(1 for i in inlier_idx if i in kept) == len(inlier_idx)
        discarded_outliers = sum(1 for i in outlier_idx if i not in kept)
        assert discarded_outliers >= 0.9 * len(outlier_idx)

    def test_pure_outliers(self, rng):
        m = np.hstack([rng.uniform(0, 640, size=(100, 2)), rng.uniform(0, 480, size=(100, 2))])
        result = mop_filter(m, MopConfig(seed=5, c_max=300))
        for j, mi in enumerate(result.kept):
            plane = result.planes[result.assignment[j]]
            assert plane.inlier_mask(m[mi][None, :], 15.0)[0]

    def test_single_plane_keeps_all(self):
        scene = gen_planar_scene(SceneSpec(planes=1, matches_per_plane=80,
                                           noise_sigma=0.0, outlier_fraction=0.0, seed=11))
        result = mop_filter(scene.matches, MopConfig(seed=2))
        assert len(result.planes) == 1
        assert len(result.kept) == len(scene.matches)

    def test_passthrough_below_minimum(self):
        m = np.array([[0.0, 0.0, 1.0, 1.0], [2.0, 2.0, 3.0, 3.0]])
        result = mop_filter(m, MopConfig(seed=0))
        assert result.passthrough
        assert list(result.kept) == [0, 1]
        assert len(result.planes) == 0

    def test_determinism(self):
        scene = gen_planar_scene(SceneSpec(planes=2, matches_per_plane=60,
                                           noise_sigma=1.0, outlier_fraction=0.25, seed=21))
        a = mop_filter(scene.matches, MopConfig(seed=13))
        b = mop_filter(scene.matches, MopConfig(seed=13))
        assert np.array_equal(a.kept, b.kept)
        assert np.array_equal(a.assignment, b.assignment)
        assert len(a.planes) == len(b.planes)
        for pa, pb in zip(a.planes, b.planes):
            assert np.array_equal(pa.h, pb.h)

    def test_kept_are_inliers_of_assignment(self):
        scene = gen_planar_scene(SceneSpec(planes=3, matches_per_plane=60,
                                           noise_sigma=1.0, outlier_fraction=0.2, seed=33))
        cfg = MopConfig(seed=8)
        result = mop_filter(scene.matches, cfg)
        for j, mi in enumerate(result.kept):
            plane = result.planes[result.assignment[j]]
            assert plane.inlier_mask(scene.matches[mi][None, :], cfg.t_l)[0]

    def test_noise_free_recall(self):
        scene = gen_planar_scene(SceneSpec(planes=3, matches_per_plane=60,
                                           noise_sigma=0.0, outlier_fraction=0.0, seed=44))
        result = mop_filter(scene.matches, MopConfig(seed=1))
        gt_inliers = set()
        for pi, h in enumerate(scene.gt_planes):
            support = np.nonzero(scene.labels == pi)[0]
            errs = reprojection_errors(h, scene.matches[support])
            gt_inliers.update(support[errs <= 1.0])
        kept = set(result.kept)
        recall = len(gt_inliers & kept) / len(gt_inliers)
        assert recall >= 0.99


class TestBuffer:
    def test_ordering_invariant(self, rng):
        scene = gen_planar_scene(SceneSpec(planes=3, matches_per_plane=50,
                                           noise_sigma=0.5, outlier_fraction=0.0, seed=55))
        m = scene.matches
        cfg = MopConfig(seed=0)
        family = SinglePlaneFamily(cfg)
        models = []
        for pi in range(3):
            support = np.nonzero(scene.labels == pi)[0]
            model = family.fit(m[support[:4]])
            if model is not None:
                models.append(model)
        junk = family.fit(m[[0, 51, 101, 140]])
        if junk is not None:
            models.append(junk)
        buffer = ModelBuffer(3)
        best_mask = models[0].inlier_mask(m, cfg.t_l)
        for model in models[1:]:
            buffer.offer(model, model.inlier_mask(m, cfg.t_l), best_mask)
            assert all(a >= b for a, b in zip(buffer.scores, buffer.scores[1:]))
            assert len(buffer.models) <= 3


class TestAssignHomography:
    def test_single_compatible(self):
        planes = [_affine_model(np.eye(3), counts=10)]
        assert assign_homography([0.0, 0.0, 1.0, 0.0], planes) == 0

    def test_no_compatible_raises(self):
        planes = [_affine_model(np.eye(3), counts=10)]
        with pytest.raises(NoCompatiblePlane):
            assign_homography([0.0, 0.0, 100.0, 0.0], planes)

    def test_consensus_gate_two_planes(self):
        trans = np.array([[1.0, 0, -1.9], [0, 1.0, 0], [0, 0, 1.0]])
        match = [0.0, 0.0, 0.1, 0.0]  # error 0.1 vs identity, 2.0 vs translation

        # small accurate plane loses to the big one: q = median(20, 300) = 160
        planes = [_affine_model(np.eye(3), counts=20), _affine_model(trans, counts=300)]
        assert assign_homography(match, planes) == 1

        # accurate plane clears the gate: q = median(300, 200) = 250
        planes = [_affine_model(np.eye(3), counts=300), _affine_model(trans, counts=200)]
        assert assign_homography(match, planes) == 0

        # equal consensus: minimum error wins
        planes = [_affine_model(np.eye(3), counts=100), _affine_model(trans, counts=100)]
        assert assign_homography(match, planes) == 0

    def test_six_planes_against_enumeration(self, rng):
        for _ in range(50):
            n_planes = 6
            offsets = rng.uniform(-10, 10, size=n_planes)
            counts = rng.integers(5, 400, size=n_planes)
            planes = []
            for off, cnt in zip(offsets, counts):
                t = np.array([[1.0, 0, off], [0, 1.0, 0], [0, 0, 1.0]])
                planes.append(_affine_model(t, counts=int(cnt)))
            match = np.array([0.0, 0.0, rng.uniform(-5, 5), 0.0])
            errors = [abs(match[2] - off) for off in offsets]

            # independent enumeration of the assignment rule
            comp = [i for i in range(n_planes) if errors[i] <= 15.0]
            top5 = sorted((counts[i] for i in comp), reverse=True)[:5]
            q = np.median(top5)
            eligible = [i for i in comp if counts[i] >= q]
            want = min(eligible, key=lambda i: (errors[i], -counts[i], i))

            assert assign_homography(match, planes) == want
