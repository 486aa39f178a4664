"""Midpoint-plane variant of the plane filter: each match is split at the
keypoint midpoint and every plane is a tied homography pair mapping both
images into a shared middle plane, balancing warp distortion.  Gross
relative rotations are pre-fixed by multiples of 90 degrees."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    as_matches,
    fit_homography_dlt,
    normalize_homography,
    quasi_affine_mask,
    reprojection_errors,
)
from .mop import (
    SV_MIN,
    FilterResult,
    MopConfig,
    _batch_last_coords,
    _dlt4_batch,
    _finalize,
    _plane_search,
    _sign_consistent,
    _spread_ok,
)

ROTATION_CANDIDATES = (0.0, np.pi / 2.0, np.pi, 3.0 * np.pi / 2.0)


def split_midpoints(matches):
    """Split every match at its midpoint: returns the (x1 -> m) and
    (m -> x2) match sets."""
    m = as_matches(matches)
    mid = 0.5 * (m[:, :2] + m[:, 2:])
    return np.hstack([m[:, :2], mid]), np.hstack([mid, m[:, 2:]])


def rejoin_split(m1, m2):
    """Inverse of :func:`split_midpoints`."""
    return np.hstack([as_matches(m1)[:, :2], as_matches(m2)[:, 2:]])


@dataclass
class MihoPair:
    """Tied homographies mapping image 1 resp. image 2 into the middle plane."""

    h1: np.ndarray
    h2: np.ndarray

    def __post_init__(self):
        self.h1_inv = np.linalg.inv(self.h1)
        self.h2_inv = np.linalg.inv(self.h2)


def fit_dual_homography(sample):
    """Exact pair (H1, H2) mapping a 4-match sample's keypoints onto the
    shared midpoints; raises DegenerateSample when either side fails."""
    s = as_matches(sample)
    mid = 0.5 * (s[:, :2] + s[:, 2:])
    h1, sv1 = fit_homography_dlt(np.hstack([s[:, :2], mid]))
    h2, sv2 = fit_homography_dlt(np.hstack([s[:, 2:], mid]))
    return MihoPair(h1, h2), (sv1, sv2)


def rotate_points_quarter(pts, quarters, center):
    """Rotate points by exact multiples of 90 degrees (CCW) about center."""
    pts = np.asarray(pts, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    q = int(quarters) % 4
    p = pts - center
    if q == 0:
        r = p
    elif q == 1:
        r = np.stack([-p[..., 1], p[..., 0]], axis=-1)
    elif q == 2:
        r = -p
    else:
        r = np.stack([p[..., 1], -p[..., 0]], axis=-1)
    return r + center


def quarter_rotation_matrix(quarters, center):
    """Homogeneous matrix of :func:`rotate_points_quarter`."""
    q = int(quarters) % 4
    c, s = ((1, 0), (0, 1), (-1, 0), (0, -1))[q]
    cx, cy = float(center[0]), float(center[1])
    return np.array([
        [c, -s, cx - c * cx + s * cy],
        [s, c, cy - s * cx - c * cy],
        [0.0, 0.0, 1.0],
    ])


@dataclass
class DualHomographyModel:
    """A middle-plane model: the homography pair plus the sample anchors
    for both quasi-affinity directions and cached inlier bookkeeping.

    ``quarter``/``center`` record a rotation fix folded into ``pair.h2``;
    midpoints are then taken between x1 and the un-rotated x2.
    """

    pair: MihoPair
    anchor1: np.ndarray
    anchor2: np.ndarray
    anchor_mid: np.ndarray
    sample: np.ndarray
    singulars: tuple[float, float]
    inliers_weak: np.ndarray | None = None
    inliers_strong: np.ndarray | None = None
    quarter: int = 0
    center: np.ndarray | None = None

    @classmethod
    def from_sample(cls, sample) -> "DualHomographyModel":
        s = as_matches(sample)
        pair, svs = fit_dual_homography(s)
        mid0 = 0.5 * (s[0, :2] + s[0, 2:])
        return cls(
            pair=pair,
            anchor1=s[0, :2].copy(),
            anchor2=s[0, 2:].copy(),
            anchor_mid=mid0,
            sample=s.copy(),
            singulars=svs,
        )

    def _splits(self, matches):
        m = as_matches(matches)
        x2 = m[:, 2:]
        if self.quarter:
            x2_mid = rotate_points_quarter(x2, -self.quarter, self.center)
        else:
            x2_mid = x2
        mid = 0.5 * (m[:, :2] + x2_mid)
        return np.hstack([m[:, :2], mid]), np.hstack([x2, mid])

    def errors(self, matches) -> np.ndarray:
        s1, s2 = self._splits(matches)
        e1 = reprojection_errors(self.pair.h1, s1, self.pair.h1_inv)
        e2 = reprojection_errors(self.pair.h2, s2, self.pair.h2_inv)
        return np.maximum(e1, e2)

    def quasi_affine(self, matches) -> np.ndarray:
        s1, s2 = self._splits(matches)
        q1 = quasi_affine_mask(self.pair.h1, self.anchor1, self.anchor_mid, s1, self.pair.h1_inv)
        q2 = quasi_affine_mask(self.pair.h2, self.anchor2, self.anchor_mid, s2, self.pair.h2_inv)
        return q1 & q2

    def inlier_mask(self, matches, t: float) -> np.ndarray:
        return (self.errors(matches) <= t) & self.quasi_affine(matches)


def miho_inlier_set(model: DualHomographyModel, matches, t: float) -> np.ndarray:
    """Indices whose both halves pass the error and quasi-affinity tests."""
    return np.nonzero(model.inlier_mask(matches, t))[0]


class DualPlaneFamily:
    """Builds middle-plane models from 4-match samples."""

    min_sample = 4

    def __init__(self, cfg: MopConfig):
        self.cfg = cfg

    def fit_block(self, samples):
        """Models from (b, 4, 4) samples, in row order; both split samples
        must pass the spread/singular-value gates and both homographies the
        quasi-affinity test."""
        samples = np.asarray(samples, dtype=np.float64)
        pts1, pts2 = samples[..., :2], samples[..., 2:]
        mid = 0.5 * (pts1 + pts2)
        keep = (
            _spread_ok(pts1, self.cfg.t_l)
            & _spread_ok(pts2, self.cfg.t_l)
            & _spread_ok(mid, self.cfg.t_l)
        )
        if not keep.any():
            return []
        rows = np.nonzero(keep)[0]
        h1, sv1, ok1 = _dlt4_batch(pts1[rows], mid[rows], SV_MIN)
        h2, sv2, ok2 = _dlt4_batch(pts2[rows], mid[rows], SV_MIN)
        ok = ok1 & ok2
        rows, h1, h2, sv1, sv2 = rows[ok], h1[ok], h2[ok], sv1[ok], sv2[ok]
        if not len(rows):
            return []
        ok = _sign_consistent(_batch_last_coords(h1, pts1[rows]))
        ok &= _sign_consistent(_batch_last_coords(h2, pts2[rows]))
        rows, h1, h2, sv1, sv2 = rows[ok], h1[ok], h2[ok], sv1[ok], sv2[ok]
        if not len(rows):
            return []
        h1_inv = np.linalg.inv(h1)
        h2_inv = np.linalg.inv(h2)
        ok = _sign_consistent(_batch_last_coords(h1_inv, mid[rows]))
        ok &= _sign_consistent(_batch_last_coords(h2_inv, mid[rows]))
        models = []
        for r, a, b, s1, s2 in zip(rows[ok], h1[ok], h2[ok], sv1[ok], sv2[ok]):
            models.append(DualHomographyModel(
                pair=MihoPair(a, b),
                anchor1=samples[r, 0, :2].copy(),
                anchor2=samples[r, 0, 2:].copy(),
                anchor_mid=mid[r, 0].copy(),
                sample=samples[r].copy(),
                singulars=(float(s1), float(s2)),
            ))
        return models

    def fit(self, sample):
        """Model from a single 4-match sample, or None when unusable."""
        sample = as_matches(sample)
        models = self.fit_block(sample[None, :, :])
        return models[0] if models else None


def fix_rotation(matches, center=None, max_pairs=1_000_000, seed=0):
    """Gross relative rotation of image 2, from {0, pi/2, pi, 3pi/2}.

    Each candidate is scored by how many match pairs get their midpoint
    distance bracketed by the two keypoint distances once the hypothesized
    rotation is undone; ties prefer 0, then increasing angles.  Above
    ``max_pairs`` pairs a seeded random subsample is scored instead.
    """
    m = as_matches(matches)
    n = len(m)
    if n < 2:
        return 0.0
    x1, x2 = m[:, :2], m[:, 2:]
    if center is None:
        center = 0.5 * (x2.min(axis=0) + x2.max(axis=0))
    if n * (n - 1) // 2 > max_pairs:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n, size=max_pairs)
        ok = i != j
        i, j = i[ok], j[ok]
    else:
        i, j = np.triu_indices(n, 1)
    d1 = np.linalg.norm(x1[i] - x1[j], axis=1)
    d2 = np.linalg.norm(x2[i] - x2[j], axis=1)
    lo = np.minimum(d1, d2)
    hi = np.maximum(d1, d2)
    best_q, best_score = 0, -1
    for q in range(4):
        mid = 0.5 * (x1 + rotate_points_quarter(x2, -q, center))
        dm = np.linalg.norm(mid[i] - mid[j], axis=1)
        score = int(((dm >= lo) & (dm <= hi)).sum())
        if score > best_score:
            best_q, best_score = q, score
    return ROTATION_CANDIDATES[best_q]


def mop_miho_filter(matches, cfg: MopConfig | None = None) -> FilterResult:
    """Plane filter with midpoint homography pairs.

    Runs the rotation fix first, searches planes on the adjusted
    keypoints, then folds the inverse rotation into every pair so the
    returned models map original image coordinates.
    """
    if cfg is None:
        cfg = MopConfig(n_min=8)
    m = as_matches(matches)
    family = DualPlaneFamily(cfg)
    if len(m) < 4:
        return _finalize(m, [], cfg, passthrough=True)
    if cfg.im2_size is not None:
        center = np.array([cfg.im2_size[0] / 2.0, cfg.im2_size[1] / 2.0])
    else:
        center = 0.5 * (m[:, 2:].min(axis=0) + m[:, 2:].max(axis=0))
    alpha = fix_rotation(m, center=center, seed=cfg.seed)
    quarter = ROTATION_CANDIDATES.index(alpha)
    if quarter:
        adjusted = m.copy()
        adjusted[:, 2:] = rotate_points_quarter(m[:, 2:], -quarter, center)
    else:
        adjusted = m
    planes = _plane_search(adjusted, cfg, family)
    if quarter:
        undo = quarter_rotation_matrix(-quarter, center)
        for p in planes:
            p.pair = MihoPair(p.pair.h1, normalize_homography(p.pair.h2 @ undo))
            p.anchor2 = rotate_points_quarter(p.anchor2, quarter, center)
            p.sample = p.sample.copy()
            p.sample[:, 2:] = rotate_points_quarter(p.sample[:, 2:], quarter, center)
            p.quarter = quarter
            p.center = center
    return _finalize(m, planes, cfg, alpha_star=alpha)
