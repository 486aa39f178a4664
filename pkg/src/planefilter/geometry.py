"""Projective primitives: DLT homography fitting, symmetric reprojection
errors, quasi-affinity and inlier predicates.

Conventions: matches are float64 arrays of shape (n, 4) with columns
``x1, y1, x2, y2``; homographies are 3x3 float64 arrays stored with unit
Frobenius norm and a positive largest-magnitude entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSample

# |last homogeneous coordinate| at or below this counts as "at infinity"
W_EPS = 1e-12

# relative rank tolerance of the DLT system and determinant floor for a
# usable homography; near-degenerate-but-fittable samples are left to the
# singular-value degeneracy check
_RANK_EPS = 1e-13
_DET_EPS = 1e-12


def as_matches(arr) -> np.ndarray:
    m = np.asarray(arr, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != 4:
        raise ValueError(f"matches must have shape (n, 4); got {m.shape}")
    return m


def normalize_homography(h) -> np.ndarray:
    """Scale to unit Frobenius norm with the largest-magnitude entry positive."""
    h = np.asarray(h, dtype=np.float64)
    norm = np.linalg.norm(h)
    if not np.isfinite(norm) or norm <= 0.0:
        raise DegenerateSample("homography entries are not finite")
    h = h / norm
    if h.flat[np.abs(h).argmax()] < 0.0:
        h = -h
    return h


def hartley_normalization(pts):
    """Similarity T moving the centroid to the origin and the mean radius
    to sqrt(2); returns (normalized points, T)."""
    pts = np.asarray(pts, dtype=np.float64)
    centroid = pts.mean(axis=0)
    radius = np.linalg.norm(pts - centroid, axis=1).mean()
    if radius < 1e-12:
        raise DegenerateSample("points are (near) coincident")
    s = np.sqrt(2.0) / radius
    t = np.array([
        [s, 0.0, -s * centroid[0]],
        [0.0, s, -s * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    return (pts - centroid) * s, t


def fit_homography_dlt(matches):
    """Fit a homography mapping image-1 points onto image-2 points.

    Returns ``(h, smallest_singular)`` where the singular value comes from
    the Hartley-normalized stacked system; the RANSAC sample degeneracy
    test thresholds that quantity.  Raises DegenerateSample when the
    system does not pin down an invertible map.
    """
    m = as_matches(matches)
    n = m.shape[0]
    if n < 4:
        raise DegenerateSample("need at least 4 matches")
    p1, t1 = hartley_normalization(m[:, :2])
    p2, t2 = hartley_normalization(m[:, 2:])
    a = np.zeros((2 * n, 9))
    x, y = p1[:, 0], p1[:, 1]
    u, v = p2[:, 0], p2[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    _, sv, vt = np.linalg.svd(a)
    # a 4-point system must have exactly one near-null direction; larger
    # systems must not have two (the solution would not be unique)
    unique_idx = -1 if n == 4 else -2
    if sv[unique_idx] < _RANK_EPS * sv[0]:
        raise DegenerateSample("DLT system is rank deficient")
    h = np.linalg.inv(t2) @ vt[-1].reshape(3, 3) @ t1
    h = normalize_homography(h)
    if abs(np.linalg.det(h)) < _DET_EPS:
        raise DegenerateSample("fitted homography is singular")
    return h, float(sv[-1])


def apply_homography(h, pts):
    """Map (n, 2) points through h; points sent to infinity become +inf."""
    pts = np.asarray(pts, dtype=np.float64)
    single = pts.ndim == 1
    p = np.atleast_2d(pts)
    w = p @ h[2, :2] + h[2, 2]
    num = p @ h[:2, :2].T + h[:2, 2]
    out = np.full_like(num, np.inf)
    ok = np.abs(w) > W_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out[ok] = num[ok] / w[ok, None]
    return out[0] if single else out


def last_coordinates(h, pts):
    """Third homogeneous coordinate of H applied to (n, 2) points."""
    p = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    return p @ h[2, :2] + h[2, 2]


def reprojection_errors(h, matches, h_inv=None):
    """Symmetric transfer error per match: the larger of the forward and
    backward reprojection distances; +inf when a point maps to infinity."""
    m = as_matches(matches)
    if h_inv is None:
        h_inv = np.linalg.inv(h)
    fwd = apply_homography(h, m[:, :2])
    bwd = apply_homography(h_inv, m[:, 2:])
    with np.errstate(invalid="ignore"):
        e1 = np.linalg.norm(m[:, 2:] - fwd, axis=1)
        e2 = np.linalg.norm(m[:, :2] - bwd, axis=1)
        err = np.maximum(e1, e2)
    err[~np.isfinite(err)] = np.inf
    return err


def quasi_affine_mask(h, anchor1, anchor2, matches, h_inv=None):
    """Matches whose reprojections keep the anchor's side of the plane at
    infinity, checked in both directions.

    ``anchor1``/``anchor2`` are the first sample keypoint of the model in
    image 1 and its image-2 counterpart.
    """
    m = as_matches(matches)
    if h_inv is None:
        h_inv = np.linalg.inv(h)
    wf = last_coordinates(h, m[:, :2])
    af = last_coordinates(h, np.asarray(anchor1, dtype=np.float64))[0]
    wb = last_coordinates(h_inv, m[:, 2:])
    ab = last_coordinates(h_inv, np.asarray(anchor2, dtype=np.float64))[0]
    return (wf * af > 0.0) & (wb * ab > 0.0)


def quasi_affine_set(h, anchor1, anchor2, matches, h_inv=None):
    """Index form of :func:`quasi_affine_mask`."""
    return np.nonzero(quasi_affine_mask(h, anchor1, anchor2, matches, h_inv))[0]


@dataclass
class HomographyModel:
    """A fitted plane: the homography, the sample anchors feeding the
    quasi-affinity test, and cached inlier bookkeeping."""

    h: np.ndarray
    h_inv: np.ndarray
    anchor1: np.ndarray
    anchor2: np.ndarray
    sample: np.ndarray
    smallest_singular: float
    inliers_weak: np.ndarray | None = None
    inliers_strong: np.ndarray | None = None

    @classmethod
    def from_sample(cls, sample) -> "HomographyModel":
        sample = as_matches(sample)
        h, sv = fit_homography_dlt(sample)
        return cls(
            h=h,
            h_inv=np.linalg.inv(h),
            anchor1=sample[0, :2].copy(),
            anchor2=sample[0, 2:].copy(),
            sample=sample.copy(),
            smallest_singular=sv,
        )

    def errors(self, matches) -> np.ndarray:
        return reprojection_errors(self.h, matches, self.h_inv)

    def quasi_affine(self, matches) -> np.ndarray:
        return quasi_affine_mask(self.h, self.anchor1, self.anchor2, matches, self.h_inv)

    def inlier_mask(self, matches, t: float) -> np.ndarray:
        return (self.errors(matches) <= t) & self.quasi_affine(matches)


def inlier_set(model: HomographyModel, matches, t: float) -> np.ndarray:
    """Indices of matches within t of the model and quasi-affine with it."""
    return np.nonzero(model.inlier_mask(matches, t))[0]


def sample_degeneracy_check(sample, smallest_singular, t_l=15.0, sv_min=0.05) -> bool:
    """True when the 4-match sample is spread enough in both images and the
    normalized DLT system stayed safely away from rank deficiency."""
    s = as_matches(sample)
    if s.shape[0] != 4:
        raise ValueError("sample must contain exactly 4 matches")
    iu = np.triu_indices(4, 1)
    for cols in ((0, 1), (2, 3)):
        pts = s[:, cols]
        d = pts[:, None, :] - pts[None, :, :]
        if np.sqrt((d ** 2).sum(-1))[iu].min() < t_l:
            return False
    return smallest_singular > sv_min
