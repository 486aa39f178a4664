"""Seeded ground-truth scene generators: piecewise-planar match sets with
labels, non-planar pose scenes, and rendered textured image pairs.  These
double as the brute-force oracle for the test suite and as CLI fixtures."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyOverlap, RejectionLimit
from .geometry import (
    apply_homography,
    fit_homography_dlt,
    last_coordinates,
    reprojection_errors,
)
from .metrics import GroundTruth, estimate_intrinsics
from .ncc import bilinear_sample

OUTLIER = -1

_MAX_PLANE_TRIES = 1000
_PLANE_COND_MAX = 1e4


@dataclass
class SceneSpec:
    """Parameters of a synthetic scene.

    ``outlier_fraction`` is the fraction of the total emitted matches, so
    the generator adds round(f / (1 - f) * n_inliers) outliers.
    """

    kind: str = "planar"            # planar | pose | textured
    width: int = 640
    height: int = 480
    seed: int = 0
    planes: int = 2
    matches_per_plane: int = 100
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    # textured scenes
    texture: str = "noise"          # noise | checkerboard
    smooth_passes: int = 1
    checker_size: int = 16
    patch_margin: int = 30
    homography: list | None = None
    # pose scenes
    n_points: int = 100
    depth_range: tuple[float, float] = (4.0, 12.0)
    baseline: float = 0.5
    rotation_deg: float = 10.0
    surface: str = "box"            # box | planes
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in ("planar", "pose", "textured"):
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if min(self.planes, self.matches_per_plane, self.n_points) < 0:
            raise ValueError("counts must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_range"] = list(self.depth_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scene spec fields: {sorted(extra)}")
        d = dict(d)
        if "depth_range" in d:
            d["depth_range"] = tuple(d["depth_range"])
        return cls(**d)


@dataclass
class LabeledScene:
    """Matches with per-match plane labels (OUTLIER for none) and the
    generating ground truth."""

    matches: np.ndarray
    labels: np.ndarray
    gt_planes: list = field(default_factory=list)
    gt_pose: GroundTruth | None = None


def _in_frame(pts, width, height):
    return (
        (pts[:, 0] >= 0.0) & (pts[:, 0] <= width - 1.0)
        & (pts[:, 1] >= 0.0) & (pts[:, 1] <= height - 1.0)
    )


def _plane_is_valid(h, width, height):
    """Well conditioned and sign-consistent over the whole frame, both ways."""
    if np.linalg.cond(h) >= _PLANE_COND_MAX:
        return False
    xs = np.linspace(0, width - 1, 12)
    ys = np.linspace(0, height - 1, 12)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    for mat in (h, np.linalg.inv(h)):
        w = last_coordinates(mat, grid)
        if np.abs(w).min() < 1e-9 or not (np.all(w > 0) or np.all(w < 0)):
            return False
    return True


def sample_plane(rng, width, height, strength=0.22):
    """Random in-frame plane: an inset frame quadrilateral with perturbed
    corners, fitted by DLT.  Raises RejectionLimit when no valid plane is
    found."""
    mw, mh = 0.08 * width, 0.08 * height
    corners1 = np.array([
        [mw, mh],
        [width - mw, mh],
        [width - mw, height - mh],
        [mw, height - mh],
    ])
    amp = strength * min(width, height)
    for _ in range(_MAX_PLANE_TRIES):
        corners2 = corners1 + rng.uniform(-amp, amp, size=(4, 2))
        try:
            h, _ = fit_homography_dlt(np.hstack([corners1, corners2]))
        except Exception:
            continue
        if _plane_is_valid(h, width, height):
            return h
    raise RejectionLimit("could not sample a well-conditioned plane")


def gen_planar_scene(spec: SceneSpec) -> LabeledScene:
    """Piecewise-planar match set with labels.

    Inlier keypoints are uniform in frame 1, mapped by their plane, and
    perturbed by isotropic Gaussian noise kept within 3 sigma of the plane
    (redrawn otherwise); outliers are uniform in both frames.
    """
    rng = np.random.default_rng(spec.seed)
    w, h = spec.width, spec.height
    planes = [sample_plane(rng, w, h) for _ in range(spec.planes)]
    chunks, labels = [], []
    for pi, plane in enumerate(planes):
        got = np.empty((0, 4))
        guard = 0
        while len(got) < spec.matches_per_plane:
            guard += 1
            if guard > _MAX_PLANE_TRIES:
                raise RejectionLimit("could not populate plane support")
            need = spec.matches_per_plane - len(got)
            x1 = rng.uniform([0, 0], [w - 1, h - 1], size=(2 * need + 8, 2))
            x2 = apply_homography(plane, x1)
            ok = _in_frame(x2, w, h) & np.isfinite(x2).all(axis=1)
            cand = np.hstack([x1[ok], x2[ok]])
            if spec.noise_sigma > 0:
                noise = rng.normal(0.0, spec.noise_sigma, size=(len(cand), 2))
                noisy = cand.copy()
                noisy[:, 2:] += noise
                keep = reprojection_errors(plane, noisy) <= 3.0 * spec.noise_sigma
                keep &= _in_frame(noisy[:, 2:], w, h)
                cand = noisy[keep]
            got = np.vstack([got, cand[:need]])
        chunks.append(got)
        labels.append(np.full(len(got), pi))
    n_in = spec.planes * spec.matches_per_plane
    f = spec.outlier_fraction
    n_out = int(round(f / (1.0 - f) * n_in)) if f > 0 else 0
    if n_out:
        o1 = rng.uniform([0, 0], [w - 1, h - 1], size=(n_out, 2))
        o2 = rng.uniform([0, 0], [w - 1, h - 1], size=(n_out, 2))
        chunks.append(np.hstack([o1, o2]))
        labels.append(np.full(n_out, OUTLIER))
    matches = np.vstack(chunks) if chunks else np.empty((0, 4))
    label = np.concatenate(labels) if labels else np.empty(0, dtype=int)
    perm = rng.permutation(len(matches))
    return LabeledScene(matches=matches[perm], labels=label[perm].astype(int), gt_planes=planes)


def _box_blur(img, passes):
    """Separable 3-tap box filter with replicated edges."""
    out = img
    for _ in range(passes):
        padded = np.pad(out, 1, mode="edge")
        out = (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0
        out = (out[:, :-2] + out[:, 1:-1] + out[:, 2:]) / 3.0
    return out


def make_texture(spec: SceneSpec, rng) -> np.ndarray:
    """Smoothed white noise (sharp unambiguous NCC peaks) or a checkerboard
    (edge-dominant stress case), in [0, 1]."""
    h, w = spec.height, spec.width
    if spec.texture == "noise":
        img = rng.random((h, w))
        img = _box_blur(img, max(spec.smooth_passes, 0))
        lo, hi = img.min(), img.max()
        return (img - lo) / (hi - lo) if hi > lo else img
    if spec.texture == "checkerboard":
        ys, xs = np.mgrid[0:h, 0:w]
        return (((xs // spec.checker_size) + (ys // spec.checker_size)) % 2).astype(np.float64)
    raise ValueError(f"unknown texture {spec.texture!r}")


def render_textured_pair(h, spec: SceneSpec):
    """Textured frame plus its warp: I2(y) = I1(H^-1 y), with exact GT
    matches sampled where a 3r-patch fits in both frames.

    Raises EmptyOverlap when the warp misses frame 2 entirely.
    """
    h = np.asarray(h, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    i1 = make_texture(spec, rng)
    hh, ww = i1.shape
    gx, gy = np.meshgrid(np.arange(ww, dtype=np.float64), np.arange(hh, dtype=np.float64))
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    src = apply_homography(np.linalg.inv(h), grid)
    vals, valid = bilinear_sample(i1, src)
    if not valid.any():
        raise EmptyOverlap("the warp does not land inside frame 1 anywhere")
    i2 = vals.reshape(hh, ww)
    margin = spec.patch_margin
    pts = []
    guard = 0
    while len(pts) < spec.matches_per_plane and guard < _MAX_PLANE_TRIES:
        guard += 1
        need = spec.matches_per_plane - len(pts)
        x1 = rng.uniform([margin, margin], [ww - 1 - margin, hh - 1 - margin], size=(2 * need + 8, 2))
        x2 = apply_homography(h, x1)
        ok = (
            (x2[:, 0] >= margin) & (x2[:, 0] <= ww - 1 - margin)
            & (x2[:, 1] >= margin) & (x2[:, 1] <= hh - 1 - margin)
        )
        pts.extend(np.hstack([x1[ok], x2[ok]])[:need])
    if len(pts) < spec.matches_per_plane:
        raise EmptyOverlap("overlap too small for the requested patch margin")
    return i1, i2, np.array(pts)


def _rotation_about_axis(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def gen_pose_scene(spec: SceneSpec) -> LabeledScene:
    """Two-view scene with known intrinsics and relative pose.

    ``surface="box"`` scatters points in the viewing frustum (non-coplanar
    by rejection); ``surface="planes"`` puts them on a few 3-D planes so
    the flow is exactly piecewise homographic.
    """
    rng = np.random.default_rng(spec.seed)
    w, h = spec.width, spec.height
    k = estimate_intrinsics(w, h)
    k_inv = np.linalg.inv(k)
    r = _rotation_about_axis(rng.normal(size=3), np.radians(spec.rotation_deg))
    t = rng.normal(size=3)
    t = t / np.linalg.norm(t) * spec.baseline
    z_lo, z_hi = spec.depth_range

    def rays(px):
        return np.hstack([px, np.ones((len(px), 1))]) @ k_inv.T

    points = np.empty((0, 3))
    labels = np.empty(0, dtype=int)
    if spec.surface == "box":
        for _ in range(_MAX_PLANE_TRIES):
            px = rng.uniform([0, 0], [w - 1, h - 1], size=(spec.n_points, 2))
            z = rng.uniform(z_lo, z_hi, size=(spec.n_points, 1))
            pts = rays(px) * z
            centered = pts - pts.mean(axis=0)
            sv = np.linalg.svd(centered, compute_uv=False)
            if sv[2] > 0.05 * sv[0]:
                points = pts
                labels = np.zeros(len(pts), dtype=int)
                break
        else:
            raise RejectionLimit("could not sample a non-coplanar point cloud")
    elif spec.surface == "planes":
        n_planes = max(spec.planes, 1)
        per = int(np.ceil(spec.n_points / n_planes))
        all_pts, all_lbl = [], []
        for pi in range(n_planes):
            anchor_px = rng.uniform([0.2 * w, 0.2 * h], [0.8 * w, 0.8 * h])
            z0 = rng.uniform(z_lo, z_hi)
            anchor = rays(anchor_px[None])[0] * z0
            normal = rng.normal(size=3)
            normal[2] = np.sign(normal[2] or 1.0) * max(abs(normal[2]), 1.0)
            normal = normal / np.linalg.norm(normal)
            px = rng.uniform([0, 0], [w - 1, h - 1], size=(4 * per, 2))
            d = rays(px)
            lam = (anchor @ normal) / (d @ normal)
            ok = (lam * d[:, 2] >= z_lo * 0.5) & (lam * d[:, 2] <= z_hi * 2.0) & (lam > 0)
            pts = (d[ok] * lam[ok, None])[:per]
            all_pts.append(pts)
            all_lbl.append(np.full(len(pts), pi))
        points = np.vstack(all_pts)
        labels = np.concatenate(all_lbl)
    else:
        raise ValueError(f"unknown surface {spec.surface!r}")

    x1h = points @ k.T
    p2 = points @ r.T + t
    x2h = p2 @ k.T
    x1 = x1h[:, :2] / x1h[:, 2:]
    x2 = x2h[:, :2] / x2h[:, 2:]
    ok = (
        (points[:, 2] > 0) & (p2[:, 2] > 0)
        & _in_frame(x1, w, h) & _in_frame(x2, w, h)
    )
    x1, x2, labels = x1[ok], x2[ok], labels[ok]
    if spec.noise_sigma > 0:
        x2 = x2 + rng.normal(0.0, spec.noise_sigma, size=x2.shape)
    matches = np.hstack([x1, x2])
    f = spec.outlier_fraction
    n_out = int(round(f / (1.0 - f) * len(matches))) if f > 0 else 0
    if n_out:
        o1 = rng.uniform([0, 0], [w - 1, h - 1], size=(n_out, 2))
        o2 = rng.uniform([0, 0], [w - 1, h - 1], size=(n_out, 2))
        matches = np.vstack([matches, np.hstack([o1, o2])])
        labels = np.concatenate([labels, np.full(n_out, OUTLIER)])
    perm = rng.permutation(len(matches))
    gt = GroundTruth.pose(k, k, r, t, scale=spec.scale)
    return LabeledScene(matches=matches[perm], labels=labels[perm].astype(int), gt_pose=gt)
