"""Ground-truth scoring: epipolar errors, recall/precision/filtered
fractions, pose recovery from the fundamental matrix with angular and
metric AUC, and the common-area homography AUC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, DegenerateSample, InsufficientMatches
from .geometry import (
    apply_homography,
    as_matches,
    fit_homography_dlt,
    hartley_normalization,
    normalize_homography,
    reprojection_errors,
)

# per-match inlier threshold ladder, in pixels
EPIPOLAR_THRESHOLDS = np.arange(1, 17)
POSE_AUC_THRESHOLDS = (5.0, 10.0, 20.0)
HOMOGRAPHY_AUC_THRESHOLDS = (5.0, 10.0, 15.0)
# conversion factor of the metric translation error (meters to degrees)
METERS_TO_DEGREES = 10.0

_LINE_EPS = 1e-12


@dataclass
class GroundTruth:
    """Either a relative pose (intrinsics, rotation, translation, optional
    metric scale) or a planar homography."""

    kind: str
    k1: np.ndarray | None = None
    k2: np.ndarray | None = None
    r: np.ndarray | None = None
    t: np.ndarray | None = None
    scale: float | None = None
    h: np.ndarray | None = None

    @classmethod
    def pose(cls, k1, k2, r, t, scale=None) -> "GroundTruth":
        k1 = np.asarray(k1, dtype=np.float64)
        k2 = np.asarray(k2, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64).ravel()
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValueError("R must be a proper rotation")
        for k in (k1, k2):
            if np.any(np.diag(k) <= 0) or not np.allclose(k, np.triu(k)):
                raise ValueError("K must be upper triangular with positive diagonal")
        return cls(kind="pose", k1=k1, k2=k2, r=r, t=t, scale=scale)

    @classmethod
    def homography(cls, h) -> "GroundTruth":
        h = np.asarray(h, dtype=np.float64)
        if abs(np.linalg.det(h)) < 1e-12:
            raise ValueError("H must be invertible")
        return cls(kind="homography", h=h)

    def fundamental(self) -> np.ndarray:
        return fundamental_from_pose(self.k1, self.k2, self.r, self.t)


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def fundamental_from_pose(k1, k2, r, t) -> np.ndarray:
    """F = K2^-T [t]x R K1^-1, normalized for numerical stability."""
    f = np.linalg.inv(k2).T @ skew(t) @ r @ np.linalg.inv(k1)
    return normalize_homography(f)


def epipolar_errors(f, matches, literal_denominator=False):
    """Maximum point-to-epipolar-line distance per match, both directions.

    ``literal_denominator`` switches to the squared line-normal norm for
    comparison; the default is the true point-line distance.  Degenerate
    epipolar lines give +inf.
    """
    m = as_matches(matches)
    x1 = np.hstack([m[:, :2], np.ones((len(m), 1))])
    x2 = np.hstack([m[:, 2:], np.ones((len(m), 1))])
    fx1 = x1 @ f.T
    ftx2 = x2 @ f
    num = np.abs(np.sum(x2 * fx1, axis=1))
    d1 = np.linalg.norm(fx1[:, :2], axis=1)
    d2 = np.linalg.norm(ftx2[:, :2], axis=1)
    if literal_denominator:
        d1 = d1 ** 2
        d2 = d2 ** 2
    out = np.full(len(m), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        e1 = np.where(d1 > _LINE_EPS, num / d1, np.inf)
        e2 = np.where(d2 > _LINE_EPS, num / d2, np.inf)
    out = np.maximum(e1, e2)
    out[~np.isfinite(out)] = np.inf
    return out


def gt_match_errors(matches, gt: GroundTruth):
    """Per-match GT error: epipolar for pose GT, reprojection for homography GT."""
    if gt.kind == "pose":
        return epipolar_errors(gt.fundamental(), matches)
    return reprojection_errors(gt.h, matches)


def match_scores(base_matches, pred_matches, gt: GroundTruth):
    """(recall, precision, filtered) over the 1..16 px threshold ladder.

    Recall is forced to 0 on a zero denominator; precision is 0 for an
    empty prediction set; filtered is 0 for an empty base set.
    """
    base = as_matches(base_matches)
    pred = as_matches(pred_matches)
    ths = EPIPOLAR_THRESHOLDS
    num = 0
    if len(pred):
        num = int((gt_match_errors(pred, gt)[:, None] < ths[None, :]).sum())
    den = 0
    if len(base):
        den = int((gt_match_errors(base, gt)[:, None] < ths[None, :]).sum())
    recall = 0.0 if den == 0 else num / den
    precision = 0.0 if len(pred) == 0 else num / (len(pred) * len(ths))
    filtered = 0.0 if len(base) == 0 else 1.0 - len(pred) / len(base)
    return recall, precision, filtered


def estimate_intrinsics(width, height) -> np.ndarray:
    """Pinhole guess: focal length max(h, w), principal point at the center."""
    f = float(max(width, height))
    return np.array([
        [f, 0.0, width / 2.0],
        [0.0, f, height / 2.0],
        [0.0, 0.0, 1.0],
    ])


def fit_fundamental_8point(matches) -> np.ndarray:
    """Least-squares normalized 8-point fundamental matrix over all matches."""
    m = as_matches(matches)
    n = len(m)
    if n < 8:
        raise InsufficientMatches(f"need at least 8 matches, got {n}")
    p1, t1 = hartley_normalization(m[:, :2])
    p2, t2 = hartley_normalization(m[:, 2:])
    x1, y1 = p1[:, 0], p1[:, 1]
    x2, y2 = p2[:, 0], p2[:, 1]
    a = np.stack([x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, np.ones(n)], axis=1)
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-9 * sv[0]:
        raise DegenerateConfiguration("matches do not constrain a unique F")
    f = vt[-1].reshape(3, 3)
    u, s, v = np.linalg.svd(f)
    f = u @ np.diag([s[0], s[1], 0.0]) @ v
    return normalize_homography(t2.T @ f @ t1)


def pose_from_fundamental(matches, k1, k2):
    """Four candidate (R, t) pairs from the least-squares fundamental matrix.

    The essential matrix singular values are projected to (s, s, 0) and the
    decomposition enforces det(R) = +1.
    """
    f = fit_fundamental_8point(matches)
    e = np.asarray(k2, dtype=np.float64).T @ f @ np.asarray(k1, dtype=np.float64)
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def rotation_error_deg(r_est, r_gt) -> float:
    cos = (np.trace(np.asarray(r_gt).T @ np.asarray(r_est)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def translation_angle_deg(t_est, t_gt) -> float:
    a = np.asarray(t_est, dtype=np.float64).ravel()
    b = np.asarray(t_gt, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-15 or nb < 1e-15:
        return 180.0
    cos = np.dot(a, b) / (na * nb)
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def translation_metric_error(t_est, t_gt_metric, z=METERS_TO_DEGREES) -> float:
    """z * || t_gt - ||t_gt|| * unit(t_est) ||, comparable to degrees."""
    t_gt_metric = np.asarray(t_gt_metric, dtype=np.float64).ravel()
    t_est = np.asarray(t_est, dtype=np.float64).ravel()
    ne = np.linalg.norm(t_est)
    if ne < 1e-15:
        return float("inf")
    rescaled = np.linalg.norm(t_gt_metric) * t_est / ne
    return float(z * np.linalg.norm(t_gt_metric - rescaled))


def pose_error(candidates, gt: GroundTruth, mode="angular") -> float:
    """Best-candidate pose error in degrees: min over candidates of the max
    of rotation and translation errors.  Metric mode scales the GT
    translation to meters and uses the rescaled-difference form."""
    if gt.kind != "pose":
        raise ValueError("pose_error needs a pose ground truth")
    if mode not in ("angular", "metric"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "metric":
        if gt.scale is None:
            raise ValueError("metric mode needs a ground-truth scale")
        t_gt_metric = gt.t * gt.scale
    best = np.inf
    for r, t in candidates:
        re = rotation_error_deg(r, gt.r)
        if mode == "angular":
            te = translation_angle_deg(t, gt.t)
        else:
            te = translation_metric_error(t, t_gt_metric)
        best = min(best, max(re, te))
    return float(best)


def auc(errors, thresholds):
    """Normalized area under the cumulative error curve per threshold.

    AUC@t = mean over pairs of max(0, 1 - e/t), the exact integral of the
    empirical CDF up to t.  Returns (per-threshold array, their mean); an
    empty error list gives zeros.
    """
    ths = np.asarray(thresholds, dtype=np.float64)
    if np.any(ths <= 0) or np.any(np.diff(ths) <= 0):
        raise ValueError("thresholds must be positive and ascending")
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        return np.zeros(len(ths)), 0.0
    vals = np.array([float(np.mean(np.clip(1.0 - e / t, 0.0, 1.0))) for t in ths])
    return vals, float(vals.mean())


def homography_common_area_error(h_est, h_gt, width, height, stride=None) -> float:
    """Mean estimated-vs-GT transfer distance over the pixels landing inside
    the other image, maximized over both directions; +inf when the common
    area is empty.  Large frames are subsampled with stride 4."""
    if stride is None:
        stride = 4 if width * height > 1_000_000 else 1
    xs = np.arange(1, width + 1, stride, dtype=np.float64)
    ys = np.arange(1, height + 1, stride, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)

    def directional(he, hg):
        fwd = apply_homography(hg, grid)
        with np.errstate(invalid="ignore"):
            inside = (
                np.isfinite(fwd).all(axis=1)
                & (fwd[:, 0] >= 1.0) & (fwd[:, 0] <= width)
                & (fwd[:, 1] >= 1.0) & (fwd[:, 1] <= height)
            )
        if not inside.any():
            return np.inf
        d = np.linalg.norm(apply_homography(he, grid[inside]) - fwd[inside], axis=1)
        if not np.all(np.isfinite(d)):
            return np.inf
        return float(d.mean())

    h_est = np.asarray(h_est, dtype=np.float64)
    h_gt = np.asarray(h_gt, dtype=np.float64)
    fwd = directional(h_est, h_gt)
    bwd = directional(np.linalg.inv(h_est), np.linalg.inv(h_gt))
    return max(fwd, bwd)


@dataclass
class EvalReport:
    """Scores of one image pair against its ground truth."""

    mode: str
    recall: float
    precision: float
    filtered: float
    num_base: int
    num_pred: int
    pose_error_deg: float | None = None
    pose_error_metric: float | None = None
    auc_angular: dict | None = None
    auc_metric: dict | None = None
    homography_error: float | None = None
    auc_homography: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "recall": self.recall,
            "precision": self.precision,
            "filtered": self.filtered,
            "num_base": self.num_base,
            "num_pred": self.num_pred,
        }
        for name in ("pose_error_deg", "pose_error_metric", "auc_angular",
                     "auc_metric", "homography_error", "auc_homography"):
            out[name] = getattr(self, name)
        return out


def _auc_block(errors, thresholds):
    vals, mean = auc(errors, thresholds)
    return {"thresholds": list(thresholds), "values": [float(v) for v in vals], "mean": mean}


def evaluate_pair(base_matches, pred_matches, gt: GroundTruth, mode,
                  image_size=None) -> EvalReport:
    """Full per-pair report: match scores plus the mode's error and AUC."""
    if mode not in ("pose", "homography"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "pose" and gt.kind != "pose":
        raise ValueError("pose mode needs pose ground truth")
    if mode == "homography" and gt.kind != "homography":
        raise ValueError("homography mode needs a homography ground truth")
    base = as_matches(base_matches)
    pred = as_matches(pred_matches)
    recall, precision, filtered = match_scores(base, pred, gt)
    report = EvalReport(
        mode=mode,
        recall=recall,
        precision=precision,
        filtered=filtered,
        num_base=len(base),
        num_pred=len(pred),
    )
    if mode == "pose":
        try:
            candidates = pose_from_fundamental(pred, gt.k1, gt.k2)
            err = pose_error(candidates, gt, mode="angular")
        except (InsufficientMatches, DegenerateConfiguration):
            candidates = None
            err = np.inf
        report.pose_error_deg = float(err)
        report.auc_angular = _auc_block([err], POSE_AUC_THRESHOLDS)
        if gt.scale is not None:
            merr = np.inf if candidates is None else pose_error(candidates, gt, mode="metric")
            report.pose_error_metric = float(merr)
            report.auc_metric = _auc_block([merr], POSE_AUC_THRESHOLDS)
    else:
        if image_size is None:
            raise ValueError("homography mode needs the image size")
        h_est = None
        if len(pred) >= 4:
            try:
                h_est, _ = fit_homography_dlt(pred)
            except DegenerateSample:
                h_est = None
        if h_est is None:
            err = np.inf
        else:
            err = homography_common_area_error(h_est, gt.h, image_size[0], image_size[1])
        report.homography_error = float(err)
        report.auc_homography = _auc_block([err], HOMOGRAPHY_AUC_THRESHOLDS)
    return report
