"""Keypoint refinement by normalized cross-correlation template matching
on homography-aligned patches, over a small grid of rotation/shear
perturbations, with parabolic sub-pixel interpolation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfBounds
from .geometry import apply_homography

DEFAULT_RADIUS = 10
ROTATIONS = (-np.pi / 6.0, -np.pi / 12.0, 0.0, np.pi / 12.0, np.pi / 6.0)
SHEARS = (5.0 / 7.0, 5.0 / 6.0, 1.0, 6.0 / 5.0, 7.0 / 5.0)
# a patch with more than this fraction of samples outside the image is unusable
INVALID_FRACTION = 0.10
VARIANCE_EPS = 1e-12


@dataclass
class WarpPair:
    """Candidate alignment: homographies mapping image 1 and image 2 into a
    shared plane, tagged by origin (base/extended/perturbed)."""

    h1: np.ndarray
    h2: np.ndarray
    kind: str = "base"
    rho: float = 0.0
    shear: float = 1.0
    side: int = 0

    def __post_init__(self):
        self.h1 = np.asarray(self.h1, dtype=np.float64)
        self.h2 = np.asarray(self.h2, dtype=np.float64)
        self.h1_inv = np.linalg.inv(self.h1)
        self.h2_inv = np.linalg.inv(self.h2)


def shear_rotation(rho, f):
    """Perturbation warp: rotation by rho with the first row scaled by f."""
    return np.array([
        [f * np.cos(rho), -f * np.sin(rho), 0.0],
        [np.sin(rho), np.cos(rho), 0.0],
        [0.0, 0.0, 1.0],
    ])


def build_warp_pairs(base, extended):
    """The 51-candidate alignment set: the base pair plus the extended pair
    perturbed by each rotation/shear combination on either side.  The
    identity perturbations duplicate the unperturbed extended pair and are
    kept (harmless under the deterministic tie-break)."""
    b1, b2 = base
    e1, e2 = extended
    pairs = [WarpPair(b1, b2, kind="base")]
    for side in (1, 2):
        for rho in ROTATIONS:
            for f in SHEARS:
                a = shear_rotation(rho, f)
                kind = "extended" if (rho == 0.0 and f == 1.0) else "perturbed"
                if side == 1:
                    pairs.append(WarpPair(a @ e1, e2, kind, rho, f, side))
                else:
                    pairs.append(WarpPair(e1, a @ e2, kind, rho, f, side))
    return pairs


def bilinear_sample(img, pts):
    """Bilinear samples of ``img`` at (x, y) positions.

    Returns ``(values, valid)``; positions outside the image domain (or
    non-finite) are invalid and filled with 0.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    pts = np.asarray(pts, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    with np.errstate(invalid="ignore"):
        valid = np.isfinite(x) & np.isfinite(y)
        valid &= (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xc = np.clip(np.nan_to_num(x, nan=0.0, posinf=0.0, neginf=0.0), 0.0, w - 1.0)
    yc = np.clip(np.nan_to_num(y, nan=0.0, posinf=0.0, neginf=0.0), 0.0, h - 1.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    vals = (
        (1.0 - fy) * ((1.0 - fx) * img[y0, x0] + fx * img[y0, x1])
        + fy * ((1.0 - fx) * img[y1, x0] + fx * img[y1, x1])
    )
    vals[~valid] = 0.0
    return vals, valid


def _offset_grid(r):
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def _warp_window(img, h_inv, center_plane, r):
    """Patch of the warped image around ``center_plane`` with validity mask."""
    pts = center_plane + _offset_grid(r)
    src = apply_homography(h_inv, pts)
    vals, valid = bilinear_sample(img, src)
    n = 2 * r + 1
    return vals.reshape(n, n), valid.reshape(n, n)


def warp_patch(img, h, center, r):
    """(2r+1)-sided crop of the H-warped image centered at H * center.

    Raises OutOfBounds when more than 10% of the samples fall outside.
    """
    c = apply_homography(h, np.asarray(center, dtype=np.float64))
    if not np.all(np.isfinite(c)):
        raise OutOfBounds("patch center maps to infinity")
    vals, valid = _warp_window(img, np.linalg.inv(h), c, r)
    if (~valid).mean() > INVALID_FRACTION:
        raise OutOfBounds("too many samples outside the image")
    return vals


def ncc_similarity(a, b):
    """Sum of products of the mean/std-normalized patches; equals the pixel
    count for identical patches and -inf when either patch is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    az = a - a.mean()
    bz = b - b.mean()
    va = (az ** 2).mean()
    vb = (bz ** 2).mean()
    if va < VARIANCE_EPS or vb < VARIANCE_EPS:
        return -np.inf
    return float((az / np.sqrt(va) * bz / np.sqrt(vb)).sum())


def _parabola(s_minus, s_zero, s_plus):
    """Vertex offset of the parabola through three samples; 0 when the axis
    is not strictly concave, clamped to [-1, 1]."""
    denom = 2.0 * (s_plus - 2.0 * s_zero + s_minus)
    if denom >= -1e-12:
        return 0.0
    return float(np.clip((s_minus - s_plus) / denom, -1.0, 1.0))


def subpixel_peak(response):
    """Per-axis parabolic sub-pixel offset from the 3x3 neighborhood of a
    correlation peak (row 0 is y=-1, column 0 is x=-1)."""
    r = np.asarray(response, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError("expected a 3x3 peak neighborhood")
    px = _parabola(r[1, 0], r[1, 1], r[1, 2])
    py = _parabola(r[0, 1], r[1, 1], r[2, 1])
    return np.array([px, py])


@dataclass
class RefinedMatch:
    """Refinement outcome in original image coordinates.

    ``offset1``/``offset2`` are the integer offsets in the alignment plane
    (the template side stays at zero); ``subpixel`` is the parabola vertex
    applied to the searched side.  ``refined`` is False when no warp pair
    produced a usable patch and the match passed through untouched.
    """

    point1: np.ndarray
    point2: np.ndarray
    offset1: np.ndarray
    offset2: np.ndarray
    pair: WarpPair | None
    score: float
    subpixel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    template_side: int = 0
    refined: bool = True


def _response_map(template, template_valid, search, search_valid, r):
    """NCC score of the template against every (2r+1)-window of the search
    patch.  Returns an (2r+1, 2r+1) map with -inf at offsets whose window
    is constant or has too many invalid samples, or None when the template
    itself is unusable."""
    n = 2 * r + 1
    if (~template_valid).mean() > INVALID_FRACTION:
        return None
    t = template
    tm = t.mean()
    tv = ((t - tm) ** 2).mean()
    if tv < VARIANCE_EPS:
        return None
    tz = ((t - tm) / np.sqrt(tv)).ravel()
    windows = np.lib.stride_tricks.sliding_window_view(search, (n, n)).reshape(n * n, n * n)
    wm = windows.mean(axis=1)
    wv = (windows ** 2).mean(axis=1) - wm ** 2
    invalid = np.lib.stride_tricks.sliding_window_view(~search_valid, (n, n)).reshape(n * n, n * n)
    bad = (invalid.sum(axis=1) > INVALID_FRACTION * n * n) | (wv < VARIANCE_EPS)
    tz_sum = tz.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = (windows @ tz - wm * tz_sum) / np.sqrt(wv)
    scores[bad] = -np.inf
    if not np.isfinite(scores).any():
        return None
    return scores.reshape(n, n)


def _peak_candidate(resp, r):
    """Best cell of a response map with the deterministic tie-break:
    smaller offset norm first, then row-major order."""
    peak = resp.max()
    cells = np.argwhere(resp == peak)
    off = cells - r
    order = np.lexsort((cells[:, 1], cells[:, 0], (off ** 2).sum(axis=1)))
    iy, ix = cells[order[0]]
    return float(peak), int(iy), int(ix)


def _subpixel_from_map(resp, iy, ix):
    n = resp.shape[0]
    p = np.zeros(2)
    if 0 < ix < n - 1 and np.isfinite(resp[iy, ix - 1]) and np.isfinite(resp[iy, ix + 1]):
        p[0] = _parabola(resp[iy, ix - 1], resp[iy, ix], resp[iy, ix + 1])
    if 0 < iy < n - 1 and np.isfinite(resp[iy - 1, ix]) and np.isfinite(resp[iy + 1, ix]):
        p[1] = _parabola(resp[iy - 1, ix], resp[iy, ix], resp[iy + 1, ix])
    return p


def refine_match(img1, img2, match, pairs, r=DEFAULT_RADIUS):
    """Refine one match over the candidate warp pairs.

    For every pair and both template directions, the (2r+1)-template is
    correlated over the (4r+1)-search window of the other image; the global
    argmax picks the integer offsets and the winning pair, then the
    parabolic sub-pixel offset is applied on the searched side and both
    keypoints are back-projected into original coordinates.  When no pair
    yields a usable patch the match passes through with ``refined=False``.
    """
    img1 = np.asarray(img1, dtype=np.float64)
    img2 = np.asarray(img2, dtype=np.float64)
    match = np.asarray(match, dtype=np.float64).ravel()
    x1, x2 = match[:2], match[2:]
    best_key = None
    best = None
    for pi, pair in enumerate(pairs):
        c1 = apply_homography(pair.h1, x1)
        c2 = apply_homography(pair.h2, x2)
        if not (np.all(np.isfinite(c1)) and np.all(np.isfinite(c2))):
            continue
        win1, val1 = _warp_window(img1, pair.h1_inv, c1, 2 * r)
        win2, val2 = _warp_window(img2, pair.h2_inv, c2, 2 * r)
        sides = (
            (1, win1, val1, win2, val2),
            (2, win2, val2, win1, val1),
        )
        for side, wt, vt, ws, vs in sides:
            tmpl = wt[r:3 * r + 1, r:3 * r + 1]
            tval = vt[r:3 * r + 1, r:3 * r + 1]
            resp = _response_map(tmpl, tval, ws, vs, r)
            if resp is None:
                continue
            score, iy, ix = _peak_candidate(resp, r)
            off = np.array([ix - r, iy - r], dtype=np.float64)
            key = (
                -score,
                0 if pair.kind == "base" else 1,
                float((off ** 2).sum()),
                pi,
                side,
                iy,
                ix,
            )
            if best_key is None or key < best_key:
                best_key = key
                best = (pair, side, off, resp, iy, ix, c1, c2, score)
    if best is None:
        return RefinedMatch(
            point1=x1.copy(),
            point2=x2.copy(),
            offset1=np.zeros(2),
            offset2=np.zeros(2),
            pair=None,
            score=-np.inf,
            refined=False,
        )
    pair, side, off, resp, iy, ix, c1, c2, score = best
    p = _subpixel_from_map(resp, iy, ix)
    searched = 2 if side == 1 else 1
    t1 = off if searched == 1 else np.zeros(2)
    t2 = off if searched == 2 else np.zeros(2)
    shift = off + p
    if searched == 1 and np.any(shift != 0.0):
        point1 = apply_homography(pair.h1_inv, c1 + shift)
    else:
        point1 = x1.copy()
    if searched == 2 and np.any(shift != 0.0):
        point2 = apply_homography(pair.h2_inv, c2 + shift)
    else:
        point2 = x2.copy()
    return RefinedMatch(
        point1=point1,
        point2=point2,
        offset1=t1,
        offset2=t2,
        pair=pair,
        score=score,
        subpixel=p,
        template_side=side,
    )


def refine_matches(img1, img2, matches, pairs, r=DEFAULT_RADIUS, workers=1):
    """Refine a batch of matches.

    ``pairs`` is either one WarpPair list shared by all matches or a
    per-match sequence of lists.  Results are ordered like the input and
    independent of the worker count.
    """
    matches = np.atleast_2d(np.asarray(matches, dtype=np.float64))
    if len(matches) == 0:
        return []
    per_match = pairs if pairs and isinstance(pairs[0], (list, tuple)) else [pairs] * len(matches)
    if len(per_match) != len(matches):
        raise ValueError("need one pair list per match")
    if workers is None or workers < 1:
        workers = 1
    if workers == 1:
        return [refine_match(img1, img2, m, p, r) for m, p in zip(matches, per_match)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(refine_match, img1, img2, m, p, r) for m, p in zip(matches, per_match)]
        return [f.result() for f in futs]
