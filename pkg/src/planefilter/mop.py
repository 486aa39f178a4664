"""Greedy sequential RANSAC that covers the motion flow with overlapping
virtual planes, discards unsupported matches, and assigns each survivor
its normalization homography."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoCompatiblePlane, NoModel
from .geometry import W_EPS, HomographyModel, as_matches

# minimum smallest singular value accepted for a sample fit
SV_MIN = 0.05
# sampling attempts allowed per unit of RANSAC iteration budget
ATTEMPT_FACTOR = 10
# hypotheses fitted per vectorized batch
_BLOCK = 256

# index pairs of the 6 point pairs within a 4-point sample
_PAIR_I = (0, 0, 0, 1, 1, 2)
_PAIR_J = (1, 2, 3, 2, 3, 3)


@dataclass
class MopConfig:
    """Plane-search parameters.

    ``t_l`` is the relaxed inlier threshold used for consensus scoring and
    the final kept test; ``t_h`` (default ``t_l / 2``) is the strict
    threshold driving removal between iterations.  ``n_min`` is the
    smallest consensus a plane may have (12 plain, 8 for the midpoint
    variant).  The RANSAC loop runs between ``c_min`` and ``c_max``
    iterations with an adaptive early exit, and keeps the ``buffer_size``
    best discarded hypotheses for bootstrapping later searches.
    """

    t_l: float = 15.0
    t_h: float | None = None
    n_min: int = 12
    c_f_max: int = 3
    c_min: int = 50
    c_max: int = 2000
    buffer_size: int = 5
    seed: int = 0
    confidence: float = 0.999
    im2_size: tuple[float, float] | None = None

    def __post_init__(self):
        if self.t_h is None:
            self.t_h = self.t_l / 2.0
        if not self.t_h < self.t_l:
            raise ValueError("t_h must be smaller than t_l")
        if self.n_min < 5:
            raise ValueError("n_min must be at least 5")
        if self.c_min > self.c_max:
            raise ValueError("c_min must not exceed c_max")


@dataclass
class FilterResult:
    """Outcome of a plane-filter run.

    ``kept``/``discarded`` partition the input indices; ``assignment``
    holds, per kept match, the index into ``planes`` of its normalization
    homography.  ``alpha_star`` is the rotation-fix angle (0 when unused)
    and ``passthrough`` flags degenerate inputs that were returned as-is.
    """

    kept: np.ndarray
    discarded: np.ndarray
    assignment: np.ndarray
    planes: list = field(default_factory=list)
    alpha_star: float = 0.0
    passthrough: bool = False


def _spread_ok(pts, t_l):
    """Rows of (b, 4, 2) points whose minimum pairwise distance is >= t_l."""
    d = pts[:, _PAIR_I, :] - pts[:, _PAIR_J, :]
    return (d ** 2).sum(-1).min(axis=1) >= t_l * t_l


def _dlt4_batch(pts1, pts2, sv_min):
    """Batched 4-point DLT fits with stability gating.

    Returns ``(h, sv, ok)``: normalized homographies, the smallest singular
    value of each Hartley-normalized system, and a validity mask (rows with
    coincident points, sv <= sv_min or a singular result are invalid).
    """
    b = len(pts1)
    c1 = pts1.mean(axis=1, keepdims=True)
    c2 = pts2.mean(axis=1, keepdims=True)
    r1 = np.linalg.norm(pts1 - c1, axis=2).mean(axis=1)
    r2 = np.linalg.norm(pts2 - c2, axis=2).mean(axis=1)
    ok = (r1 > 1e-12) & (r2 > 1e-12)
    s1 = np.sqrt(2.0) / np.clip(r1, 1e-12, None)
    s2 = np.sqrt(2.0) / np.clip(r2, 1e-12, None)
    p1 = (pts1 - c1) * s1[:, None, None]
    p2 = (pts2 - c2) * s2[:, None, None]
    a = np.zeros((b, 8, 9))
    x, y = p1[..., 0], p1[..., 1]
    u, v = p2[..., 0], p2[..., 1]
    a[:, 0::2, 0] = -x
    a[:, 0::2, 1] = -y
    a[:, 0::2, 2] = -1.0
    a[:, 0::2, 6] = u * x
    a[:, 0::2, 7] = u * y
    a[:, 0::2, 8] = u
    a[:, 1::2, 3] = -x
    a[:, 1::2, 4] = -y
    a[:, 1::2, 5] = -1.0
    a[:, 1::2, 6] = v * x
    a[:, 1::2, 7] = v * y
    a[:, 1::2, 8] = v
    try:
        _, sv, vt = np.linalg.svd(a)
    except np.linalg.LinAlgError:
        sv = np.zeros((b, 8))
        vt = np.zeros((b, 9, 9))
        for i in range(b):
            try:
                _, sv[i], vt[i] = np.linalg.svd(a[i])
            except np.linalg.LinAlgError:
                pass
    hn = vt[:, -1, :].reshape(b, 3, 3)
    t1 = np.zeros((b, 3, 3))
    t1[:, 0, 0] = s1
    t1[:, 1, 1] = s1
    t1[:, 0, 2] = -s1 * c1[:, 0, 0]
    t1[:, 1, 2] = -s1 * c1[:, 0, 1]
    t1[:, 2, 2] = 1.0
    t2i = np.zeros((b, 3, 3))
    t2i[:, 0, 0] = 1.0 / s2
    t2i[:, 1, 1] = 1.0 / s2
    t2i[:, 0, 2] = c2[:, 0, 0]
    t2i[:, 1, 2] = c2[:, 0, 1]
    t2i[:, 2, 2] = 1.0
    h = t2i @ hn @ t1
    norm = np.sqrt((h ** 2).sum(axis=(1, 2)))
    ok &= norm > 0
    h = h / np.clip(norm, 1e-300, None)[:, None, None]
    flat = h.reshape(b, 9)
    top = np.take_along_axis(flat, np.abs(flat).argmax(axis=1)[:, None], axis=1)[:, 0]
    h = h * np.where(top < 0, -1.0, 1.0)[:, None, None]
    sv_min_val = sv[:, -1]
    ok &= sv_min_val > sv_min
    ok &= np.abs(np.linalg.det(h)) > 1e-12
    return h, sv_min_val, ok


def _sign_consistent(w):
    """Rows of (b, k) last coordinates with one strict sign."""
    return (w > 0).all(axis=1) | (w < 0).all(axis=1)


def _batch_last_coords(h, pts):
    """Last homogeneous coordinate of (b, 3, 3) maps at (b, k, 2) points."""
    return np.einsum("bkj,bj->bk", pts, h[:, 2, :2]) + h[:, 2, 2][:, None]


class SinglePlaneFamily:
    """Builds one-homography models from 4-match samples."""

    min_sample = 4

    def __init__(self, cfg: MopConfig):
        self.cfg = cfg

    def fit_block(self, samples):
        """Models from (b, 4, 4) samples, in row order; gated samples are
        dropped.  Gates: keypoint spread >= t_l in both images, smallest
        singular value, invertibility, and sample quasi-affinity both ways.
        """
        samples = np.asarray(samples, dtype=np.float64)
        pts1, pts2 = samples[..., :2], samples[..., 2:]
        keep = _spread_ok(pts1, self.cfg.t_l) & _spread_ok(pts2, self.cfg.t_l)
        if not keep.any():
            return []
        rows = np.nonzero(keep)[0]
        h, sv, ok = _dlt4_batch(pts1[rows], pts2[rows], SV_MIN)
        rows, h, sv = rows[ok], h[ok], sv[ok]
        if not len(rows):
            return []
        ok = _sign_consistent(_batch_last_coords(h, pts1[rows]))
        rows, h, sv = rows[ok], h[ok], sv[ok]
        if not len(rows):
            return []
        h_inv = np.linalg.inv(h)
        ok = _sign_consistent(_batch_last_coords(h_inv, pts2[rows]))
        models = []
        for r, hh, hi, s in zip(rows[ok], h[ok], h_inv[ok], sv[ok]):
            models.append(HomographyModel(
                h=hh, h_inv=hi,
                anchor1=samples[r, 0, :2].copy(),
                anchor2=samples[r, 0, 2:].copy(),
                sample=samples[r].copy(),
                smallest_singular=float(s),
            ))
        return models

    def fit(self, sample):
        """Model from a single 4-match sample, or None when unusable."""
        sample = as_matches(sample)
        models = self.fit_block(sample[None, :, :])
        return models[0] if models else None


class ModelBuffer:
    """Top discarded hypotheses, ordered by how many inliers each explains
    beyond the current best model and the better buffer entries.  Each
    entry carries its inlier mask over the active set last refreshed."""

    def __init__(self, size: int):
        self.size = size
        self.entries: list[list] = []
        self.scores: list[int] = []

    @property
    def models(self):
        return [model for model, _ in self.entries]

    def refresh(self, matches, t_l):
        """Recompute entry masks against a (possibly new) active set."""
        for entry in self.entries:
            entry[1] = entry[0].inlier_mask(matches, t_l)

    def offer(self, model, mask, best_mask):
        """Insert when the hypothesis out-explains the weakest entry, then
        restore the exclusive-count ordering and trim."""
        if model is None:
            return
        count = int(mask.sum())
        if len(self.entries) >= self.size and self.scores and count <= self.scores[-1]:
            return
        self.entries.append([model, mask])
        self.reorder(best_mask)

    def reorder(self, best_mask):
        """Greedy exclusive-inlier ordering against the current best."""
        if not self.entries:
            self.scores = []
            return
        n = len(self.entries[0][1])
        covered = best_mask.copy() if best_mask is not None else np.zeros(n, dtype=bool)
        remaining = list(range(len(self.entries)))
        order, scores = [], []
        while remaining:
            pick = max(remaining, key=lambda i: (int((self.entries[i][1] & ~covered).sum()), -i))
            order.append(pick)
            scores.append(int((self.entries[pick][1] & ~covered).sum()))
            covered |= self.entries[pick][1]
            remaining.remove(pick)
        self.entries = [self.entries[i] for i in order[: self.size]]
        self.scores = scores[: self.size]

    def remove(self, model):
        for i, (m, _) in enumerate(self.entries):
            if m is model:
                del self.entries[i]
                del self.scores[i]
                return


def _adaptive_iterations(inlier_ratio, confidence, sample_size):
    """Standard RANSAC stopping count for the given inlier ratio."""
    if inlier_ratio <= 0.0:
        return np.inf
    good = min(inlier_ratio, 1.0) ** sample_size
    if good >= 1.0:
        return 0
    return int(np.ceil(np.log(1.0 - confidence) / np.log(1.0 - good)))


def _draw_samples(rng, n, count, k=4):
    """(count, k) index rows, distinct within each row, uniform over n."""
    idx = rng.integers(0, n, size=(count, k))
    while True:
        dup = (idx[:, :, None] == idx[:, None, :]).sum(axis=(1, 2)) > k
        if not dup.any():
            return idx
        idx[dup] = rng.integers(0, n, size=(int(dup.sum()), k))


def ransac_plane(matches, active, buffer, cfg, rng, family=None):
    """Best-consensus plane over ``matches[active]`` at threshold t_l.

    Buffered hypotheses are rescored first as a bootstrap; random 4-match
    samples follow in vectorized blocks.  Samples failing the spread,
    singular-value or quasi-affinity gates do not consume the iteration
    budget but count toward a hard cap of ``ATTEMPT_FACTOR * c_max``
    attempts.  Raises NoModel when no valid hypothesis was found at all.
    """
    family = family or SinglePlaneFamily(cfg)
    m = as_matches(matches)
    active = np.asarray(active, dtype=np.intp)
    sub = m[active]
    n = len(sub)
    if n < family.min_sample:
        raise NoModel("active set smaller than the minimal sample")

    buffer.refresh(sub, cfg.t_l)
    best = None
    best_count = 0
    best_mask = None

    def consider(model, mask, from_buffer):
        nonlocal best, best_count, best_mask
        count = int(mask.sum())
        if best is None or count > best_count:
            displaced, displaced_mask = best, best_mask
            best, best_count, best_mask = model, count, mask
            if from_buffer:
                buffer.remove(model)
            if displaced is not None:
                buffer.offer(displaced, displaced_mask, best_mask)
            else:
                buffer.reorder(best_mask)
        elif not from_buffer:
            buffer.offer(model, mask, best_mask)

    for model, mask in list(buffer.entries):
        consider(model, mask, from_buffer=True)

    c = 0
    attempts = 0
    cap = ATTEMPT_FACTOR * cfg.c_max
    needed = max(cfg.c_min, _adaptive_iterations(best_count / n, cfg.confidence, family.min_sample))
    while c < cfg.c_max and c < needed and attempts < cap:
        block = min(_BLOCK, cap - attempts)
        attempts += block
        idx = _draw_samples(rng, n, block, family.min_sample)
        for model in family.fit_block(sub[idx]):
            if not (c < cfg.c_max and c < needed):
                break
            c += 1
            consider(model, model.inlier_mask(sub, cfg.t_l), from_buffer=False)
            needed = max(cfg.c_min,
                         _adaptive_iterations(best_count / n, cfg.confidence, family.min_sample))
    if best is None:
        raise NoModel("no valid hypothesis within the attempt cap")
    best.inliers_weak = active[np.nonzero(best_mask)[0]]
    best.inliers_strong = active[np.nonzero(best.inlier_mask(sub, cfg.t_h))[0]]
    return best


def _plane_search(matches, cfg, family):
    """Main loop: find a plane, peel off its inliers, repeat until
    ``c_f_max`` consecutive low-support failures."""
    m = as_matches(matches)
    rng = np.random.default_rng(cfg.seed)
    buffer = ModelBuffer(cfg.buffer_size)
    active = np.arange(len(m))
    planes = []
    c_f = 0
    while c_f < cfg.c_f_max and len(active) >= family.min_sample:
        try:
            model = ransac_plane(m, active, buffer, cfg, rng, family)
        except NoModel:
            c_f += 1
            continue
        sub = m[active]
        weak = model.inlier_mask(sub, cfg.t_l)
        if int(weak.sum()) < cfg.n_min:
            # keep the rejected best around so later runs can bootstrap it
            buffer.refresh(sub, cfg.t_l)
            buffer.offer(model, weak, None)
            c_f += 1
            continue
        strong = model.inlier_mask(sub, cfg.t_h)
        if int(strong.sum()) > cfg.n_min / 2:
            removal = strong
            c_f = 0
        else:
            removal = weak
            c_f += 1
        planes.append(model)
        active = active[~removal]
    return planes


def _assign(errors, compatible, counts):
    """Plane choice for one match given per-plane errors, compatibility
    flags and consensus sizes: the smallest error among compatible planes
    whose consensus reaches the top-5 median; ties prefer the larger
    consensus, then the lower plane index."""
    comp = np.nonzero(compatible)[0]
    if comp.size == 0:
        raise NoCompatiblePlane("match is not an inlier of any plane")
    top = np.sort(counts[comp])[::-1][:5]
    q = np.median(top)
    eligible = comp[counts[comp] >= q]
    return int(min(eligible, key=lambda i: (errors[i], -counts[i], i)))


def assign_homography(match, planes, t_l=15.0):
    """Index of the plane normalizing ``match`` (a 4-vector x1,y1,x2,y2),
    using each plane's cached weak-inlier count as its consensus."""
    xy = np.asarray(match, dtype=np.float64).reshape(1, 4)
    errors = np.array([float(p.errors(xy)[0]) for p in planes])
    compatible = np.array([bool(p.inlier_mask(xy, t_l)[0]) for p in planes])
    counts = np.array([0 if p.inliers_weak is None else len(p.inliers_weak) for p in planes])
    return _assign(errors, compatible, counts)


def _finalize(matches, planes, cfg, alpha_star=0.0, passthrough=False):
    """Kept/discarded split and per-match plane assignment over the full
    input set, refreshing each plane's cached inlier bookkeeping."""
    m = as_matches(matches)
    n = len(m)
    if passthrough or not planes:
        kept = np.arange(n) if passthrough else np.empty(0, dtype=int)
        discarded = np.empty(0, dtype=int) if passthrough else np.arange(n)
        return FilterResult(
            kept=kept,
            discarded=discarded,
            assignment=np.full(len(kept), -1, dtype=int),
            planes=list(planes),
            alpha_star=alpha_star,
            passthrough=passthrough,
        )
    masks = np.stack([p.inlier_mask(m, cfg.t_l) for p in planes])
    kept_mask = masks.any(axis=0)
    kept = np.nonzero(kept_mask)[0]
    discarded = np.nonzero(~kept_mask)[0]
    for p, wmask in zip(planes, masks):
        p.inliers_weak = np.nonzero(wmask)[0]
        p.inliers_strong = np.nonzero(p.inlier_mask(m, cfg.t_h))[0]
    # consensus counted within the surviving set only
    counts = masks[:, kept_mask].sum(axis=1)
    errs = np.stack([p.errors(m) for p in planes])
    assignment = np.empty(len(kept), dtype=int)
    for j, mi in enumerate(kept):
        assignment[j] = _assign(errs[:, mi], masks[:, mi], counts)
    return FilterResult(
        kept=kept,
        discarded=discarded,
        assignment=assignment,
        planes=list(planes),
        alpha_star=alpha_star,
        passthrough=passthrough,
    )


def mop_filter(matches, cfg: MopConfig | None = None) -> FilterResult:
    """Filter matches onto overlapping planes.

    Fewer than 4 input matches are passed through untouched (no planes,
    everything kept, ``passthrough`` set).
    """
    cfg = cfg or MopConfig()
    m = as_matches(matches)
    family = SinglePlaneFamily(cfg)
    if len(m) < 4:
        return _finalize(m, [], cfg, passthrough=True)
    planes = _plane_search(m, cfg, family)
    return _finalize(m, planes, cfg)
