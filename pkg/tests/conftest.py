"""Shared helpers: random projective maps and hand-rolled oracles."""

from __future__ import annotations

import numpy as np
import pytest

from planefilter.geometry import apply_homography, normalize_homography


def random_similarity(rng, max_shift=50.0):
    """Random rotation + uniform scale + translation as a 3x3 matrix."""
    angle = rng.uniform(0, 2 * np.pi)
    scale = rng.uniform(0.5, 2.0)
    tx, ty = rng.uniform(-max_shift, max_shift, size=2)
    c, s = np.cos(angle), np.sin(angle)
    return np.array([
        [scale * c, -scale * s, tx],
        [scale * s, scale * c, ty],
        [0.0, 0.0, 1.0],
    ])


def random_projective(rng, strength=1e-3):
    """Mild random homography: similarity plus a small projective row."""
    h = random_similarity(rng, max_shift=20.0)
    h[2, :2] = rng.uniform(-strength, strength, size=2)
    return normalize_homography(h)


def matches_through(h, pts1):
    """Exact correspondences of (n, 2) points under h."""
    pts1 = np.asarray(pts1, dtype=np.float64)
    return np.hstack([pts1, apply_homography(h, pts1)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
