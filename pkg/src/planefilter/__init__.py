"""Plane-based match filtering and keypoint refinement.

Filters sparse image correspondences by clustering them onto overlapping
virtual planar homographies, optionally through distortion-balanced
midpoint homography pairs, and refines keypoint positions by normalized
cross-correlation on homography-aligned patches.  Ships with the matching
evaluation metric suite and seeded ground-truth scene generators.
"""

from .errors import (
    DegenerateConfiguration,
    DegenerateSample,
    EmptyOverlap,
    InsufficientMatches,
    NoCompatiblePlane,
    NoModel,
    OutOfBounds,
    PlanefilterError,
    RejectionLimit,
)
from .geometry import (
    HomographyModel,
    apply_homography,
    fit_homography_dlt,
    inlier_set,
    quasi_affine_mask,
    quasi_affine_set,
    reprojection_errors,
    sample_degeneracy_check,
)
from .metrics import (
    EvalReport,
    GroundTruth,
    auc,
    epipolar_errors,
    estimate_intrinsics,
    evaluate_pair,
    fundamental_from_pose,
    homography_common_area_error,
    match_scores,
    pose_error,
    pose_from_fundamental,
)
from .miho import (
    DualHomographyModel,
    MihoPair,
    fit_dual_homography,
    fix_rotation,
    miho_inlier_set,
    mop_miho_filter,
    split_midpoints,
)
from .mop import (
    FilterResult,
    ModelBuffer,
    MopConfig,
    assign_homography,
    mop_filter,
    ransac_plane,
)
from .ncc import (
    RefinedMatch,
    WarpPair,
    build_warp_pairs,
    ncc_similarity,
    refine_match,
    refine_matches,
    subpixel_peak,
    warp_patch,
)
from .synth import (
    OUTLIER,
    LabeledScene,
    SceneSpec,
    gen_planar_scene,
    gen_pose_scene,
    render_textured_pair,
)

__version__ = "0.1.0"
