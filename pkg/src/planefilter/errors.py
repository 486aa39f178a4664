"""Exception types shared across the package."""


class PlanefilterError(Exception):
    """Base class for all library errors."""


class DegenerateSample(PlanefilterError):
    """Minimal sample cannot produce a usable homography."""


class NoModel(PlanefilterError):
    """RANSAC could not build a single valid hypothesis."""


class NoCompatiblePlane(PlanefilterError):
    """No plane has the match as an inlier."""


class OutOfBounds(PlanefilterError):
    """Too many warped patch samples fall outside the image."""


class InsufficientMatches(PlanefilterError):
    """Not enough matches for the requested estimation."""


class DegenerateConfiguration(PlanefilterError):
    """Point configuration does not constrain the model."""


class RejectionLimit(PlanefilterError):
    """Scene sampling could not satisfy the validity constraints."""


class EmptyOverlap(PlanefilterError):
    """Warped image regions do not overlap."""
