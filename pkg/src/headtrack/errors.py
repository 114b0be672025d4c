"""Exception hierarchy shared across the toolkit.

Every error raised by the package derives from HeadTrackError so callers can
catch at whatever granularity they need.
"""


class HeadTrackError(Exception):
    """Base class for all toolkit errors."""


# --- geometry ---------------------------------------------------------------

class DegenerateProjection(HeadTrackError):
    """Point at or behind the camera plane (z <= 1e-9)."""


class DegenerateLookAt(HeadTrackError):
    """lookAt target coincides with the origin or up is parallel to gaze."""


class NonFiniteInput(HeadTrackError):
    """An input contained NaN or infinity."""


# --- face model --------------------------------------------------------------

class DimensionMismatch(HeadTrackError):
    """Blend weight vector length does not match the model's blendshape count."""


class DegenerateModel(HeadTrackError):
    """Model geometry unusable, e.g. zero inter-pupillary distance."""


class ParseError(HeadTrackError):
    """Model or scenario file could not be parsed; message carries context."""


class ValidationError(HeadTrackError):
    """A loaded structure violates a documented invariant."""


# --- pose fitting ------------------------------------------------------------

class InsufficientLandmarks(HeadTrackError):
    """Fewer mapped landmarks than required for pose observability."""


class SingularNormalEquations(HeadTrackError):
    """Normal equations unsolvable even at the damping ceiling."""


class DegenerateConfiguration(HeadTrackError):
    """Landmark configuration (e.g. collinear) admits no pose estimate."""


class UnknownAttributeName(HeadTrackError):
    """Attribute threshold references a blendshape that does not exist."""


# --- anchoring ---------------------------------------------------------------

class DegenerateDepth(HeadTrackError):
    """Head position coincides with the camera position."""


# --- temporal ----------------------------------------------------------------

class NonFiniteMeasurement(HeadTrackError):
    """Kalman measurement contained NaN or infinity."""


# --- failure detection -------------------------------------------------------

class EmptyImage(HeadTrackError):
    """HOG extraction attempted on an empty image."""


class LandmarkCountMismatch(HeadTrackError):
    """Predictor landmark count differs from the supplied landmark list."""


class DegenerateDesignMatrix(HeadTrackError):
    """Training design matrix singular even after the ridge floor."""


# --- wire protocol -----------------------------------------------------------

class ProtocolError(HeadTrackError):
    """Base class for wire-format violations."""


class TruncatedFrame(ProtocolError):
    """Byte stream ended before the declared frame length."""


class VersionMismatch(ProtocolError):
    """Unknown protocol version byte."""


class SizeMismatch(ProtocolError):
    """Declared frame length disagrees with field arithmetic."""


class BackendUnavailable(HeadTrackError):
    """Remote alignment backend unreachable; caller should fall back."""


# --- simulation --------------------------------------------------------------

class InvalidTrajectory(HeadTrackError):
    """Scenario trajectory undefined over the requested duration."""


class FrameOutOfRange(HeadTrackError):
    """Oracle queried for a frame outside the generated scenario."""


class DegeneratePose(HeadTrackError):
    """Rasterization requested for a pose behind the camera."""


# --- evaluation --------------------------------------------------------------

class DegenerateNormalizer(HeadTrackError):
    """Inter-ocular distance of the ground truth is zero."""


class LengthMismatch(HeadTrackError):
    """Predicted and ground-truth landmark lists differ in length."""


class EmptyInput(HeadTrackError):
    """Metric requested over an empty error list."""


# --- cli ---------------------------------------------------------------------

class ConfigError(HeadTrackError):
    """Configuration file invalid; message names the offending field."""
