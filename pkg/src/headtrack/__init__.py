"""headtrack: monocular head-pose tracking toolkit.

Fits a deformable 3D face model to 2D landmarks (Gauss-Newton), anchors the
pose in world space, compensates tracker initialization for headset motion,
predicts the pose at render time with per-axis Kalman filters, detects
tracking failures from HOG features, and speaks a compact binary protocol
to an optional remote alignment backend with local fallback.
"""

from .errors import HeadTrackError
from .face_model import DeformableFaceModel, load_default_model, load_model, save_model
from .geometry import CameraIntrinsics, RigidTransform
from .pipeline import Frame, Tracker, TrackerConfig, TrackOutput
from .pose_fit import FitParams, HeadPoseFit, fit, initial_guess
from .temporal import AxisKalman, FilterConfig

__version__ = "0.1.0"

__all__ = [
    "AxisKalman",
    "CameraIntrinsics",
    "DeformableFaceModel",
    "FilterConfig",
    "FitParams",
    "Frame",
    "HeadPoseFit",
    "HeadTrackError",
    "RigidTransform",
    "TrackOutput",
    "Tracker",
    "TrackerConfig",
    "__version__",
    "fit",
    "initial_guess",
    "load_default_model",
    "load_model",
    "save_model",
]
