"""Camera model, rigid transforms and rotation utilities.

Coordinate conventions used throughout the package:

  Camera frame (right-handed, computer-vision style):
    x right, y down, z forward along the optical axis. Points with z > 0 are
    in front of the camera.

  Image frame:
    u right, v down, in pixels. The pinhole map is
    u = fx * x / z + cx,  v = fy * y / z + cy.

  World frame:
    right-handed, +y up by default (the lookAt up vector is configurable).

The canonical "forward" axis mapped by look_at is +z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLookAt, DegenerateProjection, NonFiniteInput

_EPS_Z = 1e-9
_ORTHO_TOL = 1e-9


def _as_readonly(a, shape):
    arr = np.asarray(a, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"non-finite entries in array of shape {shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point in pixels. Zero skew."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise NonFiniteInput(f"intrinsics.{name} is not finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self):
        """3x3 intrinsic matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose: p_out = rotation @ p_in + translation.

    rotation must be orthonormal with det +1 within 1e-9 elementwise; both
    arrays are stored read-only so instances are safe to share across threads.
    """

    rotation: np.ndarray
    translation: np.ndarray
    _validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_readonly(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _as_readonly(self.translation, (3,)))
        if self._validate:
            R = self.rotation
            err = np.abs(R.T @ R - np.eye(3)).max()
            if err > _ORTHO_TOL:
                raise ValueError(f"rotation not orthonormal (max deviation {err:.3e})")
            det = np.linalg.det(R)
            if abs(det - 1.0) > _ORTHO_TOL:
                raise ValueError(f"rotation determinant {det:.12f} != +1")

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points):
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: compose(a, b).apply(p) == a.apply(b.apply(p))."""
    return RigidTransform(
        orthonormalize(a.rotation @ b.rotation),
        a.rotation @ b.translation + a.translation,
    )


def invert(a: RigidTransform) -> RigidTransform:
    rt = a.rotation.T
    return RigidTransform(rt.copy(), -rt @ a.translation)


def project(k: CameraIntrinsics, p) -> np.ndarray:
    """Pinhole projection of a single camera-frame point to a pixel.

    Raises DegenerateProjection when the point is at or behind the camera
    plane (z <= 1e-9).
    """
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise NonFiniteInput("non-finite point")
    if p[2] <= _EPS_Z:
        raise DegenerateProjection(f"point depth {p[2]:.3e} <= {_EPS_Z}")
    return np.array(
        [k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy]
    )


def project_points(k: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection of an (N, 3) batch; caller guarantees z > 0."""
    z = pts[:, 2]
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = k.fx * pts[:, 0] / z + k.cx
    out[:, 1] = k.fy * pts[:, 1] / z + k.cy
    return out


def unproject(k: CameraIntrinsics, s) -> np.ndarray:
    """Ray direction K^-1 (u, v, 1) for a pixel; not normalized."""
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise NonFiniteInput("non-finite pixel")
    return np.array([(s[0] - k.cx) / k.fx, (s[1] - k.cy) / k.fy, 1.0])


def look_at(from_point, to_point, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Rotation mapping the canonical forward axis (+z) onto to - from.

    Raises DegenerateLookAt when from and to coincide or up is parallel to
    the gaze direction.
    """
    f = np.asarray(to_point, dtype=np.float64) - np.asarray(from_point, dtype=np.float64)
    n = np.linalg.norm(f)
    if n <= 1e-9:
        raise DegenerateLookAt("look_at target coincides with origin")
    forward = f / n
    u = np.asarray(up, dtype=np.float64)
    u = u / np.linalg.norm(u)
    right = np.cross(u, forward)
    rn = np.linalg.norm(right)
    if rn <= 1e-6:
        raise DegenerateLookAt("up vector parallel to gaze direction")
    right /= rn
    true_up = np.cross(forward, right)
    # columns (right, up, forward): R @ e_z = forward, det = +1
    return np.column_stack([right, true_up, forward])


def rotation_from_axis_angle(w) -> np.ndarray:
    """Rodrigues' formula; w is the rotation axis scaled by the angle."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )
    if theta < 1e-12:
        # second-order series keeps the map smooth through zero
        return np.eye(3) + K + 0.5 * (K @ K)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * K + c * (K @ K)


def axis_angle_from_rotation(R: np.ndarray) -> np.ndarray:
    """Inverse of rotation_from_axis_angle (matrix log of SO(3))."""
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-10:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if abs(np.pi - theta) < 1e-7:
        # near pi the off-diagonal formula degenerates; use the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from the largest component
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = axis * np.sign(A[i] + (np.arange(3) == i))
        return axis / np.linalg.norm(axis) * theta
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return axis / (2.0 * np.sin(theta)) * theta


def geodesic_angle(ra: np.ndarray, rb: np.ndarray) -> float:
    """Rotation angle (radians) between two rotation matrices."""
    cos_theta = np.clip((np.trace(ra.T @ rb) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(cos_theta))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (via SVD)."""
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out
