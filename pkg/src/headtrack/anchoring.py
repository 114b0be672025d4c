"""World-space anchoring and headset-motion-compensated re-initialization.

Converts fitted camera-frame head poses into the world frame using the
headset's camera-to-world transform, and re-projects the previous frame's
landmarks through the current camera so the aligner starts from positions
that are invariant to headset motion.

The world rotation is composed with a lookAt factor built from the head and
camera positions, so it is a billboard-style frame: transforming it back
into the camera recovers the translation exactly but not the raw fitted
rotation. The re-initialization assigns every landmark the head-center
distance from the previous camera; a per-landmark distance override is
available when the caller has the fitted mesh depths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegenerateDepth
from .geometry import CameraIntrinsics, RigidTransform

_MIN_HEAD_DISTANCE = 1e-6


@dataclass(frozen=True)
class FramePoseContext:
    """Headset camera pose at a frame's acquisition time (both directions)."""

    cam_to_world: RigidTransform
    world_to_cam: RigidTransform
    timestamp: float = 0.0

    def __post_init__(self):
        inv = geometry.invert(self.cam_to_world)
        if (
            np.abs(inv.rotation - self.world_to_cam.rotation).max() > 1e-9
            or np.abs(inv.translation - self.world_to_cam.translation).max() > 1e-9
        ):
            raise ValueError("world_to_cam is not the inverse of cam_to_world")

    @staticmethod
    def from_cam_to_world(cam_to_world: RigidTransform, timestamp: float = 0.0):
        return FramePoseContext(cam_to_world, geometry.invert(cam_to_world), timestamp)

    @staticmethod
    def identity(timestamp: float = 0.0):
        return FramePoseContext.from_cam_to_world(RigidTransform.identity(), timestamp)


def head_pose_to_world(
    pose_cam: RigidTransform, ctx: FramePoseContext, up=(0.0, 1.0, 0.0)
) -> RigidTransform:
    """World head pose: translation through cam-to-world, rotation composed
    with the lookAt frame pointing from the head to the camera position."""
    R_cw = ctx.cam_to_world.rotation
    t_cw = ctx.cam_to_world.translation
    t_w = R_cw @ pose_cam.translation + t_cw
    r_la = geometry.look_at(t_w, t_cw, up)
    r_w = geometry.orthonormalize(pose_cam.rotation @ r_la)
    return RigidTransform(r_w, t_w)


def reinit_landmarks(
    s_prev,
    t_w_prev,
    prev_ctx: FramePoseContext,
    cur_ctx: FramePoseContext,
    k: CameraIntrinsics,
    distances=None,
    image_size=None,
    margin: float = 0.0,
):
    """Re-project the previous frame's landmarks through the current camera.

    Each previous pixel is unprojected to a ray, pushed out to the previous
    camera's distance from the head center (or per-landmark `distances`),
    carried to world space with the previous camera pose and re-projected
    with the current one.

    Returns (landmarks (L, 2), valid (L,) bool). Landmarks behind the
    current camera, or outside `image_size` (w, h) expanded by `margin`
    pixels when given, are flagged invalid (their coordinates are NaN when
    behind the camera).
    """
    s_prev = np.asarray(s_prev, dtype=np.float64)
    t_w_prev = np.asarray(t_w_prev, dtype=np.float64)
    t_cw_prev = prev_ctx.cam_to_world.translation
    head_dist = float(np.linalg.norm(t_cw_prev - t_w_prev))
    if head_dist <= _MIN_HEAD_DISTANCE:
        raise DegenerateDepth(
            f"head-to-camera distance {head_dist:.3e} <= {_MIN_HEAD_DISTANCE}"
        )
    if distances is None:
        dist = np.full(s_prev.shape[0], head_dist)
    else:
        dist = np.asarray(distances, dtype=np.float64)

    rays = np.empty((s_prev.shape[0], 3))
    rays[:, 0] = (s_prev[:, 0] - k.cx) / k.fx
    rays[:, 1] = (s_prev[:, 1] - k.cy) / k.fy
    rays[:, 2] = 1.0
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)

    world_points = t_cw_prev + (rays @ prev_ctx.cam_to_world.rotation.T) * dist[:, None]
    cam_points = cur_ctx.world_to_cam.apply(world_points)

    valid = cam_points[:, 2] > 1e-9
    out = np.full_like(s_prev, np.nan)
    if np.any(valid):
        out[valid] = geometry.project_points(k, cam_points[valid])
    if image_size is not None:
        w, h = image_size
        inside = (
            (out[:, 0] >= -margin)
            & (out[:, 0] <= w - 1 + margin)
            & (out[:, 1] >= -margin)
            & (out[:, 1] <= h - 1 + margin)
        )
        valid = valid & np.where(np.isnan(out[:, 0]), False, inside)
    return out, valid
