"""Frame-by-frame tracking state machine.

Two modes. Detecting: run the face detector; on a hit, seed landmarks by
placing the mean face in the detected box, align, fit and switch to
Tracking (the detection frame itself never emits a pose). Tracking:
re-initialize landmarks through the current camera pose, align with the
selected backend, verify, re-fit warm-started from the previous frame,
anchor to the world, average with the previous pose, update the per-axis
Kalman filters and emit both the current-time and the render-time pose.

Any verification failure or component error on a frame degrades to a
tracking loss (the machine falls back to Detecting and re-detects on the
same frame); it never aborts the sequence. A remote backend fault falls
back to the local backend within the same frame and marks the remote
unhealthy for select_backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from . import anchoring, pose_fit, temporal
from .anchoring import FramePoseContext
from .errors import BackendUnavailable, HeadTrackError
from .face_model import DeformableFaceModel
from .failure import FailurePredictor, is_failure
from .geometry import CameraIntrinsics, RigidTransform, project_points
from .pose_fit import FitParams, HeadPoseFit
from .temporal import AxisKalman, FilterConfig

DETECTING = "detecting"
TRACKING = "tracking"


@dataclass(frozen=True)
class Frame:
    """One camera frame: headset pose context, acquisition timestamp and an
    optional grayscale image (absent in landmark-only simulation)."""

    ctx: Optional[FramePoseContext]
    acquisition_time: float
    image: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AlignResult:
    landmarks: np.ndarray
    valid: bool
    confidence: float


class AlignmentBackend(Protocol):
    def align(self, frame: Frame, init_landmarks) -> AlignResult: ...


class FaceDetector(Protocol):
    def detect(self, frame: Frame):  # -> (u0, v0, width, height) or None
        ...


@dataclass(frozen=True)
class TrackerState:
    mode: str
    landmarks: Optional[np.ndarray] = None
    fit: Optional[HeadPoseFit] = None
    world_pose: Optional[RigidTransform] = None       # smoothed, drives reinit
    world_pose_unfiltered: Optional[RigidTransform] = None  # averaging input
    ctx: Optional[FramePoseContext] = None
    kalman: Optional[tuple] = None                    # (x, y, z) AxisKalman
    acquisition_time: float = 0.0

    @staticmethod
    def detecting() -> "TrackerState":
        return TrackerState(DETECTING)


@dataclass(frozen=True)
class TrackOutput:
    tracking_valid: bool
    mode: str                      # mode after the step
    backend_used: Optional[str] = None
    world_pose_raw: Optional[RigidTransform] = None        # zero-horizon
    world_pose_predicted: Optional[RigidTransform] = None  # render-time
    landmarks: Optional[np.ndarray] = None
    attributes: frozenset = frozenset()
    residual: Optional[float] = None

    def to_record(self) -> dict:
        def pose(p):
            if p is None:
                return None
            return {
                "rotation": p.rotation.tolist(),
                "translation": p.translation.tolist(),
            }

        return {
            "tracking_valid": self.tracking_valid,
            "mode": self.mode,
            "backend": self.backend_used,
            "world_pose": pose(self.world_pose_raw),
            "world_pose_predicted": pose(self.world_pose_predicted),
            "landmarks": None if self.landmarks is None else np.asarray(self.landmarks).tolist(),
            "attributes": sorted(self.attributes),
            "residual": self.residual,
        }


@dataclass
class TrackerConfig:
    model: DeformableFaceModel
    intrinsics: CameraIntrinsics
    detector: FaceDetector
    local_backend: AlignmentBackend
    remote_backend: Optional[object] = None  # AlignmentBackend + available()
    fit_params: FitParams = field(default_factory=FitParams)
    filter_config: FilterConfig = field(default_factory=FilterConfig)
    attribute_thresholds: dict = field(
        default_factory=lambda: dict(pose_fit.DEFAULT_ATTRIBUTE_THRESHOLDS)
    )
    failure_predictor: Optional[FailurePredictor] = None
    image_size: Optional[tuple] = None
    reinit_margin: float = 50.0
    detection_box_margin: float = 1.4


def select_backend(remote, local, remote_healthy: bool):
    """Remote iff configured and healthy; the local backend otherwise."""
    if remote is not None and remote_healthy:
        return remote
    return local


def _remote_healthy(cfg: TrackerConfig) -> bool:
    r = cfg.remote_backend
    if r is None:
        return False
    avail = getattr(r, "available", None)
    return bool(avail()) if avail is not None else True


def _align(cfg: TrackerConfig, frame: Frame, init_landmarks):
    """Run the selected backend; a remote fault falls back to local within
    the same frame. Returns (AlignResult, backend_name)."""
    backend = select_backend(cfg.remote_backend, cfg.local_backend, _remote_healthy(cfg))
    name = "remote" if backend is cfg.remote_backend else "local"
    try:
        return backend.align(frame, init_landmarks), name
    except BackendUnavailable:
        if name == "remote":
            return cfg.local_backend.align(frame, init_landmarks), "local"
        raise


def seed_landmarks_from_box(
    model: DeformableFaceModel, k: CameraIntrinsics, box
) -> np.ndarray:
    """Project the frontal mean face into the detected box to seed the
    aligner after a detection hit."""
    u0, v0, bw, bh = box
    verts = model.mean_shape[model.mapped_vertices()]
    width = float(verts[:, 0].max() - verts[:, 0].min())
    depth = k.fx * width / max(bw, 1e-6)
    center = np.array([u0 + bw / 2.0, v0 + bh / 2.0])
    centroid = verts.mean(axis=0)
    t = np.array(
        [
            (center[0] - k.cx) * depth / k.fx,
            (center[1] - k.cy) * depth / k.fy,
            depth,
        ]
    ) - centroid
    return project_points(k, verts + t)


def _verify(cfg: TrackerConfig, frame: Frame, result: AlignResult) -> bool:
    if not result.valid:
        return False
    if cfg.failure_predictor is not None and frame.image is not None:
        if is_failure(cfg.failure_predictor, frame.image, result.landmarks):
            return False
    return True


def _fit_and_anchor(cfg, frame, landmarks, init_fit):
    fitted = pose_fit.fit(
        cfg.model, landmarks, cfg.intrinsics, init_fit, cfg.fit_params
    )
    world = anchoring.head_pose_to_world(fitted.pose, frame.ctx)
    return fitted, world


def _detect_step(cfg: TrackerConfig, frame: Frame):
    """Detection branch; returns (state, backend_name or None)."""
    try:
        box = cfg.detector.detect(frame)
    except HeadTrackError:
        box = None
    if box is None:
        return TrackerState.detecting(), None
    seeds = seed_landmarks_from_box(cfg.model, cfg.intrinsics, box)
    try:
        result, backend_name = _align(cfg, frame, seeds)
        if not _verify(cfg, frame, result):
            return TrackerState.detecting(), backend_name
        init = pose_fit.initial_guess(cfg.model, result.landmarks, cfg.intrinsics)
        fitted, world = _fit_and_anchor(cfg, frame, result.landmarks, init)
    except HeadTrackError:
        return TrackerState.detecting(), None
    fcfg = cfg.filter_config
    kal = tuple(
        AxisKalman.from_measurement(float(world.translation[i]), frame.acquisition_time, fcfg)
        for i in range(3)
    )
    state = TrackerState(
        TRACKING,
        landmarks=result.landmarks,
        fit=fitted,
        world_pose=world,
        world_pose_unfiltered=world,
        ctx=frame.ctx,
        kalman=kal,
        acquisition_time=frame.acquisition_time,
    )
    return state, backend_name


def _track_step(cfg: TrackerConfig, state: TrackerState, frame: Frame, render_time: float):
    """Tracking branch; returns (state, TrackOutput) or None on loss."""
    try:
        s_init, valid = anchoring.reinit_landmarks(
            state.landmarks,
            state.world_pose.translation,
            state.ctx,
            frame.ctx,
            cfg.intrinsics,
            image_size=cfg.image_size,
            margin=cfg.reinit_margin,
        )
        if not np.all(valid):
            return None
        result, backend_name = _align(cfg, frame, s_init)
        if not _verify(cfg, frame, result):
            return None
        fitted, world_unfiltered = _fit_and_anchor(
            cfg, frame, result.landmarks, state.fit
        )
    except HeadTrackError:
        return None

    fcfg = cfg.filter_config
    smoothed = temporal.average_pose(state.world_pose_unfiltered, world_unfiltered, fcfg)
    dt = frame.acquisition_time - state.acquisition_time
    if dt > 0:
        kal = tuple(
            temporal.kalman_step(state.kalman[i], dt, float(smoothed.translation[i]), fcfg)
            for i in range(3)
        )
    else:
        kal = state.kalman  # repeated timestamp: keep the filters as-is
    horizon = max(render_time - frame.acquisition_time, 0.0)
    t_now = np.array([temporal.predict_at(f, 0.0, fcfg) for f in kal])
    t_pred = np.array([temporal.predict_at(f, horizon, fcfg) for f in kal])

    attributes = frozenset(
        pose_fit.estimate_attributes(cfg.model, fitted.weights, cfg.attribute_thresholds)
    )
    new_state = TrackerState(
        TRACKING,
        landmarks=result.landmarks,
        fit=fitted,
        world_pose=smoothed,
        world_pose_unfiltered=world_unfiltered,
        ctx=frame.ctx,
        kalman=kal,
        acquisition_time=frame.acquisition_time,
    )
    output = TrackOutput(
        tracking_valid=True,
        mode=TRACKING,
        backend_used=backend_name,
        world_pose_raw=RigidTransform(smoothed.rotation, t_now),
        world_pose_predicted=RigidTransform(smoothed.rotation, t_pred),
        landmarks=result.landmarks,
        attributes=attributes,
        residual=fitted.rms_residual,
    )
    return new_state, output


def step(state: TrackerState, frame: Frame, render_time: float, cfg: TrackerConfig):
    """Advance the tracker by one frame; returns (new_state, TrackOutput)."""
    if state.mode == TRACKING:
        tracked = _track_step(cfg, state, frame, render_time)
        if tracked is not None:
            return tracked
        state = TrackerState.detecting()
    new_state, backend_name = _detect_step(cfg, frame)
    return new_state, TrackOutput(
        tracking_valid=False, mode=new_state.mode, backend_used=backend_name
    )


class Tracker:
    """Stateful convenience wrapper around step()."""

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self.state = TrackerState.detecting()

    def step(self, frame: Frame, render_time: Optional[float] = None) -> TrackOutput:
        if render_time is None:
            render_time = (
                frame.acquisition_time
                + self.cfg.filter_config.acquisition_to_render_delay
            )
        self.state, output = step(self.state, frame, render_time, self.cfg)
        return output
