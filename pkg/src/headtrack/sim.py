"""Synthetic scenes with exact ground truth.

Head and camera trajectories are keyframed poses interpolated with cubic
Hermite splines (Catmull-Rom tangents) for position and a cubic rotation
spline for orientation. Per-frame ground truth records the head's world
pose, its camera-frame pose and the exact landmark projections before any
noise is added, so the generated sequences double as oracles for the
fitting, anchoring and pipeline tests.

The oracle alignment backend replays the (optionally noise-corrupted)
ground-truth landmarks and reports valid=False inside occlusion windows;
the oracle detector returns the true face box outside them. Its confidence
is exp(-noise_sigma), monotone decreasing in the injected noise.

render_time for a frame defaults to acquisition + camera_latency +
processing_delay (0.137 s + 0.033 s): the camera's acquisition-to-delivery
delay plus a processing/render budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.spatial.transform import Rotation, RotationSpline

from .anchoring import FramePoseContext
from .errors import (
    DegeneratePose,
    FrameOutOfRange,
    InvalidTrajectory,
    ParseError,
)
from .face_model import DeformableFaceModel, synthesize
from .geometry import CameraIntrinsics, RigidTransform, compose, project_points
from .pipeline import AlignResult, Frame


@dataclass(frozen=True)
class PoseKeyframe:
    time: float
    position: tuple
    rotation_xyzw: tuple = (0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class ScenarioConfig:
    duration: int                       # frames
    frame_rate: float = 30.0
    head_keyframes: tuple = (PoseKeyframe(0.0, (0.0, 0.0, 1.0)),)
    camera_keyframes: tuple = (PoseKeyframe(0.0, (0.0, 0.0, 0.0)),)
    weight_schedules: dict = field(default_factory=dict)
    landmark_noise_sigma: float = 0.0
    occlusion_windows: tuple = ()       # (start, end) frame ranges, end excl.
    camera_latency: float = 0.137
    processing_delay: float = 0.033
    seed: int = 0
    image_size: Optional[tuple] = None  # (w, h): rasterize frames when set

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise InvalidTrajectory("frame_rate must be positive")
        if self.duration < 1:
            raise InvalidTrajectory("duration must be at least one frame")

    def render_time(self, acquisition_time: float) -> float:
        return acquisition_time + self.camera_latency + self.processing_delay


class PoseTrajectory:
    """Keyframed pose curve; constant outside a single keyframe."""

    def __init__(self, keyframes):
        kf = sorted(keyframes, key=lambda f: f.time)
        times = np.array([f.time for f in kf])
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise InvalidTrajectory("keyframe times must be strictly increasing")
        self.t0 = float(times[0])
        self.t1 = float(times[-1])
        self._single = None
        if len(kf) == 1:
            f = kf[0]
            self._single = RigidTransform(
                Rotation.from_quat(f.rotation_xyzw).as_matrix(), np.array(f.position)
            )
            return
        pos = np.array([f.position for f in kf])
        # Catmull-Rom tangents, one-sided at the ends
        tang = np.empty_like(pos)
        tang[0] = (pos[1] - pos[0]) / (times[1] - times[0])
        tang[-1] = (pos[-1] - pos[-2]) / (times[-1] - times[-2])
        if len(kf) > 2:
            tang[1:-1] = (pos[2:] - pos[:-2]) / (times[2:] - times[:-2])[:, None]
        self._pos = CubicHermiteSpline(times, pos, tang)
        self._rot = RotationSpline(
            times, Rotation.from_quat([f.rotation_xyzw for f in kf])
        )

    def covers(self, t: float) -> bool:
        return self._single is not None or (self.t0 - 1e-9 <= t <= self.t1 + 1e-9)

    def at(self, t: float) -> RigidTransform:
        if self._single is not None:
            return self._single
        t = min(max(t, self.t0), self.t1)
        return RigidTransform(self._rot(t).as_matrix(), self._pos(t))


@dataclass(frozen=True)
class GroundTruthFrame(Frame):
    index: int = 0
    true_world_pose: RigidTransform = None
    true_cam_pose: RigidTransform = None
    true_landmarks: np.ndarray = None
    observed_landmarks: np.ndarray = None  # true + configured noise
    true_weights: np.ndarray = None
    occluded: bool = False


def _schedule_value(schedule, t):
    pts = np.asarray(schedule, dtype=np.float64)
    return float(np.interp(t, pts[:, 0], pts[:, 1]))


def generate(cfg: ScenarioConfig, model: DeformableFaceModel, k: CameraIntrinsics):
    """Deterministic ground-truth frame sequence for a scenario."""
    head = PoseTrajectory(cfg.head_keyframes)
    cam = PoseTrajectory(cfg.camera_keyframes)
    t_end = (cfg.duration - 1) / cfg.frame_rate
    for name, traj in (("head", head), ("camera", cam)):
        if not (traj.covers(0.0) and traj.covers(t_end)):
            raise InvalidTrajectory(
                f"{name} trajectory does not cover [0, {t_end:.3f}] s"
            )
    for name in cfg.weight_schedules:
        model.blendshape_index(name)  # KeyError on unknown blendshape

    rng = np.random.default_rng(cfg.seed)
    mapped = model.mapped_vertices()
    frames = []
    for i in range(cfg.duration):
        t = i / cfg.frame_rate
        head_pose = head.at(t)
        ctx = FramePoseContext.from_cam_to_world(cam.at(t), t)
        w = np.zeros(model.blendshape_count)
        for name, schedule in cfg.weight_schedules.items():
            w[model.blendshape_index(name)] = _schedule_value(schedule, t)
        cam_pose = compose(ctx.world_to_cam, head_pose)
        verts_cam = cam_pose.apply(synthesize(model, w)[mapped])
        if np.any(verts_cam[:, 2] <= 1e-9):
            raise InvalidTrajectory(f"face behind camera at frame {i}")
        true_lms = project_points(k, verts_cam)
        noise = rng.normal(0.0, 1.0, true_lms.shape)
        observed = true_lms + cfg.landmark_noise_sigma * noise
        occluded = any(start <= i < end for start, end in cfg.occlusion_windows)
        image = None
        if cfg.image_size is not None:
            image = rasterize(model, cam_pose, k, cfg.image_size, weights=w)
        frames.append(
            GroundTruthFrame(
                ctx=ctx,
                acquisition_time=t,
                image=image,
                index=i,
                true_world_pose=head_pose,
                true_cam_pose=cam_pose,
                true_landmarks=true_lms,
                observed_landmarks=observed,
                true_weights=w,
                occluded=occluded,
            )
        )
    return frames


def _frame_index(frames, frame_rate, frame: Frame) -> int:
    idx = int(round(frame.acquisition_time * frame_rate))
    if idx < 0 or idx >= len(frames):
        raise FrameOutOfRange(
            f"no generated frame at t={frame.acquisition_time:.4f}"
        )
    return idx


class OracleAlignmentBackend:
    """Replays ground-truth landmarks (with configured noise) by frame time."""

    def __init__(self, frames, cfg: ScenarioConfig):
        self.frames = frames
        self.cfg = cfg
        self.confidence = float(np.exp(-cfg.landmark_noise_sigma))

    def align(self, frame: Frame, init_landmarks) -> AlignResult:
        gt = self.frames[_frame_index(self.frames, self.cfg.frame_rate, frame)]
        if gt.occluded:
            return AlignResult(np.asarray(init_landmarks), False, 0.0)
        return AlignResult(gt.observed_landmarks.copy(), True, self.confidence)


class OracleFaceDetector:
    """True face bounding box, padded 10%; no detection during occlusion."""

    def __init__(self, frames, cfg: ScenarioConfig):
        self.frames = frames
        self.cfg = cfg

    def detect(self, frame: Frame):
        gt = self.frames[_frame_index(self.frames, self.cfg.frame_rate, frame)]
        if gt.occluded:
            return None
        lms = gt.observed_landmarks
        u0, v0 = lms.min(axis=0)
        u1, v1 = lms.max(axis=0)
        pad = 0.1 * max(u1 - u0, v1 - v0)
        return (u0 - pad, v0 - pad, (u1 - u0) + 2 * pad, (v1 - v0) + 2 * pad)


def oracle_backend(frames, cfg: ScenarioConfig) -> OracleAlignmentBackend:
    return OracleAlignmentBackend(frames, cfg)


def oracle_detector(frames, cfg: ScenarioConfig) -> OracleFaceDetector:
    return OracleFaceDetector(frames, cfg)


def rasterize(
    model: DeformableFaceModel,
    pose: RigidTransform,
    k: CameraIntrinsics,
    image_size,
    weights=None,
    background: int = 16,
) -> np.ndarray:
    """Flat-shaded painter's-algorithm render, 8-bit grayscale.

    Deliberately minimal: per-triangle intensity from the surface normal
    plus a deterministic per-triangle tint so neighbouring triangles keep
    nonzero gradients for the HOG tests.
    """
    wgt = np.zeros(model.blendshape_count) if weights is None else np.asarray(weights)
    verts = pose.apply(synthesize(model, wgt))
    if np.any(verts[:, 2] <= 1e-9):
        raise DegeneratePose("model vertex at or behind the camera plane")
    w, h = int(image_size[0]), int(image_size[1])
    img = np.full((h, w), background, dtype=np.uint8)
    px = project_points(k, verts)

    tris = model.triangles
    depth = verts[tris].mean(axis=1)[:, 2]
    order = np.argsort(-depth)  # far to near
    light = np.array([0.3, -0.5, -0.8])
    light = light / np.linalg.norm(light)
    for ti in order:
        tri = tris[ti]
        p = px[tri]
        v = verts[tri]
        n = np.cross(v[1] - v[0], v[2] - v[0])
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            continue
        shade = abs(float(n @ light)) / nn
        tint = (int(ti) * 29) % 17 - 8
        level = int(np.clip(48 + 180.0 * shade + tint, 0, 255))
        _fill_triangle(img, p, level)
    return img


def _fill_triangle(img, p, level):
    h, w = img.shape
    u0 = max(int(np.floor(p[:, 0].min())), 0)
    u1 = min(int(np.ceil(p[:, 0].max())), w - 1)
    v0 = max(int(np.floor(p[:, 1].min())), 0)
    v1 = min(int(np.ceil(p[:, 1].max())), h - 1)
    if u0 > u1 or v0 > v1:
        return
    uu, vv = np.meshgrid(
        np.arange(u0, u1 + 1, dtype=np.float64),
        np.arange(v0, v1 + 1, dtype=np.float64),
    )
    ax, ay = p[0]
    bx, by = p[1]
    cx, cy = p[2]
    det = (by - ay) * (cx - ax) - (bx - ax) * (cy - ay)
    if abs(det) < 1e-12:
        return
    l1 = ((by - ay) * (uu - ax) - (bx - ax) * (vv - ay)) / det
    l2 = -((cy - ay) * (uu - ax) - (cx - ax) * (vv - ay)) / det
    inside = (l1 >= 0) & (l2 >= 0) & (l1 + l2 <= 1)
    img[v0 : v1 + 1, u0 : u1 + 1][inside] = level


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5) image dump."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


# --- scenario files ----------------------------------------------------------

SCENARIO_FORMAT_VERSION = 1


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    def kf(frames):
        return [
            {"t": f.time, "position": list(f.position), "rotation_xyzw": list(f.rotation_xyzw)}
            for f in frames
        ]

    return {
        "format_version": SCENARIO_FORMAT_VERSION,
        "duration": cfg.duration,
        "frame_rate": cfg.frame_rate,
        "seed": cfg.seed,
        "landmark_noise_sigma": cfg.landmark_noise_sigma,
        "camera_latency": cfg.camera_latency,
        "processing_delay": cfg.processing_delay,
        "occlusions": [list(wd) for wd in cfg.occlusion_windows],
        "image_size": None if cfg.image_size is None else list(cfg.image_size),
        "head": kf(cfg.head_keyframes),
        "camera": kf(cfg.camera_keyframes),
        "weights": {n: [list(p) for p in s] for n, s in cfg.weight_schedules.items()},
    }


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    if doc.get("format_version") != SCENARIO_FORMAT_VERSION:
        raise ParseError(f"unsupported scenario format_version {doc.get('format_version')}")

    def kf(rows, field_name):
        try:
            return tuple(
                PoseKeyframe(
                    float(r["t"]),
                    tuple(float(x) for x in r["position"]),
                    tuple(float(x) for x in r.get("rotation_xyzw", (0, 0, 0, 1))),
                )
                for r in rows
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed {field_name} keyframes: {e}") from e

    try:
        return ScenarioConfig(
            duration=int(doc["duration"]),
            frame_rate=float(doc.get("frame_rate", 30.0)),
            head_keyframes=kf(doc["head"], "head"),
            camera_keyframes=kf(doc["camera"], "camera"),
            weight_schedules=dict(doc.get("weights", {})),
            landmark_noise_sigma=float(doc.get("landmark_noise_sigma", 0.0)),
            occlusion_windows=tuple(tuple(wd) for wd in doc.get("occlusions", [])),
            camera_latency=float(doc.get("camera_latency", 0.137)),
            processing_delay=float(doc.get("processing_delay", 0.033)),
            seed=int(doc.get("seed", 0)),
            image_size=None
            if doc.get("image_size") is None
            else tuple(doc["image_size"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed scenario: {e}") from e


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from e
    return scenario_from_dict(doc)


def save_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scenario_to_dict(cfg), f, indent=2)
        f.write("\n")
