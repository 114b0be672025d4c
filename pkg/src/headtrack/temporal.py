"""Per-axis constant-acceleration Kalman filtering and pose denoising.

One filter per world axis tracks (position, velocity, acceleration) from
position measurements only. The transition uses a decaying acceleration
with decay factor alpha = exp(-dt / tau_m) and process noise entering the
acceleration term as q_m = sigma_a * (1 - alpha)^2. Prediction propagates
the state ahead of the last measurement by a horizon that is clamped to
max_prediction_horizon: extrapolating further overshoots on direction
changes, so longer render delays deliberately saturate at the clamp.

Rotation is not Kalman-filtered. The only rotation smoothing is the
two-frame averaging step, applied when the pose moved less than the small
translation/rotation thresholds.

This module is a hot path (three filters stepped per tracked frame), so the
filter works on plain floats and tuples rather than arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import NonFiniteMeasurement
from .geometry import RigidTransform


@dataclass(frozen=True)
class FilterConfig:
    sigma_a: float = 10.0        # acceleration noise std (m/s^2)
    sigma_z: float = 0.01        # measurement noise std (m)
    tau_m: float = 0.1           # acceleration decay to white noise (s)
    max_prediction_horizon: float = 0.120
    avg_translation_threshold: float = 0.005
    avg_rotation_threshold: float = math.radians(4.0)
    acquisition_to_render_delay: float = 0.170

    def __post_init__(self):
        for name in (
            "sigma_a",
            "sigma_z",
            "tau_m",
            "max_prediction_horizon",
            "avg_translation_threshold",
            "avg_rotation_threshold",
            "acquisition_to_render_delay",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class AxisKalman:
    """Immutable per-axis filter value: (x, v, a) state, 3x3 covariance as
    nested tuples, and the time of the last measurement."""

    state: tuple
    covariance: tuple
    last_update: float = 0.0

    @staticmethod
    def from_measurement(z: float, time: float, cfg: FilterConfig) -> "AxisKalman":
        """Seed from the first measurement: zero velocity/acceleration with
        wide prior variances on both."""
        if not math.isfinite(z):
            raise NonFiniteMeasurement(f"measurement {z!r}")
        p = (
            (cfg.sigma_z * cfg.sigma_z, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 10.0),
        )
        return AxisKalman((z, 0.0, 0.0), p, time)

    def covariance_array(self) -> np.ndarray:
        return np.array(self.covariance)


def transition_alpha(dt: float, cfg: FilterConfig) -> float:
    """Acceleration decay factor for one step."""
    return math.exp(-dt / cfg.tau_m)


def kalman_step(f: AxisKalman, dt: float, measurement: float, cfg: FilterConfig) -> AxisKalman:
    """One predict-update cycle; returns a new filter value.

    Scalar arithmetic throughout; the Joseph-form update keeps the
    covariance symmetric positive semidefinite.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = measurement
    if not math.isfinite(z):
        raise NonFiniteMeasurement(f"measurement {measurement!r}")

    x, v, a = f.state
    (p00, p01, p02), (_, p11, p12), (_, _, p22) = f.covariance
    b = dt
    c = 0.5 * dt * dt
    al = math.exp(-dt / cfg.tau_m)
    qm = cfg.sigma_a * (1.0 - al) * (1.0 - al)

    # state prediction through A(dt)
    x1 = x + b * v + c * a
    v1 = v + b * a
    a1 = al * a

    # covariance prediction A P A^T + Q, written out per entry
    t0 = p01 + b * p11 + c * p12
    t1 = p02 + b * p12 + c * p22
    q00 = p00 + b * p01 + c * p02 + b * t0 + c * t1
    q01 = t0 + b * t1
    q02 = al * t1
    q11 = p11 + 2.0 * b * p12 + b * b * p22
    q12 = al * (p12 + b * p22)
    q22 = al * al * p22 + qm * qm

    # measurement update, H = (1 0 0), R = sigma_z^2
    r = cfg.sigma_z * cfg.sigma_z
    s = q00 + r
    k0 = q00 / s
    k1 = q01 / s
    k2 = q02 / s
    innov = z - x1
    x2 = x1 + k0 * innov
    v2 = v1 + k1 * innov
    a2 = a1 + k2 * innov

    # Joseph form: (I - K H) P (I - K H)^T + K R K^T
    a0 = 1.0 - k0
    r00 = a0 * q00
    r01 = a0 * q01
    r02 = a0 * q02
    n00 = a0 * r00 + r * k0 * k0
    n01 = a0 * (q01 - k1 * q00) + r * k0 * k1
    n02 = a0 * (q02 - k2 * q00) + r * k0 * k2
    n11 = (q11 - k1 * q01) - k1 * (q01 - k1 * q00) + r * k1 * k1
    n12 = (q12 - k1 * q02) - k2 * (q01 - k1 * q00) + r * k1 * k2
    n22 = (q22 - k2 * q02) - k2 * (q02 - k2 * q00) + r * k2 * k2

    return AxisKalman(
        (x2, v2, a2),
        ((n00, n01, n02), (n01, n11, n12), (n02, n12, n22)),
        f.last_update + dt,
    )


def predict_at(f: AxisKalman, horizon: float, cfg: FilterConfig) -> float:
    """Position propagated `horizon` seconds past the last measurement,
    without a measurement update. The horizon is clamped to
    cfg.max_prediction_horizon."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    h = min(horizon, cfg.max_prediction_horizon)
    x, v, a = f.state
    return x + h * v + 0.5 * h * h * a


def average_pose(prev: RigidTransform, cur: RigidTransform, cfg: FilterConfig) -> RigidTransform:
    """Midpoint of the two poses when the motion between them is below the
    small-motion thresholds; otherwise cur unchanged.

    Translation uses the linear midpoint, rotation the geodesic midpoint.
    """
    dt = float(np.linalg.norm(cur.translation - prev.translation))
    dtheta = geometry.geodesic_angle(prev.rotation, cur.rotation)
    if dt < cfg.avg_translation_threshold and dtheta < cfg.avg_rotation_threshold:
        rel = prev.rotation.T @ cur.rotation
        half = geometry.rotation_from_axis_angle(
            0.5 * geometry.axis_angle_from_rotation(rel)
        )
        return RigidTransform(
            geometry.orthonormalize(prev.rotation @ half),
            0.5 * (prev.translation + cur.translation),
        )
    return cur
