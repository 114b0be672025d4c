"""Head pose and blendshape recovery from 2D landmarks.

Minimizes the squared reprojection error of the deformable model's mapped
vertices over rotation, translation and blendshape weights, with a small
ridge on the weights:

    f(R, t, w) = sum_j || s_j - proj(K (R X_j(w) + t)) ||^2 + lambda_w ||w||^2
    X_j(w)     = mean_j + sum_i w_i offset_ij

Rotation increments are parameterized as axis-angle applied by left
multiplication and re-orthonormalized after each accepted step. Diagonal
Levenberg damping is escalated whenever the plain Gauss-Newton step fails to
decrease the objective, so accepted iterations never increase it. Weights
are box-clamped to per-blendshape bounds after every candidate step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import (
    DegenerateConfiguration,
    DegenerateProjection,
    InsufficientLandmarks,
    NonFiniteInput,
    SingularNormalEquations,
    UnknownAttributeName,
)
from .face_model import SHAPE_UNIT, DeformableFaceModel
from .geometry import CameraIntrinsics, RigidTransform

_MIN_LANDMARKS = 6
_DAMPING_CEILING = 1e12

DEFAULT_ATTRIBUTE_THRESHOLDS = {
    "smiling": 0.5,
    "eyebrow_raising": 0.5,
    "mouth_opening": 0.5,
}


@dataclass(frozen=True)
class FitParams:
    """Optimizer knobs. weight_bounds is an (n, 2) array of per-blendshape
    (lo, hi); None selects the defaults [-2, 2] for shape units and [0, 2]
    for action units. freeze_weights fixes all blendshape weights at their
    initial values (rigid-only refinement)."""

    max_iterations: int = 50
    step_tolerance: float = 1e-10
    residual_tolerance: float = 1e-9
    weight_regularization: float = 1e-3
    weight_bounds: np.ndarray | None = None
    damping_floor: float = 1e-9
    freeze_weights: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.step_tolerance <= 0 or self.residual_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.damping_floor <= 0:
            raise ValueError("damping_floor must be positive")
        if self.weight_bounds is not None:
            wb = np.asarray(self.weight_bounds, dtype=np.float64)
            if wb.ndim != 2 or wb.shape[1] != 2 or np.any(wb[:, 0] > wb[:, 1]):
                raise ValueError("weight_bounds must be (n, 2) with lo <= hi")
            object.__setattr__(self, "weight_bounds", wb)


@dataclass(frozen=True)
class HeadPoseFit:
    """Result of a fit: camera-frame pose, weights and diagnostics.

    objective_history holds the regularized objective after the initial
    evaluation and after each accepted iteration; it is non-increasing.
    """

    pose: RigidTransform
    weights: np.ndarray
    rms_residual: float
    iterations: int
    converged: bool
    objective_history: tuple = ()


def default_weight_bounds(model: DeformableFaceModel) -> np.ndarray:
    lo = np.array([-2.0 if k == SHAPE_UNIT else 0.0 for k in model.blendshape_kinds])
    hi = np.full(model.blendshape_count, 2.0)
    return np.column_stack([lo, hi])


class _Problem:
    """Landmark-restricted model data shared by the fit inner loop."""

    def __init__(self, model, landmarks, k):
        if len(model.landmark_map) < _MIN_LANDMARKS:
            raise InsufficientLandmarks(
                f"need >= {_MIN_LANDMARKS} mapped landmarks, model maps "
                f"{len(model.landmark_map)}"
            )
        obs = np.asarray(landmarks, dtype=np.float64)
        if obs.shape != (len(model.landmark_map), 2):
            raise InsufficientLandmarks(
                f"expected {len(model.landmark_map)} landmarks, got {obs.shape}"
            )
        if not np.all(np.isfinite(obs)):
            raise NonFiniteInput("landmarks contain non-finite values")
        vids = model.mapped_vertices()
        self.mean = model.mean_shape[vids]            # (L, 3)
        self.offsets = model.blendshapes[:, vids, :]  # (n, L, 3)
        self.obs = obs
        self.k = k
        self.L = obs.shape[0]
        self.n = model.blendshape_count

    def points(self, R, t, w):
        X = self.mean + np.tensordot(w, self.offsets, axes=1)
        return X @ R.T + t

    def residual(self, R, t, w):
        """Residual vector (2L,), landmark-major (du, dv); None when any
        vertex falls at or behind the camera plane."""
        P = self.points(R, t, w)
        if np.any(P[:, 2] <= 1e-9):
            return None
        pred = geometry.project_points(self.k, P)
        return (pred - self.obs).ravel()

    def residual_jacobian(self, R, t, w):
        """Residual and its Jacobian, columns [rotation(3), translation(3),
        weights(n)]."""
        X = self.mean + np.tensordot(w, self.offsets, axes=1)
        Q = X @ R.T                      # rotated model points, P = Q + t
        P = Q + t
        if np.any(P[:, 2] <= 1e-9):
            raise DegenerateProjection("model vertex at or behind camera plane")
        fx, fy = self.k.fx, self.k.fy
        x, y, z = P[:, 0], P[:, 1], P[:, 2]
        pred = np.empty((self.L, 2))
        pred[:, 0] = fx * x / z + self.k.cx
        pred[:, 1] = fy * y / z + self.k.cy
        r = (pred - self.obs).ravel()

        # dpixel/dP, (L, 2, 3)
        A = np.zeros((self.L, 2, 3))
        A[:, 0, 0] = fx / z
        A[:, 0, 2] = -fx * x / (z * z)
        A[:, 1, 1] = fy / z
        A[:, 1, 2] = -fy * y / (z * z)

        # dP/domega = -[Q]_x for a left-multiplied axis-angle increment
        skew = np.zeros((self.L, 3, 3))
        skew[:, 0, 1] = -Q[:, 2]
        skew[:, 0, 2] = Q[:, 1]
        skew[:, 1, 0] = Q[:, 2]
        skew[:, 1, 2] = -Q[:, 0]
        skew[:, 2, 0] = -Q[:, 1]
        skew[:, 2, 1] = Q[:, 0]

        J = np.empty((self.L, 2, 6 + self.n))
        J[:, :, 0:3] = -np.einsum("lij,ljk->lik", A, skew)
        J[:, :, 3:6] = A
        rotated = np.einsum("nlj,kj->nlk", self.offsets, R)  # (n, L, 3)
        J[:, :, 6:] = np.einsum("lij,nlj->lin", A, rotated)
        return r, J.reshape(2 * self.L, 6 + self.n)


def residual_jacobian(model, landmarks, k, state: HeadPoseFit):
    """Reprojection residual (2L,) and Jacobian (2L, 6+n) at a fit state."""
    prob = _Problem(model, landmarks, k)
    return prob.residual_jacobian(
        state.pose.rotation, state.pose.translation, np.asarray(state.weights, float)
    )


def fit(
    model: DeformableFaceModel,
    landmarks,
    k: CameraIntrinsics,
    init: HeadPoseFit,
    params: FitParams = FitParams(),
) -> HeadPoseFit:
    """Damped Gauss-Newton minimization warm-started at `init`.

    The returned rms_residual never exceeds the init's on the same data;
    converged reports whether the step or residual tolerance was met within
    max_iterations.
    """
    prob = _Problem(model, landmarks, k)
    bounds = (
        params.weight_bounds
        if params.weight_bounds is not None
        else default_weight_bounds(model)
    )
    if bounds.shape[0] != prob.n:
        raise ValueError("weight_bounds rows must match blendshape count")
    lam = params.weight_regularization

    R = init.pose.rotation.copy()
    t = init.pose.translation.copy()
    w = np.clip(np.asarray(init.weights, dtype=np.float64), bounds[:, 0], bounds[:, 1])
    if t[2] <= 0:
        raise ValueError("init pose must have positive depth")

    r = prob.residual(R, t, w)
    if r is None:
        raise DegenerateProjection("init pose places model vertices behind camera")
    obj = float(r @ r + lam * (w @ w))
    history = [obj]
    rms = float(np.sqrt(r @ r / r.size))
    if rms < params.residual_tolerance:
        return HeadPoseFit(
            RigidTransform(R, t), w, rms, 0, True, tuple(history)
        )

    converged = False
    iterations = 0
    mu = 0.0
    n_params = 6 + prob.n
    for iterations in range(1, params.max_iterations + 1):
        _, J = prob.residual_jacobian(R, t, w)
        if params.freeze_weights:
            J = J[:, :6]
        g = J.T @ r
        H = J.T @ J
        if not params.freeze_weights:
            g[6:] += lam * w
            H[6:, 6:] += lam * np.eye(prob.n)
        diag = np.maximum(np.diag(H), 1e-12)

        accepted = False
        while True:
            try:
                delta = np.linalg.solve(H + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                if np.linalg.norm(delta) < params.step_tolerance:
                    converged = True
                    break
                R_c = geometry.orthonormalize(
                    geometry.rotation_from_axis_angle(delta[:3]) @ R
                )
                t_c = t + delta[3:6]
                if params.freeze_weights:
                    w_c = w
                else:
                    w_c = np.clip(w + delta[6:], bounds[:, 0], bounds[:, 1])
                r_c = prob.residual(R_c, t_c, w_c)
                if r_c is not None:
                    obj_c = float(r_c @ r_c + lam * (w_c @ w_c))
                    if obj_c <= obj:
                        R, t, w, r, obj = R_c, t_c, w_c, r_c, obj_c
                        accepted = True
                        mu = 0.0 if mu < params.damping_floor else mu / 10.0
                        break
            # escalate damping and retry
            mu = params.damping_floor if mu == 0.0 else mu * 10.0
            if mu > _DAMPING_CEILING:
                if delta is None:
                    raise SingularNormalEquations(
                        "normal equations singular at damping ceiling"
                    )
                break  # no descent step found: stationary point
        if not accepted:
            break
        history.append(obj)
        rms = float(np.sqrt(r @ r / r.size))
        if np.linalg.norm(delta) < params.step_tolerance:
            converged = True
            break
        if rms < params.residual_tolerance:
            converged = True
            break

    rms = float(np.sqrt(r @ r / r.size))
    return HeadPoseFit(
        RigidTransform(geometry.orthonormalize(R), t),
        w,
        rms,
        iterations,
        converged,
        tuple(history),
    )


def initial_guess(
    model: DeformableFaceModel, landmarks, k: CameraIntrinsics
) -> HeadPoseFit:
    """Weak-perspective cold start: depth from the model-IPD / observed
    inter-ocular ratio, rotation from orthographic Procrustes alignment,
    weights zero."""
    prob = _Problem(model, landmarks, k)
    obs = prob.obs
    A = prob.mean
    A_bar = A.mean(axis=0)
    Ac = A - A_bar
    b_bar = obs.mean(axis=0)
    bc = obs - b_bar

    sv = np.linalg.svd(bc, compute_uv=False)
    if sv[0] <= 0 or sv[1] / sv[0] < 1e-8:
        raise DegenerateConfiguration("landmarks are collinear")

    # bc ~ M Ac with M (2, 3); least squares then orthogonalize the rows
    M, *_ = np.linalg.lstsq(Ac, bc, rcond=None)
    M = M.T
    s1 = np.linalg.norm(M[0])
    s2 = np.linalg.norm(M[1])
    if s1 < 1e-12 or s2 < 1e-12:
        raise DegenerateConfiguration("degenerate orthographic factor")
    r1 = M[0] / s1
    m2 = M[1] - (M[1] @ r1) * r1
    n2 = np.linalg.norm(m2)
    if n2 < 1e-12:
        raise DegenerateConfiguration("orthographic rows are parallel")
    r2 = m2 / n2
    R = np.stack([r1, r2, np.cross(r1, r2)])

    f_mean = 0.5 * (k.fx + k.fy)
    z0 = _depth_from_ipd(model, obs, f_mean)
    if z0 is None:
        z0 = 2.0 * f_mean / (s1 + s2)

    centroid_cam = np.array(
        [(b_bar[0] - k.cx) * z0 / k.fx, (b_bar[1] - k.cy) * z0 / k.fy, z0]
    )
    t = centroid_cam - R @ A_bar
    pose = RigidTransform(geometry.orthonormalize(R), t)
    w = np.zeros(prob.n)
    r = prob.residual(pose.rotation, t, w)
    rms = float(np.sqrt(r @ r / r.size)) if r is not None else float("inf")
    return HeadPoseFit(pose, w, rms, 0, False)


def _depth_from_ipd(model, obs, f_mean):
    """Weak-perspective depth from the pupil-distance ratio, when the
    landmark map covers the eye-corner vertices; None otherwise."""
    vertex_to_landmark = {v: l for l, v in model.landmark_map}
    landmark_pos = {l: i for i, (l, _) in enumerate(model.landmark_map)}

    def pupil_px(vertex_ids):
        rows = []
        for v in vertex_ids:
            l = vertex_to_landmark.get(v)
            if l is None or l not in landmark_pos:
                return None
            rows.append(obs[landmark_pos[l]])
        return np.mean(rows, axis=0)

    left = pupil_px(model.left_pupil)
    right = pupil_px(model.right_pupil)
    if left is None or right is None:
        return None
    obs_ipd = np.linalg.norm(left - right)
    if obs_ipd < 1e-9:
        return None
    return f_mean * model.ipd() / obs_ipd


def estimate_attributes(
    model: DeformableFaceModel, weights, thresholds=None
) -> set:
    """Names of attributes whose blendshape weight strictly exceeds its
    threshold. Ties (weight == threshold) are absent."""
    if thresholds is None:
        thresholds = DEFAULT_ATTRIBUTE_THRESHOLDS
    w = np.asarray(weights, dtype=np.float64)
    active = set()
    for name, thr in thresholds.items():
        try:
            idx = model.blendshape_index(name)
        except KeyError:
            raise UnknownAttributeName(name) from None
        if w[idx] > thr:
            active.add(name)
    return active
