"""Landmark accuracy metrics: normalized error, CED curves, AUC and
failure rate.

The per-frame error is the mean Euclidean landmark distance divided by the
ground truth's inter-ocular distance (outer eye corners). The failure
threshold is 0.08; an error of exactly 0.08 counts as success. The AUC is
the exact integral of the empirical CED step function over [0, 0.08],
normalized by 0.08 and expressed as a percentage, so
failure_rate + 100 * ced(0.08) == 100 by construction.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .errors import DegenerateNormalizer, EmptyInput, LengthMismatch, ParseError

FAILURE_THRESHOLD = 0.08


def normalized_error(pred, gt, left_outer_eye: int, right_outer_eye: int) -> float:
    """Mean point-to-point distance over the gt inter-ocular distance."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    iod = float(np.linalg.norm(gt[left_outer_eye] - gt[right_outer_eye]))
    if iod <= 0.0:
        raise DegenerateNormalizer("inter-ocular distance is zero")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)) / iod)


def _as_errors(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise EmptyInput("empty error list")
    return e.ravel()


def ced(errors, grid) -> np.ndarray:
    """Fraction of errors <= tau for each threshold in grid."""
    e = _as_errors(errors)
    grid = np.asarray(grid, dtype=np.float64)
    return (e[None, :] <= grid[:, None]).mean(axis=1)


def auc_008(errors, threshold: float = FAILURE_THRESHOLD) -> float:
    """Percentage area under the CED over [0, threshold].

    Integrates the empirical step function exactly: each sample contributes
    max(0, threshold - e) / (N * threshold).
    """
    e = _as_errors(errors)
    contrib = np.maximum(0.0, threshold - np.minimum(e, threshold))
    return float(100.0 * contrib.sum() / (e.size * threshold))


def failure_rate(errors, threshold: float = FAILURE_THRESHOLD) -> float:
    """Percentage of frames with error strictly greater than the threshold."""
    e = _as_errors(errors)
    return float(100.0 * np.count_nonzero(e > threshold) / e.size)


def summarize(errors, threshold: float = FAILURE_THRESHOLD) -> dict:
    e = _as_errors(errors)
    return {
        "count": int(e.size),
        "mean_error": float(e.mean()),
        "median_error": float(np.median(e)),
        "auc_008": auc_008(e, threshold),
        "failure_rate_percent": failure_rate(e, threshold),
    }


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def write_ced_csv(path, errors, grid=None) -> None:
    """CED curve samples for external plotting."""
    if grid is None:
        grid = np.linspace(0.0, 2.0 * FAILURE_THRESHOLD, 81)
    curve = ced(errors, grid)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "fraction_below"])
        for tau, frac in zip(grid, curve):
            writer.writerow([f"{tau:.6f}", f"{frac:.6f}"])


def errors_from_landmark_csv(path, left_outer_eye: int, right_outer_eye: int):
    """Per-frame errors from a CSV of landmark pairs.

    Each data row holds 4L floats: L predicted (u, v) pairs followed by L
    ground-truth (u, v) pairs. A header row is required.
    """
    errors = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty CSV")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = np.array([float(x) for x in row])
            except ValueError as e:
                raise ParseError(f"{path}: line {line_no}: {e}") from e
            if vals.size % 4:
                raise ParseError(
                    f"{path}: line {line_no}: expected 4L values, got {vals.size}"
                )
            half = vals.size // 2
            pred = vals[:half].reshape(-1, 2)
            gt = vals[half:].reshape(-1, 2)
            errors.append(normalized_error(pred, gt, left_outer_eye, right_outer_eye))
    if not errors:
        raise EmptyInput(f"{path}: no data rows")
    return np.array(errors)


def errors_from_trace(path, left_outer_eye: int, right_outer_eye: int,
                      untracked_as_failure: bool = False):
    """Per-frame errors from a pipeline trace (JSON lines).

    Uses records that carry both tracked and ground-truth landmarks.
    Untracked frames are skipped unless untracked_as_failure, in which case
    they contribute an infinite error. Returns (errors, n_frames, n_valid).
    """
    errors = []
    n_frames = 0
    n_valid = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: line {line_no}: {e.msg}") from e
            if rec.get("type") != "frame":
                continue
            n_frames += 1
            gt = rec.get("gt_landmarks")
            if rec.get("tracking_valid") and rec.get("landmarks") and gt:
                n_valid += 1
                errors.append(
                    normalized_error(
                        rec["landmarks"], gt, left_outer_eye, right_outer_eye
                    )
                )
            elif untracked_as_failure and gt:
                errors.append(float("inf"))
    return np.array(errors), n_frames, n_valid
