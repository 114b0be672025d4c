"""Tracking-failure detection from HOG descriptors around landmarks.

A linear model over concatenated per-landmark HOG descriptors predicts the
sum of squared landmark position errors; tracking is declared failed when
the prediction exceeds a threshold.

HOG layout (pinned so descriptors are bit-reproducible):
  - patch_size x patch_size pixels centered on the (rounded) landmark,
    out-of-image samples replicate the border;
  - gradients by central differences, orientations unsigned (mod 180 deg)
    unless signed=True;
  - linear (bilinear-in-orientation) voting between the two nearest bins,
    where bin k starts at angle k * range / bins;
  - cell_size x cell_size pixel cells, blocks of block_cells x block_cells
    cells tiled without overlap, each block L2-hys normalized (clip 0.2,
    renormalize);
  - descriptor = blocks row-major, cells within block row-major, then
    orientation bins.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateDesignMatrix,
    EmptyImage,
    LandmarkCountMismatch,
    NonFiniteInput,
    ParseError,
)

_L2HYS_EPS = 1e-12
_PREDICTOR_MAGIC = b"HTFP"
_PREDICTOR_VERSION = 1


@dataclass(frozen=True)
class HogParams:
    patch_size: int = 16
    cell_size: int = 4
    orientation_bins: int = 9
    signed: bool = False
    block_cells: int = 2
    l2hys_clip: float = 0.2

    def __post_init__(self):
        if self.patch_size <= 0 or self.patch_size % self.cell_size:
            raise ValueError("patch_size must be a positive multiple of cell_size")
        if self.orientation_bins < 2:
            raise ValueError("need at least 2 orientation bins")
        cells = self.patch_size // self.cell_size
        if cells % self.block_cells:
            raise ValueError("cells per side must tile into blocks exactly")

    @property
    def cells_per_side(self) -> int:
        return self.patch_size // self.cell_size

    @property
    def blocks_per_side(self) -> int:
        return self.cells_per_side // self.block_cells

    @property
    def descriptor_length(self) -> int:
        return (
            self.blocks_per_side ** 2
            * self.block_cells ** 2
            * self.orientation_bins
        )


def _patch_with_border(image, center, size):
    """(size+2)^2 window around the rounded center, edge-replicated."""
    h, w = image.shape
    cu = int(round(float(center[0])))
    cv = int(round(float(center[1])))
    half = size // 2
    rows = np.clip(np.arange(cv - half - 1, cv + half + 1), 0, h - 1)
    cols = np.clip(np.arange(cu - half - 1, cu + half + 1), 0, w - 1)
    return image[np.ix_(rows, cols)].astype(np.float64)


def cell_histograms(image, center, p: HogParams) -> np.ndarray:
    """Per-cell orientation histograms, shape (cells, cells, bins)."""
    if image is None or image.size == 0:
        raise EmptyImage("cannot extract HOG from an empty image")
    if image.ndim != 2:
        raise ValueError("expected a 2D grayscale image")
    padded = _patch_with_border(image, center, p.patch_size)
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    ang_range = 2.0 * np.pi if p.signed else np.pi
    ang = np.arctan2(gy, gx) % ang_range

    nb = p.orientation_bins
    pos = ang * (nb / ang_range)
    lo = np.floor(pos)
    frac = pos - lo
    bin0 = lo.astype(np.int64) % nb
    bin1 = (bin0 + 1) % nb

    cs = p.cell_size
    n = p.cells_per_side
    rr, cc = np.indices(gx.shape)
    cell = (rr // cs) * n + cc // cs
    idx0 = (cell * nb + bin0).ravel()
    idx1 = (cell * nb + bin1).ravel()
    votes = np.bincount(
        np.concatenate([idx0, idx1]),
        weights=np.concatenate([(mag * (1.0 - frac)).ravel(), (mag * frac).ravel()]),
        minlength=n * n * nb,
    )
    return votes.reshape(n, n, nb)


def extract_hog(image, center, p: HogParams = HogParams()) -> np.ndarray:
    """L2-hys block-normalized descriptor at one landmark, (D,) float64."""
    hist = cell_histograms(image, center, p)
    bc = p.block_cells
    nb = p.blocks_per_side
    # (nb, bc, nb, bc, bins) -> (nb, nb, bc, bc, bins): blocks tile the cells
    blocks = hist.reshape(nb, bc, nb, bc, p.orientation_bins)
    blocks = blocks.transpose(0, 2, 1, 3, 4).reshape(nb * nb, -1)
    norms = np.sqrt((blocks * blocks).sum(axis=1) + _L2HYS_EPS ** 2)
    blocks = blocks / norms[:, None]
    np.clip(blocks, None, p.l2hys_clip, out=blocks)
    norms = np.sqrt((blocks * blocks).sum(axis=1) + _L2HYS_EPS ** 2)
    blocks = blocks / norms[:, None]
    return blocks.ravel()


def stacked_descriptor(image, landmarks, p: HogParams) -> np.ndarray:
    """Descriptors of all landmarks concatenated in landmark order."""
    return np.concatenate([extract_hog(image, lm, p) for lm in landmarks])


@dataclass(frozen=True)
class FailurePredictor:
    """Linear landmark-SSE predictor over stacked HOG descriptors."""

    weights: np.ndarray   # (landmark_count * descriptor_length,)
    bias: float
    threshold: float
    hog: HogParams
    landmark_count: int

    def __post_init__(self):
        expected = self.landmark_count * self.hog.descriptor_length
        if self.weights.shape != (expected,):
            raise ValueError(
                f"weights shape {self.weights.shape} != ({expected},)"
            )
        self.weights.setflags(write=False)


def predict_error(pred: FailurePredictor, image, landmarks) -> float:
    """Predicted landmark SSE (pixels^2) for the given alignment."""
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if landmarks.shape[0] != pred.landmark_count:
        raise LandmarkCountMismatch(
            f"predictor expects {pred.landmark_count} landmarks, "
            f"got {landmarks.shape[0]}"
        )
    phi = stacked_descriptor(image, landmarks, pred.hog)
    return float(pred.weights @ phi + pred.bias)


def is_failure(pred: FailurePredictor, image, landmarks) -> bool:
    return predict_error(pred, image, landmarks) > pred.threshold


def train_failure_predictor(
    samples, p: HogParams = HogParams(), ridge: float = 1e-6
):
    """Regularized least squares fit of (descriptor -> true SSE).

    samples: iterable of (image, landmarks, true_sse). The bias is the
    sample mean and is not penalized. Returns (predictor, training_rms).
    The returned predictor's threshold is +inf; calibrate_threshold sets it.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least 2 training samples")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    landmark_count = len(samples[0][1])
    phi = np.stack(
        [stacked_descriptor(img, lms, p) for img, lms, _ in samples]
    )
    y = np.array([float(t) for _, _, t in samples])
    if not np.all(np.isfinite(y)):
        raise NonFiniteInput("non-finite SSE targets")

    phi_mean = phi.mean(axis=0)
    y_mean = y.mean()
    pc = phi - phi_mean
    yc = y - y_mean
    n, d = pc.shape
    if ridge == 0.0:
        w, *_ = np.linalg.lstsq(pc, yc, rcond=None)
    elif n >= d:
        w = np.linalg.solve(pc.T @ pc + ridge * np.eye(d), pc.T @ yc)
    else:
        # dual form keeps the solve at n x n when descriptors are long
        alpha = np.linalg.solve(pc @ pc.T + ridge * np.eye(n), yc)
        w = pc.T @ alpha
    if not np.all(np.isfinite(w)):
        raise DegenerateDesignMatrix("ridge solution is non-finite")
    bias = float(y_mean - w @ phi_mean)
    resid = phi @ w + bias - y
    rms = float(np.sqrt(np.mean(resid * resid)))
    predictor = FailurePredictor(w, bias, float("inf"), p, landmark_count)
    return predictor, rms


def calibrate_threshold(
    pred: FailurePredictor, good_samples, false_failure_rate: float = 0.05
) -> FailurePredictor:
    """Threshold at the (1 - false_failure_rate) quantile of predicted SSE
    over known-good alignments."""
    scores = [predict_error(pred, img, lms) for img, lms in good_samples]
    thr = float(np.quantile(scores, 1.0 - false_failure_rate))
    return FailurePredictor(
        pred.weights.copy(), pred.bias, thr, pred.hog, pred.landmark_count
    )


def save_predictor(pred: FailurePredictor, path) -> None:
    """Binary blob (little-endian, length-prefixed weights) plus a JSON
    sidecar <path>.json with the HOG parameters."""
    path = Path(path)
    header = struct.pack(
        "<4sIIQdd",
        _PREDICTOR_MAGIC,
        _PREDICTOR_VERSION,
        pred.landmark_count,
        pred.weights.size,
        pred.bias,
        pred.threshold,
    )
    path.write_bytes(header + pred.weights.astype("<f8").tobytes())
    sidecar = {
        "patch_size": pred.hog.patch_size,
        "cell_size": pred.hog.cell_size,
        "orientation_bins": pred.hog.orientation_bins,
        "signed": pred.hog.signed,
        "block_cells": pred.hog.block_cells,
        "l2hys_clip": pred.hog.l2hys_clip,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar), encoding="utf-8"
    )


def load_predictor(path) -> FailurePredictor:
    path = Path(path)
    raw = path.read_bytes()
    head_len = struct.calcsize("<4sIIQdd")
    if len(raw) < head_len:
        raise ParseError(f"{path}: truncated predictor header")
    magic, version, lcount, wsize, bias, threshold = struct.unpack(
        "<4sIIQdd", raw[:head_len]
    )
    if magic != _PREDICTOR_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != _PREDICTOR_VERSION:
        raise ParseError(f"{path}: unsupported predictor version {version}")
    if len(raw) != head_len + 8 * wsize:
        raise ParseError(f"{path}: weight array length mismatch")
    weights = np.frombuffer(raw[head_len:], dtype="<f8").astype(np.float64)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    try:
        doc = json.loads(sidecar_path.read_text(encoding="utf-8"))
        hog = HogParams(**doc)
    except FileNotFoundError:
        raise ParseError(f"missing HOG sidecar {sidecar_path}") from None
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise ParseError(f"{sidecar_path}: {e}") from e
    return FailurePredictor(weights, bias, threshold, hog, lcount)
