"""Deformable face model: storage, file format, synthesis and metric scaling.

A model is a mean shape plus n blendshape offset fields added linearly with
scalar weights. Blendshapes come in two kinds: "shape" units (identity,
fitted over [-2, 2] by default) and "action" units (expression, [0, 2]).

Model file format (UTF-8 JSON, schema version 1):

    {
      "format_version": 1,
      "units": "unitless" | "meters",
      "vertices":   [[x, y, z], ...],          V rows
      "triangles":  [[a, b, c], ...],          F rows, indices < V
      "blendshapes": [
        {"name": str, "kind": "shape"|"action", "offsets": [[dx,dy,dz], ...]}
      ],
      "landmark_map": [[landmark_index, vertex_index], ...],
      "left_pupil":  [vertex_index, ...],
      "right_pupil": [vertex_index, ...]
    }

Pupils are the centroid of the listed vertices (the bundled model uses the
outer and inner eye-corner vertices; the mesh itself has no pupil vertex).
Files with units "unitless" must be passed through scale_to_ipd before any
metric use.

The bundled model is a reconstruction: a 113-vertex / 168-triangle face-like
mesh with a default 51-landmark map. The exact correspondences a production
deployment would use are expected to be supplied by the user; see README.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .errors import DegenerateModel, DimensionMismatch, ParseError, ValidationError

FORMAT_VERSION = 1

SHAPE_UNIT = "shape"
ACTION_UNIT = "action"

# Landmark indices of the default 51-point convention used by the bundled
# model (internal points of the common 68-point annotation, jawline dropped).
LEFT_OUTER_EYE = 19
LEFT_INNER_EYE = 22
RIGHT_INNER_EYE = 25
RIGHT_OUTER_EYE = 28


@dataclass(frozen=True)
class DeformableFaceModel:
    """Mean shape, blendshapes, topology and landmark correspondences.

    Immutable after construction; all arrays are read-only.
    """

    mean_shape: np.ndarray        # (V, 3)
    blendshapes: np.ndarray       # (n, V, 3) offsets
    blendshape_names: tuple       # n labels
    blendshape_kinds: tuple       # n entries, SHAPE_UNIT or ACTION_UNIT
    triangles: np.ndarray         # (F, 3) int
    landmark_map: tuple           # ((landmark_index, vertex_index), ...)
    left_pupil: tuple             # vertex indices; pupil = centroid
    right_pupil: tuple
    units: str = "meters"

    def __post_init__(self):
        for name in ("mean_shape", "blendshapes", "triangles"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def vertex_count(self) -> int:
        return self.mean_shape.shape[0]

    @property
    def blendshape_count(self) -> int:
        return self.blendshapes.shape[0]

    def blendshape_index(self, name: str) -> int:
        try:
            return self.blendshape_names.index(name)
        except ValueError:
            raise KeyError(f"no blendshape named {name!r}") from None

    def pupil_positions(self, shape=None):
        """(left, right) pupil centroids on the given shape (default mean)."""
        s = self.mean_shape if shape is None else shape
        left = s[list(self.left_pupil)].mean(axis=0)
        right = s[list(self.right_pupil)].mean(axis=0)
        return left, right

    def ipd(self, shape=None) -> float:
        left, right = self.pupil_positions(shape)
        return float(np.linalg.norm(left - right))

    def mapped_vertices(self) -> np.ndarray:
        """Vertex indices in landmark order."""
        return np.array([v for _, v in self.landmark_map], dtype=int)


def validate_model(m: DeformableFaceModel) -> None:
    """Raise ValidationError naming the first violated invariant."""
    V = m.mean_shape.shape[0]
    if m.mean_shape.ndim != 2 or m.mean_shape.shape[1] != 3:
        raise ValidationError("vertices must be a Vx3 array")
    if not np.all(np.isfinite(m.mean_shape)):
        raise ValidationError("vertices contain non-finite values")
    if m.blendshapes.shape[0] < 1:
        raise ValidationError("model must carry at least one blendshape")
    if m.blendshapes.shape[1:] != (V, 3):
        raise ValidationError("blendshape offsets must match vertex count")
    if not np.all(np.isfinite(m.blendshapes)):
        raise ValidationError("blendshape offsets contain non-finite values")
    if len(m.blendshape_names) != m.blendshapes.shape[0]:
        raise ValidationError("blendshape_names length != blendshape count")
    if len(set(m.blendshape_names)) != len(m.blendshape_names):
        raise ValidationError("blendshape names must be unique")
    if any(k not in (SHAPE_UNIT, ACTION_UNIT) for k in m.blendshape_kinds):
        raise ValidationError("blendshape kind must be 'shape' or 'action'")
    if len(m.blendshape_kinds) != m.blendshapes.shape[0]:
        raise ValidationError("blendshape_kinds length != blendshape count")
    if m.triangles.size and (m.triangles.min() < 0 or m.triangles.max() >= V):
        raise ValidationError(
            f"triangle index out of range (V={V}, max index {m.triangles.max()})"
        )
    lms = [l for l, _ in m.landmark_map]
    vts = [v for _, v in m.landmark_map]
    if len(set(lms)) != len(lms) or len(set(vts)) != len(vts):
        raise ValidationError("landmark_map must be injective in both coordinates")
    if any(v < 0 or v >= V for v in vts):
        raise ValidationError("landmark_map vertex index out of range")
    for side, idxs in (("left", m.left_pupil), ("right", m.right_pupil)):
        if not idxs or any(i < 0 or i >= V for i in idxs):
            raise ValidationError(f"{side}_pupil vertex index out of range")
    if m.units not in ("meters", "unitless"):
        raise ValidationError(f"unknown units {m.units!r}")


def synthesize(model: DeformableFaceModel, weights) -> np.ndarray:
    """Mean shape plus the weighted sum of blendshape offsets, (V, 3)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (model.blendshape_count,):
        raise DimensionMismatch(
            f"expected {model.blendshape_count} weights, got {w.shape}"
        )
    return model.mean_shape + np.tensordot(w, model.blendshapes, axes=1)


def scale_to_ipd(model: DeformableFaceModel, target_ipd: float = 0.063) -> DeformableFaceModel:
    """Uniformly scale the model so the mean-shape pupil distance equals
    target_ipd (meters). Blendshape offsets scale by the same factor."""
    current = model.ipd()
    if current <= 0.0:
        raise DegenerateModel("pupil distance of the mean shape is zero")
    factor = target_ipd / current
    if factor == 1.0:
        return model
    return replace(
        model,
        mean_shape=model.mean_shape * factor,
        blendshapes=model.blendshapes * factor,
        units="meters",
    )


def _require(doc: dict, key: str):
    if key not in doc:
        raise ParseError(f"missing field {key!r}")
    return doc[key]


def model_from_dict(doc: dict) -> DeformableFaceModel:
    version = _require(doc, "format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version}")
    try:
        vertices = np.array(_require(doc, "vertices"), dtype=np.float64)
        triangles = np.array(_require(doc, "triangles"), dtype=np.int64)
        if triangles.size == 0:
            triangles = triangles.reshape(0, 3)
        bs = _require(doc, "blendshapes")
        names = tuple(_require(b, "name") for b in bs)
        kinds = tuple(_require(b, "kind") for b in bs)
        offsets = np.array([_require(b, "offsets") for b in bs], dtype=np.float64)
        lmap = tuple((int(l), int(v)) for l, v in _require(doc, "landmark_map"))
        left = tuple(int(i) for i in _require(doc, "left_pupil"))
        right = tuple(int(i) for i in _require(doc, "right_pupil"))
        units = _require(doc, "units")
    except (TypeError, ValueError) as e:
        raise ParseError(f"malformed model document: {e}") from e
    model = DeformableFaceModel(
        mean_shape=vertices,
        blendshapes=offsets,
        blendshape_names=names,
        blendshape_kinds=kinds,
        triangles=triangles,
        landmark_map=lmap,
        left_pupil=left,
        right_pupil=right,
        units=units,
    )
    validate_model(model)
    return model


def model_to_dict(model: DeformableFaceModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "units": model.units,
        "vertices": model.mean_shape.tolist(),
        "triangles": model.triangles.tolist(),
        "blendshapes": [
            {"name": n, "kind": k, "offsets": o.tolist()}
            for n, k, o in zip(
                model.blendshape_names, model.blendshape_kinds, model.blendshapes
            )
        ],
        "landmark_map": [list(p) for p in model.landmark_map],
        "left_pupil": list(model.left_pupil),
        "right_pupil": list(model.right_pupil),
    }


def load_model(path) -> DeformableFaceModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top-level value must be an object")
    return model_from_dict(doc)


def save_model(model: DeformableFaceModel, path) -> None:
    validate_model(model)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f)
        f.write("\n")


def load_default_model(metric: bool = True) -> DeformableFaceModel:
    """The bundled 113-vertex model; scaled to 63 mm IPD unless metric=False."""
    ref = resources.files("headtrack").joinpath("data/face_model_113.json")
    with resources.as_file(ref) as p:
        model = load_model(p)
    return scale_to_ipd(model) if metric else model
