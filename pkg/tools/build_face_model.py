#!/usr/bin/env python3
"""Build the bundled deformable face model.

Constructs a face-like mesh with exactly 113 vertices and 168 triangles:
56 outline points on an ellipse plus 57 interior feature points (51 landmark
positions of the standard internal-landmark convention plus 6 fillers),
Delaunay-triangulated. For a planar triangulation with h hull points out of
n, the triangle count is 2n - 2 - h, so n=113 with h=56 gives 168 exactly.

Depth is a smooth dome with a nose protrusion; blendshapes are Gaussian
falloff displacement fields (4 shape units, 6 action units).

Coordinates are written unitless (face height ~2.1 units); consumers scale
to metric via scale_to_ipd. Run from the repository root:

    python tools/build_face_model.py
"""

import sys
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from headtrack.face_model import (  # noqa: E402
    ACTION_UNIT,
    SHAPE_UNIT,
    DeformableFaceModel,
    save_model,
    validate_model,
)

OUT = Path(__file__).resolve().parents[1] / "src" / "headtrack" / "data" / "face_model_113.json"

# 51 interior landmarks, image convention (x right, y down), unitless.
# Order: brows (10), nose (9), eyes (12), mouth outer (12), mouth inner (8).
LANDMARKS_2D = [
    # left brow
    (-0.72, -0.38), (-0.57, -0.45), (-0.42, -0.48), (-0.27, -0.46), (-0.13, -0.42),
    # right brow
    (0.13, -0.42), (0.27, -0.46), (0.42, -0.48), (0.57, -0.45), (0.72, -0.38),
    # nose bridge + tip
    (0.0, -0.30), (0.0, -0.18), (0.0, -0.06), (0.0, 0.06),
    # nose bottom
    (-0.14, 0.16), (-0.07, 0.18), (0.0, 0.20), (0.07, 0.18), (0.14, 0.16),
    # left eye: outer, top x2, inner, bottom x2
    (-0.55, -0.26), (-0.45, -0.31), (-0.33, -0.31), (-0.23, -0.25),
    (-0.33, -0.19), (-0.45, -0.19),
    # right eye: inner, top x2, outer, bottom x2
    (0.23, -0.25), (0.33, -0.31), (0.45, -0.31), (0.55, -0.26),
    (0.45, -0.19), (0.33, -0.19),
    # mouth outer, counter-clockwise from left corner
    (-0.33, 0.46), (-0.20, 0.40), (-0.08, 0.37), (0.0, 0.38), (0.08, 0.37),
    (0.20, 0.40), (0.33, 0.46), (0.20, 0.53), (0.08, 0.56), (0.0, 0.57),
    (-0.08, 0.56), (-0.20, 0.53),
    # mouth inner
    (-0.26, 0.46), (-0.08, 0.43), (0.0, 0.44), (0.08, 0.43), (0.26, 0.46),
    (0.08, 0.50), (0.0, 0.51), (-0.08, 0.50),
]

FILLERS_2D = [
    (0.0, -0.70),    # forehead
    (-0.52, 0.10),   # left cheek
    (0.52, 0.10),    # right cheek
    (0.0, 0.80),     # chin
    (-0.45, 0.42),   # left lower cheek
    (0.45, 0.42),    # right lower cheek
]

OUTLINE_COUNT = 56
N_LANDMARKS = 51


def gauss(p, center, sigma):
    d2 = (p[:, 0] - center[0]) ** 2 + (p[:, 1] - center[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def build_vertices():
    ang = np.linspace(0.0, 2.0 * np.pi, OUTLINE_COUNT, endpoint=False)
    outline = np.stack([0.85 * np.cos(ang), 1.05 * np.sin(ang)], axis=1)
    interior = np.array(LANDMARKS_2D + FILLERS_2D, dtype=np.float64)
    # deterministic sub-visual jitter breaks cocircular Delaunay ties
    rng = np.random.default_rng(20240814)
    interior = interior + rng.uniform(-1e-3, 1e-3, size=interior.shape)
    pts2 = np.vstack([outline, interior])

    # depth: dome toward the camera (negative z) plus nose and brow relief;
    # the relief is deep (~0.9 units, ~73 mm after metric scaling) so the
    # perspective cues keep depth well observable in the fit
    x, y = pts2[:, 0], pts2[:, 1]
    dome = 1.0 - (x / 0.92) ** 2 - (y / 1.18) ** 2
    z = -0.72 * np.sqrt(np.clip(dome, 0.0, None))
    z -= 0.35 * gauss(pts2, (0.0, 0.08), 0.17)       # nose
    z -= 0.06 * gauss(pts2, (-0.42, -0.45), 0.22)    # brow ridge
    z -= 0.06 * gauss(pts2, (0.42, -0.45), 0.22)
    z += 0.08 * gauss(pts2, (-0.39, -0.25), 0.12)    # eye sockets recede
    z += 0.08 * gauss(pts2, (0.39, -0.25), 0.12)
    return np.column_stack([pts2, z])


def build_blendshapes(verts):
    p = verts[:, :2]
    x, y = p[:, 0], p[:, 1]
    n = len(verts)

    def zero():
        return np.zeros((n, 3))

    # Shape units are localized feature shifts. Nothing here may resemble a
    # global scaling of the mapped landmarks (eye-separation-style units
    # would let the weights trade against depth under landmark noise).
    shapes = []

    d = zero()  # cheeks fill out; depth-only and clamped to zero on the
    # landmark-mapped vertices, so it shapes the mesh without entering
    # the landmark fit
    d[:, 2] = -0.08 * (gauss(p, (-0.52, 0.10), 0.14) + gauss(p, (0.52, 0.10), 0.14))
    d[OUTLINE_COUNT : OUTLINE_COUNT + N_LANDMARKS] = 0.0
    shapes.append(("cheek_fullness", SHAPE_UNIT, d))

    d = zero()  # nostrils flare apart
    d[:, 0] = 0.06 * (gauss(p, (0.14, 0.16), 0.10) - gauss(p, (-0.14, 0.16), 0.10))
    shapes.append(("nose_width", SHAPE_UNIT, d))

    d = zero()  # mouth corners move apart
    d[:, 0] = 0.10 * (gauss(p, (0.33, 0.46), 0.12) - gauss(p, (-0.33, 0.46), 0.12))
    shapes.append(("mouth_width", SHAPE_UNIT, d))

    d = zero()  # longer nose
    d[:, 1] = 0.10 * gauss(p, (0.0, 0.10), 0.18)
    d[:, 2] = -0.04 * gauss(p, (0.0, 0.10), 0.18)
    shapes.append(("nose_length", SHAPE_UNIT, d))

    d = zero()  # mouth corners out and up, slight cheek raise
    for sx in (-1.0, 1.0):
        g = gauss(p, (sx * 0.33, 0.46), 0.13)
        d[:, 0] += sx * 0.10 * g
        d[:, 1] -= 0.08 * g
        gc = gauss(p, (sx * 0.45, 0.20), 0.15)
        d[:, 2] -= 0.02 * gc
    shapes.append(("smiling", ACTION_UNIT, d))

    d = zero()  # brows rise
    band = np.exp(-((y + 0.44) / 0.12) ** 2 / 2.0)
    spread = np.exp(-((np.abs(x) - 0.42) / 0.33) ** 2 / 2.0)
    d[:, 1] = -0.10 * band * spread
    shapes.append(("eyebrow_raising", ACTION_UNIT, d))

    d = zero()  # jaw hinges: lower lip drops and swings back
    g = np.exp(-((y - 0.60) / 0.14) ** 2 / 2.0) * np.exp(-(x / 0.30) ** 2 / 2.0)
    d[:, 1] = 0.15 * g
    d[:, 2] = 0.05 * g
    shapes.append(("mouth_opening", ACTION_UNIT, d))

    d = zero()  # upper lids close
    d[:, 1] += 0.05 * gauss(p, (-0.39, -0.31), 0.09)
    d[:, 1] += 0.05 * gauss(p, (0.39, -0.31), 0.09)
    shapes.append(("eye_closing", ACTION_UNIT, d))

    d = zero()  # lips purse together and push forward
    g = gauss(p, (0.0, 0.47), 0.18)
    d[:, 1] = -0.06 * (y - 0.47) * g
    d[:, 2] = -0.04 * g
    shapes.append(("lip_pucker", ACTION_UNIT, d))

    d = zero()  # nose bridge scrunches up
    g = gauss(p, (0.0, -0.12), 0.13)
    d[:, 1] = -0.05 * g
    d[:, 2] = -0.02 * g
    shapes.append(("nose_wrinkling", ACTION_UNIT, d))

    return shapes


def main():
    verts = build_vertices()
    tri = Delaunay(verts[:, :2])
    hull = np.unique(tri.convex_hull)
    if len(verts) != 113 or len(tri.simplices) != 168 or len(hull) != OUTLINE_COUNT:
        raise SystemExit(
            f"mesh counts off: V={len(verts)} T={len(tri.simplices)} hull={len(hull)}"
        )

    shapes = build_blendshapes(verts)
    model = DeformableFaceModel(
        mean_shape=verts,
        blendshapes=np.array([d for _, _, d in shapes]),
        blendshape_names=tuple(nm for nm, _, _ in shapes),
        blendshape_kinds=tuple(k for _, k, _ in shapes),
        triangles=np.array(tri.simplices, dtype=np.int64),
        landmark_map=tuple((i, OUTLINE_COUNT + i) for i in range(N_LANDMARKS)),
        left_pupil=(OUTLINE_COUNT + 19, OUTLINE_COUNT + 22),
        right_pupil=(OUTLINE_COUNT + 25, OUTLINE_COUNT + 28),
        units="unitless",
    )
    validate_model(model)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, OUT)
    print(f"wrote {OUT} (V={model.vertex_count}, F={len(model.triangles)}, "
          f"n={model.blendshape_count}, ipd={model.ipd():.4f} units)")


if __name__ == "__main__":
    main()
