"""Procedural athletes: rasterised capsules and boxes with matching skeletons.

Used for the normalized-pose template, for test fixtures and for the demo
dataset written by ``arbkp demo-data``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import BodyPartMask, Keypoint, Skeleton
from .parts import KEYPOINT_NAMES, LABEL_CODE


def _grid(shape):
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]]
    return cols.astype(float), rows.astype(float)


def paint_capsule(raster: np.ndarray, a, b, radius: float, label: int) -> None:
    """Label every pixel centre within ``radius`` of the segment ``ab``."""
    x, y = _grid(raster.shape)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        t = np.zeros_like(x)
    else:
        t = np.clip(((x - a[0]) * ab[0] + (y - a[1]) * ab[1]) / denom, 0.0, 1.0)
    dx = x - (a[0] + t * ab[0])
    dy = y - (a[1] + t * ab[1])
    raster[dx * dx + dy * dy <= radius * radius] = label


def paint_box(raster: np.ndarray, x0: int, x1: int, y0: int, y1: int, label: int) -> None:
    """Label the inclusive pixel box ``[x0, x1] x [y0, y1]``."""
    raster[y0 : y1 + 1, x0 : x1 + 1] = label


def paint_disk(raster: np.ndarray, centre, radius: float, label: int) -> None:
    paint_capsule(raster, centre, centre, radius, label)


def paint_convex_polygon(raster: np.ndarray, vertices, label: int) -> None:
    """Label pixel centres inside a convex polygon given in either winding."""
    v = np.asarray(vertices, float)
    x, y = _grid(raster.shape)
    signs = []
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        signs.append((b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]))
    signs = np.stack(signs)
    inside = np.all(signs >= 0, axis=0) | np.all(signs <= 0, axis=0)
    raster[inside] = label


def make_skeleton(points: dict[str, tuple[float, float]], image_id: str = "img", athlete_id: str = "a0") -> Skeleton:
    kps = {}
    for name in KEYPOINT_NAMES:
        if name in points:
            x, y = points[name]
            kps[name] = Keypoint(float(x), float(y), True)
        else:
            kps[name] = Keypoint(0.0, 0.0, False)
    return Skeleton(image_id, athlete_id, kps)


@dataclass(frozen=True)
class AthleteShape:
    """Keypoints and part radii of a procedural athlete."""

    points: dict[str, tuple[float, float]]
    head_radius: float = 24.0
    torso_half_width: float = 40.0
    limb_radius: float = 10.0
    leg_radius: float = 14.0
    hand_radius: float = 8.0
    hand_overhang: float = 14.0
    foot_radius: float = 7.0


def default_points(dx: float = 0.0, dy: float = 0.0, elbow_bend: float = 1.0, knee_bend: float = 1.0) -> dict:
    """A standing frontal pose; ``*_bend`` scales the sideways offset of elbows and knees."""
    pts = {
        "head": (200, 50),
        "neck": (200, 86),
        "l_shoulder": (236, 100),
        "r_shoulder": (164, 100),
        "l_elbow": (262 + 18 * elbow_bend, 160),
        "r_elbow": (138 - 18 * elbow_bend, 160),
        "l_wrist": (292, 230),
        "r_wrist": (108, 230),
        "l_hand": (297, 254),
        "r_hand": (103, 254),
        "l_hip": (220, 240),
        "r_hip": (180, 240),
        "l_knee": (224 + 12 * knee_bend, 340),
        "r_knee": (176 - 12 * knee_bend, 340),
        "l_ankle": (222, 430),
        "r_ankle": (178, 430),
        "l_heel": (220, 447),
        "r_heel": (180, 447),
        "l_toe_tip": (250, 452),
        "r_toe_tip": (150, 452),
    }
    return {k: (x + dx, y + dy) for k, (x, y) in pts.items()}


def render_athlete(shape: AthleteShape, width: int = 400, height: int = 480) -> BodyPartMask:
    raster = np.zeros((height, width), dtype=np.uint8)
    p = {k: np.asarray(v, float) for k, v in shape.points.items()}
    mid_hip = 0.5 * (p["l_hip"] + p["r_hip"])
    hw = shape.torso_half_width
    torso = [
        p["neck"] + (-hw, -6),
        p["neck"] + (hw, -6),
        mid_hip + (hw * 0.75, 6),
        mid_hip + (-hw * 0.75, 6),
    ]
    paint_convex_polygon(raster, torso, LABEL_CODE["torso"])
    for s in ("l", "r"):
        paint_capsule(raster, p[f"{s}_hip"], p[f"{s}_knee"], shape.leg_radius, LABEL_CODE[f"{s}_thigh"])
        paint_capsule(raster, p[f"{s}_knee"], p[f"{s}_ankle"], shape.leg_radius * 0.8, LABEL_CODE[f"{s}_lower_leg"])
        paint_capsule(raster, p[f"{s}_heel"], p[f"{s}_toe_tip"], shape.foot_radius, LABEL_CODE[f"{s}_foot"])
        paint_capsule(raster, p[f"{s}_shoulder"], p[f"{s}_elbow"], shape.limb_radius, LABEL_CODE[f"{s}_upper_arm"])
        paint_capsule(raster, p[f"{s}_elbow"], p[f"{s}_wrist"], shape.limb_radius * 0.8, LABEL_CODE[f"{s}_forearm"])
        d = p[f"{s}_hand"] - p[f"{s}_wrist"]
        tip = p[f"{s}_hand"] + d / np.linalg.norm(d) * shape.hand_overhang
        paint_capsule(raster, p[f"{s}_wrist"] + d * 0.25, tip, shape.hand_radius, LABEL_CODE[f"{s}_hand"])
    paint_disk(raster, p["head"], shape.head_radius, LABEL_CODE["head"])
    return BodyPartMask(raster)


def synthetic_athlete(
    image_id: str = "synthetic",
    athlete_id: str = "a0",
    dx: float = 0.0,
    dy: float = 0.0,
    elbow_bend: float = 1.0,
    knee_bend: float = 1.0,
    width: int = 400,
    height: int = 480,
) -> tuple[Skeleton, BodyPartMask]:
    """A fully visible athlete whose 18 evaluation parts all have valid geometry."""
    shape = AthleteShape(default_points(dx, dy, elbow_bend, knee_bend))
    return make_skeleton(shape.points, image_id, athlete_id), render_athlete(shape, width, height)


def mirror(skeleton: Skeleton, mask: BodyPartMask) -> tuple[Skeleton, BodyPartMask]:
    """Flip image content horizontally; part names are kept."""
    w = mask.width
    return skeleton.transformed(lambda x, y: (w - 1 - x, y)), BodyPartMask(mask.raster[:, ::-1].copy())


def translate(skeleton: Skeleton, mask: BodyPartMask, dx: int, dy: int) -> tuple[Skeleton, BodyPartMask]:
    """Shift content by whole pixels inside an enlarged canvas."""
    h, w = mask.height, mask.width
    raster = np.zeros((h + abs(dy), w + abs(dx)), dtype=np.uint8)
    ox, oy = max(dx, 0), max(dy, 0)
    raster[oy : oy + h, ox : ox + w] = mask.raster
    return skeleton.transformed(lambda x, y: (x + ox, y + oy)), BodyPartMask(raster)
