"""Overlay of equally spaced longitudinal lines on each body part.

Every part gets its central line in white and ``lines_per_side`` lines on
each side whose colour fades from white at the centre to the part colour
at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from .dataset_io import BodyPartMask, Skeleton
from .errors import GenerationFailed, GeometryUnavailable, ShapeError
from .gt_generation import Generator
from .parts import EVAL_PARTS, MASK_LABELS, HeadStrategy, KeypointQuery, Side

RGB = tuple[int, int, int]

DEFAULT_COLORS: dict[str, RGB] = {
    "head": (230, 25, 75),
    "torso": (60, 180, 75),
    "l_upper_arm": (0, 130, 200),
    "r_upper_arm": (245, 130, 48),
    "l_elbow": (70, 240, 240),
    "r_elbow": (240, 50, 230),
    "l_forearm": (145, 30, 180),
    "r_forearm": (210, 245, 60),
    "l_hand": (250, 190, 212),
    "r_hand": (0, 128, 128),
    "l_thigh": (220, 190, 255),
    "r_thigh": (170, 110, 40),
    "l_knee": (255, 250, 200),
    "r_knee": (128, 0, 0),
    "l_lower_leg": (170, 255, 195),
    "r_lower_leg": (128, 128, 0),
    "l_foot": (255, 215, 180),
    "r_foot": (0, 0, 128),
}
WHITE: RGB = (255, 255, 255)


@dataclass(frozen=True)
class OverlaySpec:
    lines_per_side: int = 3
    samples: int = 100
    colors: dict[str, RGB] = field(default_factory=lambda: dict(DEFAULT_COLORS))
    central_color: RGB = WHITE
    parts: tuple[str, ...] = EVAL_PARTS

    def __post_init__(self):
        if self.lines_per_side < 1:
            raise ValueError("lines_per_side must be >= 1")
        if self.samples < 2:
            raise ValueError("samples must be >= 2")

    def color(self, part: str, q: float) -> RGB:
        c = np.asarray(self.colors[part], float)
        w = np.asarray(self.central_color, float)
        return tuple(int(round(v)) for v in q * c + (1.0 - q) * w)  # type: ignore[return-value]


@dataclass(frozen=True)
class Polyline:
    part: str
    q: float
    side: Side
    runs: tuple[np.ndarray, ...]  # consecutive successfully generated samples


def polylines(skeleton: Skeleton, mask: BodyPartMask, spec: OverlaySpec = OverlaySpec()) -> list[Polyline]:
    """All overlay polylines; parts whose geometry is unavailable are left out."""
    gen = Generator(skeleton, mask)
    ts = np.linspace(0.0, 1.0, spec.samples)
    levels = [(0.0, Side.LEFT)] + [
        (i / spec.lines_per_side, side) for i in range(1, spec.lines_per_side + 1) for side in (Side.LEFT, Side.RIGHT)
    ]
    out = []
    for part in spec.parts:
        try:
            gen.check_part(part, HeadStrategy.EXTENSION)
        except (GeometryUnavailable, GenerationFailed):
            continue
        constructions = []
        for t in ts:
            try:
                constructions.append(gen.construction(KeypointQuery(part, float(t), 0.0)))
            except (GeometryUnavailable, GenerationFailed):
                constructions.append(None)
        for q, side in levels:
            runs, cur = [], []
            for c in constructions:
                if c is None:
                    if cur:
                        runs.append(np.array(cur))
                    cur = []
                    continue
                cur.append(c.point(q, side))
            if cur:
                runs.append(np.array(cur))
            out.append(Polyline(part, q, side, tuple(runs)))
    return out


def render_overlay(image: np.ndarray, skeleton: Skeleton, mask: BodyPartMask, spec: OverlaySpec = OverlaySpec()) -> np.ndarray:
    """Copy of the RGB ``image`` with the overlay drawn on top (outer lines first)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected an RGB image, got shape {image.shape}")
    if image.shape[:2] != (mask.height, mask.width):
        raise ShapeError(f"image {image.shape[1]}x{image.shape[0]} does not match mask {mask.width}x{mask.height}")
    canvas = Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), "RGB")
    draw = ImageDraw.Draw(canvas)
    for line in sorted(polylines(skeleton, mask, spec), key=lambda pl: -pl.q):
        color = spec.color(line.part, line.q)
        for run in line.runs:
            pts = [(float(x), float(y)) for x, y in run]
            if len(pts) == 1:
                draw.point(pts, fill=color)
            else:
                draw.line(pts, fill=color, width=1)
    return np.asarray(canvas).copy()


def mask_preview(mask: BodyPartMask, spec: OverlaySpec = OverlaySpec()) -> np.ndarray:
    """Dimmed colour rendering of the label raster, a backdrop when no photo is given."""
    table = np.zeros((256, 3), dtype=np.uint8)
    for code, name in enumerate(MASK_LABELS[1:], start=1):
        table[code] = np.asarray(spec.colors[name]) // 3
    return table[mask.raster]
