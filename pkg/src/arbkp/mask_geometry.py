"""Line/mask geometry on label rasters.

Conventions: image coordinates with x to the right and y down; pixel
``(col, row)`` covers ``[col - 0.5, col + 0.5) x [row - 0.5, row + 0.5)``, so
the pixel under a point is ``floor(coord + 0.5)``. The left of a direction
``d`` is the side of its normal ``(d.y, -d.x)``, i.e. ``d`` rotated a quarter
turn counter-clockwise as seen on screen.

Lines are traversed exactly: the ray is cut wherever it crosses a pixel
edge, so every pixel it touches is looked at. A run ends at the first pixel
outside the label set (or the raster), at the exact edge crossing; the
returned endpoint sits a hair inside, so it lies on an in-label pixel.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .dataset_io import BodyPartMask
from .errors import BoundsError
from .parts import Side

_ON_TOL = 1e-9


def as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite point {a}")
    return a


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = math.hypot(v[0], v[1])
    if n == 0.0:
        raise ValueError("zero-length direction")
    return v / n


def left_normal(d) -> np.ndarray:
    return np.array([d[1], -d[0]], dtype=float)


def rotate_ccw(d, angle: float) -> np.ndarray:
    """Rotate ``d`` counter-clockwise (screen sense) by ``angle`` radians.

    A quarter turn maps ``d`` to :func:`left_normal` ``(d)``.
    """
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]], dtype=float)


def cross(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


@dataclass(frozen=True)
class LineQuery:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = as_point(self.origin)
        d = as_point(self.direction)
        if abs(math.hypot(d[0], d[1]) - 1.0) > 1e-9:
            raise ValueError(f"direction must be a unit vector, got {d}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def through(cls, a, b) -> "LineQuery":
        a = as_point(a)
        return cls(a, unit(as_point(b) - a))

    @property
    def normal(self) -> np.ndarray:
        return left_normal(self.direction)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class IntersectionPair:
    c_left: np.ndarray | None
    c_right: np.ndarray | None
    valid: bool

    @classmethod
    def invalid(cls) -> "IntersectionPair":
        return cls(None, None, False)


@functools.lru_cache(maxsize=256)
def _lut(labels: frozenset[int]) -> np.ndarray:
    table = np.zeros(256, dtype=bool)
    for code in labels:
        table[code] = True
    table.setflags(write=False)
    return table


def _labels_key(labels: Iterable[int]) -> frozenset[int]:
    if isinstance(labels, frozenset):
        return labels
    return frozenset(int(x) for x in labels)


def pixel_of(point) -> tuple[int, int]:
    return math.floor(point[0] + 0.5), math.floor(point[1] + 0.5)


def in_raster(mask: BodyPartMask, point) -> bool:
    c, r = pixel_of(point)
    return 0 <= c < mask.width and 0 <= r < mask.height


def label_at(mask: BodyPartMask, point) -> int:
    """Label under ``point``; -1 outside the raster."""
    c, r = pixel_of(point)
    if 0 <= c < mask.width and 0 <= r < mask.height:
        return int(mask.raster[r, c])
    return -1


def in_labels(mask: BodyPartMask, labels: Iterable[int], point) -> bool:
    lab = label_at(mask, point)
    return lab >= 0 and bool(_lut(_labels_key(labels))[lab])


def _exit_distance(mask: BodyPartMask, origin: np.ndarray, d: np.ndarray) -> float:
    t = math.inf
    for axis, size in ((0, mask.width), (1, mask.height)):
        if d[axis] > 0:
            t = min(t, (size - 0.5 - origin[axis]) / d[axis])
        elif d[axis] < 0:
            t = min(t, (-0.5 - origin[axis]) / d[axis])
    return max(t, 0.0)


def _crossings(origin: float, d: float, t_max: float) -> np.ndarray:
    """Parameters in (0, t_max) at which the ray crosses a pixel edge ``k + 0.5``."""
    if d == 0.0:
        return np.empty(0)
    lo, hi = sorted((origin, origin + t_max * d))
    k = np.arange(math.ceil(lo - 0.5), math.floor(hi - 0.5) + 1, dtype=float) + 0.5
    t = (k - origin) / d
    return t[(t > 0.0) & (t < t_max)]


def _pieces(mask: BodyPartMask, lut: np.ndarray, origin: np.ndarray, d: np.ndarray, t_max: float):
    """Cut parameters ``ts`` of the ray up to ``t_max`` and per-piece (in raster, in label) flags."""
    ts = np.unique(np.concatenate([[0.0, t_max], _crossings(origin[0], d[0], t_max), _crossings(origin[1], d[1], t_max)]))
    mids = 0.5 * (ts[:-1] + ts[1:])
    cols = np.floor(origin[0] + mids * d[0] + 0.5).astype(np.int64)
    rows = np.floor(origin[1] + mids * d[1] + 0.5).astype(np.int64)
    inside = (cols >= 0) & (cols < mask.width) & (rows >= 0) & (rows < mask.height)
    ok = np.zeros(len(mids), dtype=bool)
    ok[inside] = lut[mask.raster[rows[inside], cols[inside]]]
    return ts, inside, ok


def _walk(mask: BodyPartMask, lut: np.ndarray, origin: np.ndarray, d: np.ndarray, max_gap: int) -> np.ndarray:
    """Farthest in-label point of the run that starts at ``origin`` (assumed in-label).

    The ray is cut at every pixel edge it crosses, so each pixel it touches
    is visited exactly once, however short the piece inside that pixel.
    """
    ts, inside, ok = _pieces(mask, lut, origin, d, _exit_distance(mask, origin, d))
    # leaving the raster always ends the run
    ok = np.append(ok, False)
    inside = np.append(inside, False)
    ts = np.append(ts, ts[-1])

    bad = np.flatnonzero(~ok)
    stop = int(bad[0])
    if max_gap > 0:
        i = 0
        while i < len(bad):
            j = i
            while j + 1 < len(bad) and bad[j + 1] == bad[j] + 1:
                j += 1
            if bad[j] - bad[i] + 1 > max_gap or not inside[bad[j]] or bad[j] + 1 >= len(ok) or not inside[bad[j] + 1]:
                stop = int(bad[i])
                break
            i = j + 1
    t_end = float(ts[stop])
    if t_end <= 0.0:
        return origin.copy()
    # the run ends exactly on a pixel edge; step back onto the last in-label pixel
    for eps in (1e-9, 1e-7, 1e-5):
        end = origin + max(t_end - eps, 0.0) * d
        c, r = math.floor(end[0] + 0.5), math.floor(end[1] + 0.5)
        if 0 <= c < mask.width and 0 <= r < mask.height and lut[mask.raster[r, c]]:
            return end
    return origin + float(ts[max(stop - 1, 0)]) * d


def ray_boundary(mask: BodyPartMask, labels: Iterable[int], origin, direction, max_gap: int = 0):
    """Farthest point of the origin's coherent run along a ray, or ``None``.

    ``None`` is returned when the origin is off the raster or not on a pixel
    carrying one of ``labels``.
    """
    o = as_point(origin)
    d = unit(as_point(direction))
    key = _labels_key(labels)
    if not in_labels(mask, key, o):
        return None
    return _walk(mask, _lut(key), o, d, max_gap)


def ray_entry(mask: BodyPartMask, labels: Iterable[int], origin, direction, t_max: float):
    """Parameter interval ``(t_in, t_out)`` of the first in-label run of the ray, or ``None``.

    Both ends are exact pixel-edge crossings; only runs starting within
    ``t_max`` count, and ``t_in`` is 0 when the origin is already in-label.
    """
    o = as_point(origin)
    d = unit(as_point(direction))
    ts, _, ok = _pieces(mask, _lut(_labels_key(labels)), o, d, _exit_distance(mask, o, d))
    hits = np.flatnonzero(ok)
    if not len(hits) or ts[hits[0]] > t_max:
        return None
    i = int(hits[0])
    j = i
    while j + 1 < len(ok) and ok[j + 1]:
        j += 1
    return float(ts[i]), float(ts[j + 1])


def coherent_intersections(
    mask: BodyPartMask,
    labels: Iterable[int],
    line: LineQuery,
    reference: LineQuery | None = None,
    max_gap: int = 0,
) -> IntersectionPair:
    """Endpoints of the contiguous in-label run along ``line`` through its origin.

    Pixels of the label set separated from the origin's run by a gap of
    background (or any other label) are ignored. With no ``reference`` the
    run end in ``+line.direction`` is returned as ``c_left``; that matches
    the usual construction where ``line`` is the left normal of the
    part's directed axis. With a ``reference``, endpoints are assigned by
    :func:`side_of` relative to it.

    Raises :class:`BoundsError` when the origin is outside the raster.
    """
    if not in_raster(mask, line.origin):
        raise BoundsError(f"origin {line.origin} outside {mask.width}x{mask.height} raster")
    key = _labels_key(labels)
    if not in_labels(mask, key, line.origin):
        return IntersectionPair.invalid()
    lut = _lut(key)
    fwd = _walk(mask, lut, line.origin, line.direction, max_gap)
    bwd = _walk(mask, lut, line.origin, -line.direction, max_gap)
    if reference is not None and float(np.dot(fwd - bwd, reference.normal)) < 0:
        fwd, bwd = bwd, fwd
    return IntersectionPair(fwd, bwd, True)


def side_of(reference: LineQuery, point) -> Side:
    v = as_point(point) - reference.origin
    val = float(np.dot(v, reference.normal))
    if abs(val) < _ON_TOL:
        return Side.ON
    return Side.LEFT if val > 0 else Side.RIGHT


def line_intersection(a: LineQuery, b: LineQuery):
    """Parameters ``(t, u)`` with ``a.at(t) == b.at(u)``; ``None`` if parallel."""
    den = cross(a.direction, b.direction)
    if abs(den) < 1e-12:
        return None
    diff = b.origin - a.origin
    t = cross(diff, b.direction) / den
    u = cross(diff, a.direction) / den
    return t, u


def segments_cross(p1, p2, q1, q2) -> bool:
    """Proper crossing test of segments ``p1p2`` and ``q1q2``."""
    p1, p2, q1, q2 = (as_point(x) for x in (p1, p2, q1, q2))
    if np.allclose(p1, p2) or np.allclose(q1, q2):
        return False
    lp = LineQuery.through(p1, p2)
    lq = LineQuery.through(q1, q2)
    s1, s2 = side_of(lp, q1), side_of(lp, q2)
    s3, s4 = side_of(lq, p1), side_of(lq, p2)
    return (
        Side.ON not in (s1, s2, s3, s4)
        and s1 is not s2
        and s3 is not s4
    )
