"""Ground-truth synthesis of arbitrary keypoints from skeletons and part masks.

Every generator reduces to a :class:`Construction`: an origin on the part's
central line, a cross line through it and the two boundary points of the
mask on that line. A query's thickness ``q`` then interpolates from the
origin (``q = 0``) to the boundary point on the requested side (``q = 1``).

* straight parts: origin ``k_i = p * k1 + (1 - p) * k2`` on the axis ``v_e``,
  cross line orthogonal to ``v_e``;
* hands and the head (extension strategy): as straight parts, with the
  missing enclosing point obtained by extending the keypoint line to the
  mask boundary;
* head (angle strategy): origin at the head keypoint, cross line rotated
  by ``alpha`` from the neck->head direction;
* elbows and knees: cross line rotated around the inner-bend anchor point,
  origin where it meets the upper or lower part's axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset_io import BodyPartMask, Skeleton
from .errors import BoundsError, GenerationFailed, GeometryUnavailable
from .mask_geometry import (
    ray_entry,
    LineQuery,
    as_point,
    coherent_intersections,
    cross,
    in_labels,
    in_raster,
    label_at,
    left_normal,
    line_intersection,
    ray_boundary,
    rotate_ccw,
    segments_cross,
    side_of,
    unit,
)
from .parts import (
    ENCLOSING,
    JOINTS,
    TWO_PI,
    HeadStrategy,
    KeypointQuery,
    Side,
    angle_side,
    neighbor_labels,
    part_labels,
)

# how far (as a fraction of the part length) an end-of-part origin may be
# moved inward when it sits on a neighbouring part's pixels
_JUNCTION_REACH = 0.25
_STRAIGHT_EPS = 1e-9


@dataclass(frozen=True)
class PartGeometry:
    part: str
    k1: np.ndarray
    k2: np.ndarray
    v_e: LineQuery
    source: str  # "annotated" or "extended"

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.k2 - self.k1))

    def at(self, p: float) -> np.ndarray:
        return p * self.k1 + (1.0 - p) * self.k2


@dataclass(frozen=True)
class BentJointContext:
    joint: str
    beta: float
    anchor: np.ndarray
    start_dir: np.ndarray
    end_dir: np.ndarray
    upper: PartGeometry
    lower: PartGeometry
    anchor_side: Side  # side of the upper axis the anchor lies on

    @property
    def sweep(self) -> float:
        """Signed angle from ``start_dir`` to ``end_dir`` (math sense, |.| < pi)."""
        return math.atan2(cross(self.start_dir, self.end_dir), float(np.dot(self.start_dir, self.end_dir)))

    def direction(self, s: float) -> np.ndarray:
        a = s * self.sweep
        c, sn = math.cos(a), math.sin(a)
        d = self.start_dir
        return np.array([c * d[0] - sn * d[1], sn * d[0] + c * d[1]])


@dataclass(frozen=True)
class Construction:
    """Cross line of one query: ``origin`` plus boundary points on both sides.

    ``direction`` is the unit vector from ``origin`` toward ``c_pos``;
    queries on ``side_pos`` interpolate toward ``c_pos``, the others
    toward ``c_neg``.
    """

    origin: np.ndarray
    direction: np.ndarray
    c_pos: np.ndarray
    c_neg: np.ndarray
    side_pos: Side

    def boundary(self, side: Side) -> np.ndarray:
        return self.c_pos if side is self.side_pos else self.c_neg

    def point(self, q: float, side: Side) -> np.ndarray:
        return q * self.boundary(side) + (1.0 - q) * self.origin

    def thickness(self, pred, fallback_side: Side) -> tuple[float, Side]:
        """Thickness fraction and side of ``pred`` projected on the cross line.

        A prediction exactly on the origin gets ``fallback_side``.
        """
        t = float(np.dot(as_point(pred) - self.origin, self.direction))
        if t == 0.0:
            return 0.0, fallback_side
        if t > 0:
            extent, side = float(np.dot(self.c_pos - self.origin, self.direction)), self.side_pos
        else:
            extent, side = float(np.dot(self.origin - self.c_neg, self.direction)), self.side_pos.opposite()
        if extent <= 1e-12:
            return math.inf, side
        return abs(t) / extent, side


def _require(skeleton: Skeleton, *names: str) -> None:
    missing = [n for n in names if not skeleton.keypoints[n].visible]
    if missing:
        raise GeometryUnavailable(f"{skeleton.image_id}: keypoints not visible: {missing}")


def _geometry(part: str, k1, k2, source: str) -> PartGeometry:
    k1, k2 = as_point(k1), as_point(k2)
    if np.linalg.norm(k2 - k1) < 1e-9:
        raise GeometryUnavailable(f"{part}: coincident enclosing points")
    return PartGeometry(part, k1, k2, LineQuery.through(k1, k2), source)


def part_geometry(skeleton: Skeleton, mask: BodyPartMask, part: str) -> PartGeometry:
    """Enclosing points and directed axis of a straight, hand or head (extension) part."""
    if part == "torso":
        _require(skeleton, "neck", "l_hip", "r_hip")
        mid = 0.5 * (skeleton.xy("l_hip") + skeleton.xy("r_hip"))
        return _geometry(part, skeleton.xy("neck"), mid, "annotated")
    if part == "head":
        _require(skeleton, "head", "neck")
        head = skeleton.xy("head")
        axis = head - skeleton.xy("neck")
        if np.linalg.norm(axis) < 1e-9:
            raise GeometryUnavailable("head: head and neck coincide")
        labels = part_labels("head")
        top = ray_boundary(mask, labels, head, axis)
        bottom = ray_boundary(mask, labels, head, -axis)
        if top is None or bottom is None:
            raise GeometryUnavailable(f"{skeleton.image_id}: head keypoint outside the head mask")
        return _geometry(part, top, bottom, "extended")
    if part not in ENCLOSING:
        raise ValueError(f"{part!r} has no straight geometry")
    k1n, k2n = ENCLOSING[part]
    _require(skeleton, k1n, k2n)
    k1, k2 = skeleton.xy(k1n), skeleton.xy(k2n)
    if part.endswith("_hand"):
        if np.linalg.norm(k2 - k1) < 1e-9:
            raise GeometryUnavailable(f"{part}: wrist and hand coincide")
        tip = ray_boundary(mask, part_labels(part), k2, k2 - k1)
        if tip is None:
            raise GeometryUnavailable(f"{skeleton.image_id}: hand keypoint outside the {part} mask")
        return _geometry(part, k1, tip, "extended")
    return _geometry(part, k1, k2, "annotated")


def _junction_ends(geom: PartGeometry) -> tuple[float, ...]:
    """Values of ``p`` whose axis point is a keypoint shared with another part."""
    if geom.part == "head":
        return ()
    if geom.source == "extended":  # hands: the wrist only
        return (1.0,)
    return (0.0, 1.0)


def _off_seam(mask: BodyPartMask, geom: PartGeometry, k_i: np.ndarray, p: float) -> np.ndarray:
    """Move an on-part ``k_i`` off a label seam at a junction.

    Right at a junction the cross line can run along the pixel staircase
    between two parts and end early on the neighbour's pixels. Within
    ``length / 48`` of a junction keypoint such a section is replaced by the
    one at that distance, which clears the staircase.
    """
    step = 1.0 / 48.0
    ends = [e for e in _junction_ends(geom) if abs(p - e) < step]
    if not ends:
        return k_i
    own, near = part_labels(geom.part), neighbor_labels(geom.part)
    n = geom.v_e.normal
    pair = coherent_intersections(mask, own, LineQuery(k_i, n))
    if not any(label_at(mask, c + 1e-4 * v) in near for c, v in ((pair.c_left, n), (pair.c_right, -n))):
        return k_i
    shifted = geom.at(ends[0] - step if ends[0] == 1.0 else step)
    return shifted if in_labels(mask, own, shifted) else k_i


def _junction_origin(mask: BodyPartMask, geom: PartGeometry, k_i: np.ndarray, p: float) -> np.ndarray:
    """Point on the part's own pixels standing in for ``k_i``.

    ``k_i`` is used as is when it sits on the part. When it sits on a
    neighbouring part (an enclosing keypoint at a junction), the origin is
    moved along the axis toward the part centre until it reaches the part's
    own pixels; anything else is a generation failure.
    """
    own = part_labels(geom.part)
    if not in_raster(mask, k_i):
        raise GenerationFailed(f"{geom.part}: axis point {k_i} outside the raster")
    if in_labels(mask, own, k_i):
        return _off_seam(mask, geom, k_i, p)
    if label_at(mask, k_i) not in neighbor_labels(geom.part):
        raise GenerationFailed(f"{geom.part}: axis point {k_i} not on the part mask")
    centre = geom.at(0.5)
    gap = float(np.linalg.norm(centre - k_i))
    if gap < 1e-9:
        raise GenerationFailed(f"{geom.part}: part centre not on the part mask")
    d = (centre - k_i) / gap
    run = ray_entry(mask, own, k_i, d, min(gap, _JUNCTION_REACH * geom.length))
    if run is not None:
        # step in past the entry edge by half a grid spacing (or half the run)
        t_in, t_out = run
        return k_i + (t_in + min(0.5 * (t_out - t_in), geom.length / 48.0)) * d
    raise GenerationFailed(f"{geom.part}: no part pixels near the junction at {k_i}")


def straight_construction(geom: PartGeometry, mask: BodyPartMask, p: float, max_gap: int = 0) -> Construction:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    k_i = geom.at(p)
    # at a junction the origin slides along the axis onto the part, so the
    # cross line stays perpendicular to v_e and keeps its ends on the mask
    origin = _junction_origin(mask, geom, k_i, p)
    n = geom.v_e.normal
    pair = coherent_intersections(mask, part_labels(geom.part), LineQuery(origin, n), max_gap=max_gap)
    if not pair.valid:
        raise GenerationFailed(f"{geom.part}: no coherent run at p={p}")
    return Construction(origin, n, pair.c_left, pair.c_right, Side.LEFT)


def straight_point(geom: PartGeometry, mask: BodyPartMask, p: float, q: float, side: Side) -> np.ndarray:
    """``q`` of the way from ``k_i`` to the mask boundary on ``side`` of ``v_e``."""
    return straight_construction(geom, mask, p).point(q, Side(side))


def head_angle_construction(skeleton: Skeleton, mask: BodyPartMask, alpha: float) -> Construction:
    _require(skeleton, "head", "neck")
    head = skeleton.xy("head")
    axis = head - skeleton.xy("neck")
    if np.linalg.norm(axis) < 1e-9:
        raise GeometryUnavailable("head: head and neck coincide")
    labels = part_labels("head")
    if not in_raster(mask, head) or not in_labels(mask, labels, head):
        raise GenerationFailed(f"{skeleton.image_id}: head keypoint outside the head mask")
    d = rotate_ccw(unit(axis), alpha)
    c_pos = ray_boundary(mask, labels, head, d)
    c_neg = ray_boundary(mask, labels, head, -d)
    return Construction(head, d, c_pos, c_neg, angle_side(alpha))


def head_angle_point(skeleton: Skeleton, mask: BodyPartMask, alpha: float, q: float) -> np.ndarray:
    """Head point at angle ``alpha`` (counter-clockwise from neck->head) and thickness ``q``.

    The line through the head keypoint is the same for ``alpha`` and
    ``alpha + pi``; the boundary point in the rotated direction is used,
    which is ``c_r`` for ``alpha`` in [0, pi) and ``c_l`` for [pi, 2 pi).
    """
    if not 0.0 <= alpha < TWO_PI:
        raise ValueError(f"alpha must lie in [0, 2pi), got {alpha}")
    return head_angle_construction(skeleton, mask, alpha).point(q, angle_side(alpha))


def bending_angle(skeleton: Skeleton, joint: str) -> float:
    """Angle at the joint between the segments to the proximal and distal keypoints."""
    _, _, prox, jn, dist = JOINTS[joint]
    _require(skeleton, prox, jn, dist)
    j = skeleton.xy(jn)
    a = skeleton.xy(prox) - j
    b = skeleton.xy(dist) - j
    if np.linalg.norm(a) < 1e-9 or np.linalg.norm(b) < 1e-9:
        raise GeometryUnavailable(f"{joint}: zero-length limb segment")
    return math.atan2(abs(cross(a, b)), float(np.dot(a, b)))


def _oriented_normal(d, toward) -> np.ndarray:
    n = left_normal(d)
    return n if float(np.dot(n, toward)) >= 0 else -n


def anchor_point(skeleton: Skeleton, mask: BodyPartMask, joint: str) -> BentJointContext:
    """Inner-bend anchor of an elbow or knee and the sweep range of the rotating line."""
    upper_part, lower_part, prox, jn, dist = JOINTS[joint]
    beta = bending_angle(skeleton, joint)
    if beta < 1e-9:
        raise GenerationFailed(f"{joint}: fully folded joint")
    j, pp, dp = skeleton.xy(jn), skeleton.xy(prox), skeleton.xy(dist)
    upper = _geometry(upper_part, pp, j, "annotated")
    lower = _geometry(lower_part, j, dp, "annotated")
    labels = part_labels(joint)
    if not in_raster(mask, j) or not in_labels(mask, labels, j):
        raise GenerationFailed(f"{joint}: joint keypoint not on the limb mask")

    bis = unit(pp - j) + unit(dp - j)
    straight = np.linalg.norm(bis) < _STRAIGHT_EPS
    if straight:
        bis = upper.v_e.normal
    else:
        bis = unit(bis)
    pair = coherent_intersections(mask, labels, LineQuery(j, bis))
    if not pair.valid:
        raise GenerationFailed(f"{joint}: bisector does not hit the limb mask")
    anchor = pair.c_left  # end in +bis: inside the bend
    if straight and np.linalg.norm(pair.c_right - j) < np.linalg.norm(pair.c_left - j) - 1e-9:
        anchor = pair.c_right

    toward = j - anchor
    if np.linalg.norm(toward) < 1e-9:
        toward = -bis
    start = _oriented_normal(upper.v_e.direction, toward)
    end = _oriented_normal(lower.v_e.direction, toward)
    side = side_of(upper.v_e, anchor)
    if side is Side.ON:
        side = Side.LEFT
    return BentJointContext(joint, beta, anchor, start, end, upper, lower, side)


def _axis_hit(l_a: LineQuery, geom: PartGeometry):
    """``(t, p)`` where ``l_a.at(t)`` meets the part axis, or ``None`` when parallel."""
    hit = line_intersection(l_a, geom.v_e)
    if hit is None:
        return None
    t, u = hit
    return t, 1.0 - u / geom.length


@dataclass(frozen=True)
class BentConstruction(Construction):
    part: str = ""  # part whose axis carries k_i
    p: float = 0.0  # longitudinal fraction of k_i on that part


def bent_construction(ctx: BentJointContext, mask: BodyPartMask, s: float) -> BentConstruction:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    d = ctx.direction(s)
    l_a = LineQuery(ctx.anchor, d)
    # k_i is where the ray from the anchor first crosses the limb's central
    # polyline (upper axis then lower axis)
    hits = []
    for g in (ctx.upper, ctx.lower):
        h = _axis_hit(l_a, g)
        if h is not None and h[0] >= 0.0:
            hits.append((h[0], h[1], g))
    inside = [h for h in hits if 0.0 <= h[1] <= 1.0]
    if inside:
        t, p, g = min(inside, key=lambda h: h[0])
    elif hits:
        # off both segments: clamp to the nearer segment end and project
        _, p, g = min(hits, key=lambda h: min(abs(h[1]), abs(h[1] - 1.0)))
        p = min(max(p, 0.0), 1.0)
        t = max(float(np.dot(g.at(p) - ctx.anchor, d)), 0.0)
    else:
        raise GenerationFailed(f"{ctx.joint}: rotating line misses both axes")
    k_i = l_a.at(t)
    # the outer boundary is searched from k_i: at a concave inner corner the
    # ray can clip background right next to the anchor
    labels = part_labels(ctx.joint)
    k_o = ray_boundary(mask, labels, k_i, d) if in_raster(mask, k_i) else None
    if k_o is None:
        k_o = ray_boundary(mask, labels, ctx.anchor, d)
    if k_o is None:
        raise GenerationFailed(f"{ctx.joint}: anchor off the limb mask")
    return BentConstruction(k_i, -d, ctx.anchor, k_o, ctx.anchor_side, g.part, float(p))


def bent_point(ctx: BentJointContext, mask: BodyPartMask, s: float, q: float, inner: bool) -> np.ndarray:
    """Point on the bent joint: ``q`` of the way from ``k_i`` to the anchor (inner) or to ``k_o``."""
    c = bent_construction(ctx, mask, s)
    return q * (c.c_pos if inner else c.c_neg) + (1.0 - q) * c.origin


def _union_section(geom: PartGeometry, mask: BodyPartMask, p: float, labels) -> Construction:
    k_i = geom.at(p)
    if not in_raster(mask, k_i):
        raise GenerationFailed(f"{geom.part}: axis point {k_i} outside the raster")
    pair = coherent_intersections(mask, labels, LineQuery(k_i, geom.v_e.normal))
    if not pair.valid:
        raise GenerationFailed(f"{geom.part}: axis point {k_i} not on the limb mask")
    return Construction(k_i, geom.v_e.normal, pair.c_left, pair.c_right, Side.LEFT)


def detect_collapse(skeleton: Skeleton, mask: BodyPartMask, joint: str, reach: float = 0.25) -> bool:
    """Whether left/right boundary assignment swaps between the upper and lower part.

    Cross sections are taken on each part at ``reach`` of its length from
    the joint, over the merged upper and lower labels. Boundary points with
    the same side label should be joinable without the two joining segments
    crossing; crossing segments mean the left boundary of one part
    continues as the right boundary of the other.
    """
    upper_part, lower_part, prox, jn, dist = JOINTS[joint]
    _require(skeleton, prox, jn, dist)
    upper = _geometry(upper_part, skeleton.xy(prox), skeleton.xy(jn), "annotated")
    lower = _geometry(lower_part, skeleton.xy(jn), skeleton.xy(dist), "annotated")
    labels = part_labels(joint)
    cu = _union_section(upper, mask, reach, labels)
    cl = _union_section(lower, mask, 1.0 - reach, labels)
    return segments_cross(cu.c_pos, cl.c_pos, cu.c_neg, cl.c_neg)


def sample_query(part: str, rng: np.random.Generator, head_strategy: HeadStrategy | str = HeadStrategy.EXTENSION) -> KeypointQuery:
    """Uniform random query; draws p, q, side, then alpha (head angle only)."""
    p = float(rng.random())
    q = float(rng.random())
    side = Side.LEFT if rng.random() < 0.5 else Side.RIGHT
    if part == "head" and HeadStrategy(head_strategy) is HeadStrategy.ANGLE:
        alpha = float(rng.random()) * TWO_PI
        if alpha >= TWO_PI:
            alpha = 0.0
        return KeypointQuery.head_angle(alpha, q)
    return KeypointQuery(part, p, q, side)


class Generator:
    """Ground-truth generator bound to one skeleton and mask.

    Part geometry and cross-line constructions are cached, so repeated
    queries at the same longitudinal position are cheap.
    """

    def __init__(self, skeleton: Skeleton, mask: BodyPartMask, max_gap: int = 0):
        self.skeleton = skeleton
        self.mask = mask
        self.max_gap = max_gap
        self._geoms: dict[str, PartGeometry | Exception] = {}
        self._joints: dict[str, BentJointContext | Exception] = {}
        self._constructions: dict[tuple, Construction | Exception] = {}

    def geometry(self, part: str) -> PartGeometry:
        if part not in self._geoms:
            try:
                self._geoms[part] = part_geometry(self.skeleton, self.mask, part)
            except (GeometryUnavailable, GenerationFailed) as exc:
                self._geoms[part] = exc
        g = self._geoms[part]
        if isinstance(g, Exception):
            raise g
        return g

    def joint(self, joint: str) -> BentJointContext:
        if joint not in self._joints:
            try:
                self._joints[joint] = anchor_point(self.skeleton, self.mask, joint)
            except (GeometryUnavailable, GenerationFailed) as exc:
                self._joints[joint] = exc
        c = self._joints[joint]
        if isinstance(c, Exception):
            raise c
        return c

    def check_part(self, part: str, head_strategy: HeadStrategy | str = HeadStrategy.EXTENSION) -> None:
        """Raise :class:`GeometryUnavailable` (or :class:`GenerationFailed`) if ``part`` cannot be generated."""
        if part in JOINTS:
            self.joint(part)
            return
        if part == "head" and HeadStrategy(head_strategy) is HeadStrategy.ANGLE:
            _require(self.skeleton, "head", "neck")
            if not in_labels(self.mask, part_labels("head"), self.skeleton.xy("head")):
                raise GeometryUnavailable("head keypoint outside the head mask")
            return
        self.geometry(part)

    def construction(self, query: KeypointQuery) -> Construction:
        key = (query.part, query.p, query.alpha)
        if key not in self._constructions:
            try:
                self._constructions[key] = self._build(query)
            except (GeometryUnavailable, GenerationFailed) as exc:
                self._constructions[key] = exc
        c = self._constructions[key]
        if isinstance(c, Exception):
            raise c
        return c

    def _build(self, query: KeypointQuery) -> Construction:
        try:
            if query.part in JOINTS:
                return bent_construction(self.joint(query.part), self.mask, query.p)
            if query.alpha is not None:
                return head_angle_construction(self.skeleton, self.mask, query.alpha)
            return straight_construction(self.geometry(query.part), self.mask, query.p, self.max_gap)
        except BoundsError as exc:
            raise GenerationFailed(str(exc)) from exc

    def point(self, query: KeypointQuery) -> np.ndarray:
        return self.construction(query).point(query.q, query.side)


def generate(query: KeypointQuery, skeleton: Skeleton, mask: BodyPartMask) -> np.ndarray:
    return Generator(skeleton, mask).point(query)


def is_generated_point_valid(mask: BodyPartMask, part: str, point) -> bool:
    """Post-hoc check: the point's pixel carries the part's labels or a neighbour's."""
    allowed = set(part_labels(part))
    if part in JOINTS:
        upper, lower = JOINTS[part][:2]
        allowed |= neighbor_labels(upper) | neighbor_labels(lower)
    else:
        allowed |= neighbor_labels(part)
    return in_raster(mask, point) and label_at(mask, point) in allowed

