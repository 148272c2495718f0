"""Machine encodings of keypoint queries.

Two encodings are provided:

* vectors: a 20-entry keypoint vector (canonical keypoint order), a
  3-entry thickness vector ``[left, centre, right]`` and a 1-entry angle
  vector; all three are convex combinations, so each sums to 1 except the
  angle vector;
* normalized pose: the query is realised on a fixed T-pose template and
  the resulting point is expressed in the template's unit square.

Joint patterns. Elbow and knee queries are parameterised by the rotation
fraction ``s`` of the anchor line. They use the three keypoints of the
limb: proximal ``1/8 + (1 - s)/4``, joint ``1/2``, distal ``1/8 + s/4``.
The joint entry keeps these vectors apart from every two-keypoint part.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset_io import BodyPartMask, Skeleton, load_annotations, load_mask, save_annotations, save_mask
from .errors import DecodeError, EncodeError, GenerationFailed, GeometryUnavailable
from .gt_generation import Generator
from .parts import (
    ENCLOSING,
    JOINTS,
    KEYPOINT_INDEX,
    KEYPOINT_NAMES,
    LABEL_CODE,
    TWO_PI,
    HeadStrategy,
    KeypointQuery,
    Side,
)
from .synthetic import make_skeleton, paint_box

KEYPOINT_DIM = len(KEYPOINT_NAMES)
THICKNESS_DIM = 3
ANGLE_DIM = 1
VECTOR_DIM = KEYPOINT_DIM + THICKNESS_DIM + ANGLE_DIM
NORMPOSE_DIM = 2

_TOL = 1e-9
_JOINT_BASE = 0.125
_JOINT_SPAN = 0.25


@dataclass(frozen=True)
class VectorEncoding:
    keypoint_vec: np.ndarray
    thickness_vec: np.ndarray
    angle_vec: np.ndarray

    def __post_init__(self):
        for name, dim in (("keypoint_vec", KEYPOINT_DIM), ("thickness_vec", THICKNESS_DIM), ("angle_vec", ANGLE_DIM)):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (dim,):
                raise DecodeError(f"{name} must have shape ({dim},), got {a.shape}")
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.keypoint_vec, self.thickness_vec, self.angle_vec])

    @classmethod
    def from_array(cls, a) -> "VectorEncoding":
        a = np.asarray(a, dtype=float)
        if a.shape != (VECTOR_DIM,):
            raise DecodeError(f"vector encoding must have {VECTOR_DIM} entries, got shape {a.shape}")
        k, t = KEYPOINT_DIM, KEYPOINT_DIM + THICKNESS_DIM
        return cls(a[:k], a[k:t], a[t:])


def _thickness(q: float, side: Side) -> list[float]:
    if side is Side.LEFT:
        return [q, 1.0 - q, 0.0]
    return [0.0, 1.0 - q, q]


def _keypoint_weights(query: KeypointQuery) -> dict[str, float]:
    part, p = query.part, query.p
    if part == "head":
        if query.alpha is not None:
            return {"head": 1.0}
        return {"head": p, "neck": 1.0 - p}
    if part == "torso":
        return {"neck": p, "l_hip": 0.5 * (1.0 - p), "r_hip": 0.5 * (1.0 - p)}
    if part in JOINTS:
        _, _, prox, jn, dist = JOINTS[part]
        return {prox: _JOINT_BASE + _JOINT_SPAN * (1.0 - p), jn: 0.5, dist: _JOINT_BASE + _JOINT_SPAN * p}
    k1, k2 = ENCLOSING[part]
    return {k1: p, k2: 1.0 - p}


def encode_vector(query: KeypointQuery) -> VectorEncoding:
    """Keypoint, thickness and angle vectors of ``query``."""
    if not isinstance(query, KeypointQuery):
        raise EncodeError(f"expected a KeypointQuery, got {type(query).__name__}")
    for name in ("p", "q"):
        v = getattr(query, name)
        if not (math.isfinite(v) and 0.0 <= v <= 1.0):
            raise EncodeError(f"{name}={v} outside [0, 1]")
    kv = np.zeros(KEYPOINT_DIM)
    for name, w in _keypoint_weights(query).items():
        kv[KEYPOINT_INDEX[name]] = w
    if query.alpha is not None:
        if not 0.0 <= query.alpha < TWO_PI:
            raise EncodeError(f"alpha={query.alpha} outside [0, 2pi)")
        tv = [0.0, 1.0 - query.q, query.q]
        av = [query.alpha / TWO_PI]
    else:
        tv = _thickness(query.q, query.side)
        av = [0.0]
    return VectorEncoding(kv, np.array(tv), np.array(av))


def _candidates(kv: np.ndarray, angle: float) -> list[tuple[str, HeadStrategy | None, float]]:
    """(part, head strategy, longitudinal value) whose support admits ``kv``."""
    support = {KEYPOINT_NAMES[i] for i in np.flatnonzero(np.abs(kv) > _TOL)}
    w = lambda name: float(kv[KEYPOINT_INDEX[name]])  # noqa: E731
    out: list[tuple[str, HeadStrategy | None, float]] = []
    if support <= {"head", "neck"}:
        out.append(("head", HeadStrategy.EXTENSION, w("head")))
        if support == {"head"}:
            out.append(("head", HeadStrategy.ANGLE, 0.0))
    if support <= {"neck", "l_hip", "r_hip"}:
        out.append(("torso", None, w("neck")))
    for part, (k1, _k2) in ENCLOSING.items():
        if support <= set(ENCLOSING[part]):
            out.append((part, None, w(k1)))
    for part, (_, _, prox, jn, dist) in JOINTS.items():
        if support <= {prox, jn, dist}:
            out.append((part, None, (w(dist) - _JOINT_BASE) / _JOINT_SPAN))
    return out


def _close(a: VectorEncoding, b: VectorEncoding) -> bool:
    return bool(np.all(np.abs(a.as_array() - b.as_array()) <= _TOL))


def decode_vector(
    enc: VectorEncoding,
    part: str | None = None,
    head_strategy: HeadStrategy | str | None = None,
) -> KeypointQuery:
    """Inverse of :func:`encode_vector`.

    Some one-hot keypoint vectors are shared by two parts (the elbow
    keypoint alone is both the end of the upper arm and the start of the
    forearm, and so on). Those raise :class:`DecodeError` unless ``part``
    (and, for the head, ``head_strategy``) names the intended reading.
    """
    if isinstance(enc, np.ndarray):
        enc = VectorEncoding.from_array(enc)
    kv, tv, av = enc.keypoint_vec, enc.thickness_vec, enc.angle_vec
    if not (np.all(np.isfinite(enc.as_array()))):
        raise DecodeError("non-finite entries")
    if np.any(kv < -_TOL) or np.any(kv > 1 + _TOL) or np.any(tv < -_TOL) or np.any(tv > 1 + _TOL):
        raise DecodeError("entries outside [0, 1]")
    if not np.any(kv > _TOL):
        raise DecodeError("keypoint vector is all zero")
    if abs(kv.sum() - 1.0) > _TOL or abs(tv.sum() - 1.0) > _TOL:
        raise DecodeError("keypoint and thickness vectors must each sum to 1")
    if tv[0] > _TOL and tv[2] > _TOL:
        raise DecodeError("thickness vector sets both side slots")
    angle = float(av[0])
    if not 0.0 <= angle < 1.0:
        raise DecodeError(f"angle entry {angle} outside [0, 1)")

    strategy = HeadStrategy(head_strategy) if head_strategy is not None else None
    found: list[KeypointQuery] = []
    for cand_part, cand_strategy, value in _candidates(kv, angle):
        if part is not None and cand_part != part:
            continue
        if strategy is not None and cand_part == "head" and cand_strategy is not strategy:
            continue
        try:
            if cand_strategy is HeadStrategy.ANGLE:
                alpha = angle * TWO_PI
                if alpha >= TWO_PI:
                    continue
                query = KeypointQuery.head_angle(alpha, float(tv[2]))
            else:
                if angle != 0.0:
                    continue
                value = min(max(value, 0.0), 1.0)
                if tv[2] > _TOL:
                    query = KeypointQuery(cand_part, value, float(tv[2]), Side.RIGHT)
                else:
                    query = KeypointQuery(cand_part, value, float(tv[0]), Side.LEFT)
        except ValueError:
            continue
        if _close(encode_vector(query), enc):
            found.append(query)
    if not found:
        raise DecodeError("entries match no part's encoding pattern")
    if len(found) > 1:
        names = sorted({f"{q.part}/{q.head_strategy.value}" if q.head_strategy else q.part for q in found})
        raise DecodeError(f"ambiguous encoding, matches {names}; pass part= to disambiguate")
    return found[0]


# ---------------------------------------------------------------------------
# normalized pose

TEMPLATE_VERSION = 1
TEMPLATE_SIZE = (320, 320)  # width, height

# Inclusive pixel boxes (x0, x1, y0, y1) of the parts on the image-right,
# i.e. the athlete's left; the right side is the mirror image x -> W-1-x.
TEMPLATE_BOXES: dict[str, tuple[int, int, int, int]] = {
    "head": (144, 175, 8, 55),
    "torso": (128, 191, 58, 170),
    "l_upper_arm": (192, 239, 62, 79),
    "l_forearm": (240, 291, 62, 79),
    "l_hand": (276, 291, 80, 116),
    "l_thigh": (162, 189, 171, 250),
    "l_lower_leg": (164, 187, 251, 300),
    "l_foot": (164, 215, 301, 314),
}
TEMPLATE_POINTS: dict[str, tuple[float, float]] = {
    "head": (159.5, 31.5),
    "neck": (159.5, 62.0),
    "l_shoulder": (192.0, 70.5),
    "l_elbow": (240.0, 70.5),
    "l_wrist": (283.5, 70.5),
    "l_hand": (283.5, 98.0),
    "l_hip": (175.5, 168.0),
    "l_knee": (175.5, 250.0),
    "l_ankle": (175.5, 298.0),
    "l_heel": (166.0, 307.5),
    "l_toe_tip": (213.0, 307.5),
}


@dataclass(frozen=True)
class NormPoseTemplate:
    """T-pose template: mask, skeleton and the head strategy-agnostic generator."""

    mask: BodyPartMask
    skeleton: Skeleton
    version: int = TEMPLATE_VERSION

    def __post_init__(self):
        object.__setattr__(self, "_generator", Generator(self.skeleton, self.mask))

    @property
    def generator(self) -> Generator:
        return self._generator  # type: ignore[attr-defined]

    def normalize(self, point) -> tuple[float, float]:
        return (float(point[0]) + 0.5) / self.mask.width, (float(point[1]) + 0.5) / self.mask.height

    def denormalize(self, x: float, y: float) -> np.ndarray:
        return np.array([x * self.mask.width - 0.5, y * self.mask.height - 0.5])


@dataclass(frozen=True)
class NormPoseEncoding:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


def build_normpose_template() -> NormPoseTemplate:
    """The shipped procedural T-pose (version :data:`TEMPLATE_VERSION`).

    Arms are horizontal, hands hang down and feet point outward so that
    every part shows its largest extent.
    """
    width, height = TEMPLATE_SIZE
    raster = np.zeros((height, width), dtype=np.uint8)
    mirror = lambda name: "r_" + name[2:] if name.startswith("l_") else name  # noqa: E731
    for name, (x0, x1, y0, y1) in TEMPLATE_BOXES.items():
        paint_box(raster, x0, x1, y0, y1, LABEL_CODE[name])
        if name.startswith("l_"):
            paint_box(raster, width - 1 - x1, width - 1 - x0, y0, y1, LABEL_CODE[mirror(name)])
    points = {}
    for name, (x, y) in TEMPLATE_POINTS.items():
        points[name] = (x, y)
        if name.startswith("l_"):
            points[mirror(name)] = (width - 1 - x, y)
    skeleton = make_skeleton(points, image_id="normpose_template", athlete_id="template")
    return NormPoseTemplate(BodyPartMask(raster), skeleton)


def encode_normpose(query: KeypointQuery, template: NormPoseTemplate) -> NormPoseEncoding:
    """Realise ``query`` on the template and return its normalized coordinates."""
    try:
        point = template.generator.point(query)
    except (GenerationFailed, GeometryUnavailable) as exc:
        raise EncodeError(f"cannot realise {query} on the template: {exc}") from exc
    x, y = template.normalize(point)
    return NormPoseEncoding(min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0))


def save_normpose_template(template: NormPoseTemplate, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_mask(template.mask, d / "template_mask.png")
    save_annotations([template.skeleton], d / "template_skeleton.csv", header=f"# normpose template v{template.version}\n")


def load_normpose_template(directory: str | os.PathLike) -> NormPoseTemplate:
    d = Path(directory)
    (skeleton,) = load_annotations(d / "template_skeleton.csv")
    return NormPoseTemplate(load_mask(d / "template_mask.png"), skeleton)


def encode(query: KeypointQuery, kind: str, template: NormPoseTemplate | None = None) -> np.ndarray:
    """Flat float array of ``query`` under encoding ``kind`` (``vector`` or ``normpose``)."""
    if kind == "vector":
        return encode_vector(query).as_array()
    if kind == "normpose":
        if template is None:
            raise EncodeError("normpose encoding needs a template")
        return encode_normpose(query, template).as_array()
    raise EncodeError(f"unknown encoding kind {kind!r}")

