"""Keypoint names, mask labels, body parts and the keypoint query type.

Everything here is shared vocabulary: the 20 annotated keypoints in their
canonical order (this order is also the index map of the keypoint vector),
the 14 segmentation labels, and the 18 evaluation parts (the 14 mask parts
plus elbows and knees).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

KEYPOINT_NAMES: tuple[str, ...] = (
    "head",
    "neck",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hand",
    "r_hand",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
    "l_heel",
    "r_heel",
    "l_toe_tip",
    "r_toe_tip",
)
KEYPOINT_INDEX = {name: i for i, name in enumerate(KEYPOINT_NAMES)}

# label code = position in this tuple; 0 is background
MASK_LABELS: tuple[str, ...] = (
    "background",
    "head",
    "torso",
    "l_upper_arm",
    "r_upper_arm",
    "l_forearm",
    "r_forearm",
    "l_hand",
    "r_hand",
    "l_thigh",
    "r_thigh",
    "l_lower_leg",
    "r_lower_leg",
    "l_foot",
    "r_foot",
)
LABEL_CODE = {name: code for code, name in enumerate(MASK_LABELS)}
MASK_PARTS: tuple[str, ...] = MASK_LABELS[1:]
MAX_LABEL = len(MASK_LABELS) - 1

JOINT_PARTS: tuple[str, ...] = ("l_elbow", "r_elbow", "l_knee", "r_knee")

EVAL_PARTS: tuple[str, ...] = (
    "head",
    "torso",
    "l_upper_arm",
    "r_upper_arm",
    "l_elbow",
    "r_elbow",
    "l_forearm",
    "r_forearm",
    "l_hand",
    "r_hand",
    "l_thigh",
    "r_thigh",
    "l_knee",
    "r_knee",
    "l_lower_leg",
    "r_lower_leg",
    "l_foot",
    "r_foot",
)

# Column names of the metric tables: left and right instances are merged.
PART_TYPES: tuple[str, ...] = (
    "head",
    "torso",
    "upper_arm",
    "elbow",
    "forearm",
    "hand",
    "thigh",
    "knee",
    "lower_leg",
    "foot",
)


def part_type(part: str) -> str:
    """``"l_forearm"`` -> ``"forearm"``; unsided parts map to themselves."""
    if part[:2] in ("l_", "r_"):
        return part[2:]
    return part


def _sided(prefix: str, name: str) -> str:
    return f"{prefix}_{name}"


# (k1, k2) enclosing keypoints of the two-keypoint parts; the longitudinal
# fraction p weights k1: k_i = p * k1 + (1 - p) * k2.
ENCLOSING: dict[str, tuple[str, str]] = {}
for _s in ("l", "r"):
    ENCLOSING[_sided(_s, "upper_arm")] = (_sided(_s, "shoulder"), _sided(_s, "elbow"))
    ENCLOSING[_sided(_s, "forearm")] = (_sided(_s, "elbow"), _sided(_s, "wrist"))
    ENCLOSING[_sided(_s, "hand")] = (_sided(_s, "wrist"), _sided(_s, "hand"))
    ENCLOSING[_sided(_s, "thigh")] = (_sided(_s, "hip"), _sided(_s, "knee"))
    ENCLOSING[_sided(_s, "lower_leg")] = (_sided(_s, "knee"), _sided(_s, "ankle"))
    ENCLOSING[_sided(_s, "foot")] = (_sided(_s, "heel"), _sided(_s, "toe_tip"))

# joint -> (upper part, lower part, proximal keypoint, joint keypoint, distal keypoint)
JOINTS: dict[str, tuple[str, str, str, str, str]] = {}
for _s in ("l", "r"):
    JOINTS[_sided(_s, "elbow")] = (
        _sided(_s, "upper_arm"),
        _sided(_s, "forearm"),
        _sided(_s, "shoulder"),
        _sided(_s, "elbow"),
        _sided(_s, "wrist"),
    )
    JOINTS[_sided(_s, "knee")] = (
        _sided(_s, "thigh"),
        _sided(_s, "lower_leg"),
        _sided(_s, "hip"),
        _sided(_s, "knee"),
        _sided(_s, "ankle"),
    )

# Parts whose pixels may legitimately cover a part's enclosing keypoint.
NEIGHBORS: dict[str, tuple[str, ...]] = {
    "head": ("torso",),
    "torso": ("head", "l_upper_arm", "r_upper_arm", "l_thigh", "r_thigh"),
}
for _s in ("l", "r"):
    NEIGHBORS[_sided(_s, "upper_arm")] = ("torso", _sided(_s, "forearm"))
    NEIGHBORS[_sided(_s, "forearm")] = (_sided(_s, "upper_arm"), _sided(_s, "hand"))
    NEIGHBORS[_sided(_s, "hand")] = (_sided(_s, "forearm"),)
    NEIGHBORS[_sided(_s, "thigh")] = ("torso", _sided(_s, "lower_leg"))
    NEIGHBORS[_sided(_s, "lower_leg")] = (_sided(_s, "thigh"), _sided(_s, "foot"))
    NEIGHBORS[_sided(_s, "foot")] = (_sided(_s, "lower_leg"),)


def part_labels(part: str) -> frozenset[int]:
    """Mask label codes a generator may walk through for ``part``.

    Joints use the union of the upper and lower part: the boundary between
    the two is not well defined on automatically generated masks.
    """
    if part in JOINTS:
        upper, lower = JOINTS[part][:2]
        return frozenset((LABEL_CODE[upper], LABEL_CODE[lower]))
    return frozenset((LABEL_CODE[part],))


def neighbor_labels(part: str) -> frozenset[int]:
    return frozenset(LABEL_CODE[n] for n in NEIGHBORS.get(part, ()))


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    ON = "on"

    def opposite(self) -> "Side":
        if self is Side.LEFT:
            return Side.RIGHT
        if self is Side.RIGHT:
            return Side.LEFT
        return self


class HeadStrategy(str, Enum):
    EXTENSION = "extension"
    ANGLE = "angle"


TWO_PI = 2.0 * math.pi


def angle_side(alpha: float) -> Side:
    """Side associated with a head angle: c_r on [0, pi), c_l on [pi, 2 pi)."""
    return Side.RIGHT if alpha < math.pi else Side.LEFT


@dataclass(frozen=True)
class KeypointQuery:
    """Human-readable description of one arbitrary keypoint.

    ``p`` is the longitudinal fraction (the rotation fraction ``s`` for
    elbows and knees), ``q`` the thickness fraction. Head queries with an
    ``alpha`` use the angle strategy; for those ``p`` is unused and must be
    0, and ``side`` is implied by the angle.
    """

    part: str
    p: float
    q: float
    side: Side = Side.LEFT
    alpha: float | None = None

    def __post_init__(self):
        if self.part not in EVAL_PARTS:
            raise ValueError(f"unknown part {self.part!r}")
        if not isinstance(self.side, Side):
            object.__setattr__(self, "side", Side(self.side))
        if self.side is Side.ON:
            raise ValueError("query side must be left or right")
        if not (0.0 <= self.q <= 1.0) or not (0.0 <= self.p <= 1.0):
            raise ValueError(f"p and q must lie in [0, 1], got p={self.p}, q={self.q}")
        if self.alpha is not None:
            if self.part != "head":
                raise ValueError("alpha is only defined for head queries")
            if not (0.0 <= self.alpha < TWO_PI):
                raise ValueError(f"alpha must lie in [0, 2pi), got {self.alpha}")
            if self.p != 0.0:
                raise ValueError("head-angle queries carry p = 0")
            if self.side is not angle_side(self.alpha):
                raise ValueError("head-angle side must follow the angle")

    @property
    def head_strategy(self) -> HeadStrategy | None:
        if self.part != "head":
            return None
        return HeadStrategy.ANGLE if self.alpha is not None else HeadStrategy.EXTENSION

    @property
    def is_joint(self) -> bool:
        return self.part in JOINTS

    def canonical(self) -> "KeypointQuery":
        """Same query with the irrelevant side of a central point pinned to LEFT."""
        if self.q == 0.0 and self.alpha is None and self.side is not Side.LEFT:
            return replace(self, side=Side.LEFT)
        return self

    @classmethod
    def head_angle(cls, alpha: float, q: float) -> "KeypointQuery":
        return cls("head", 0.0, q, angle_side(alpha), alpha)
