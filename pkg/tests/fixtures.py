"""Small synthetic masks shared by several test modules."""

import math

import numpy as np

from arbkp.dataset_io import BodyPartMask
from arbkp.parts import LABEL_CODE
from arbkp.synthetic import make_skeleton, paint_box, paint_capsule, paint_disk

UA, FA = LABEL_CODE["l_upper_arm"], LABEL_CODE["l_forearm"]


def straight_arm(shape=(110, 100)):
    """Vertical arm: upper arm x in [40, 60], y in [10, 50]; forearm below to y = 90."""
    raster = np.zeros(shape, np.uint8)
    paint_box(raster, 40, 60, 10, 50, UA)
    paint_box(raster, 40, 60, 51, 90, FA)
    sk = make_skeleton({"l_shoulder": (50, 10), "l_elbow": (50, 50), "l_wrist": (50, 90)}, "straight")
    return sk, BodyPartMask(raster)


def l_arm():
    """Right-angle bend: vertical upper bar, horizontal forearm bar; inner corner at (60.5, 39.5)."""
    raster = np.zeros((80, 130), np.uint8)
    paint_box(raster, 40, 60, 0, 60, UA)
    paint_box(raster, 40, 120, 40, 60, FA)
    sk = make_skeleton({"l_shoulder": (50, 2), "l_elbow": (50, 50), "l_wrist": (115, 50)}, "l_shape")
    return sk, BodyPartMask(raster)


def bent_arm(beta, rotation=0.0, length=50.0, radius=9.0, size=240):
    """Capsule arm with bending angle ``beta`` at the elbow, centred in the raster."""
    raster = np.zeros((size, size), np.uint8)
    e = np.array([size / 2, size / 2])
    up = np.array([math.sin(rotation), -math.cos(rotation)])
    s = e + length * up
    c, sn = math.cos(beta), math.sin(beta)
    down = np.array([c * up[0] - sn * up[1], sn * up[0] + c * up[1]])
    w = e + length * down
    paint_capsule(raster, s, e, radius, UA)
    paint_capsule(raster, e, w, radius * 0.85, FA)
    sk = make_skeleton({"l_shoulder": tuple(s), "l_elbow": tuple(e), "l_wrist": tuple(w)}, f"bent{beta:.3f}")
    return sk, BodyPartMask(raster)


def split_arm(rotation=0.0, length=50.0, radius=9.0, size=240):
    """Fully extended capsule arm whose label boundary is the perpendicular through the elbow."""
    raster = np.zeros((size, size), np.uint8)
    e = np.array([size / 2, size / 2])
    up = np.array([math.sin(rotation), -math.cos(rotation)])
    s, w = e + length * up, e - length * up
    paint_capsule(raster, s, w, radius, FA)
    rows, cols = np.indices(raster.shape)
    upper = (cols - e[0]) * up[0] + (rows - e[1]) * up[1] >= 0
    raster[upper & (raster == FA)] = UA
    sk = make_skeleton({"l_shoulder": tuple(s), "l_elbow": tuple(e), "l_wrist": tuple(w)}, f"split{rotation:.3f}")
    return sk, BodyPartMask(raster)


def fold_back():
    """Forearm folded back over the upper arm, as when it points toward the camera."""
    raster = np.zeros((70, 100), np.uint8)
    paint_box(raster, 40, 60, 10, 50, UA)
    paint_capsule(raster, (50, 50), (56, 22), 8, FA)
    sk = make_skeleton({"l_shoulder": (50, 10), "l_elbow": (50, 50), "l_wrist": (56, 22)}, "fold_back")
    return sk, BodyPartMask(raster)


def circle_head(radius=20.0, centre=(60.0, 50.0), neck=(60.0, 85.0)):
    raster = np.zeros((110, 120), np.uint8)
    paint_disk(raster, centre, radius, LABEL_CODE["head"])
    paint_box(raster, 40, 80, 72, 105, LABEL_CODE["torso"])
    sk = make_skeleton({"head": centre, "neck": neck}, "circle")
    return sk, BodyPartMask(raster)
