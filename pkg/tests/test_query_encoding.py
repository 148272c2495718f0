import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbkp.errors import DecodeError, EncodeError
from arbkp.gt_generation import sample_query
from arbkp.mask_geometry import label_at
from arbkp.parts import (
    EVAL_PARTS,
    JOINTS,
    KEYPOINT_INDEX,
    LABEL_CODE,
    MASK_PARTS,
    TWO_PI,
    HeadStrategy,
    KeypointQuery,
    Side,
    part_labels,
)
from arbkp.query_encoding import (
    KEYPOINT_DIM,
    VECTOR_DIM,
    VectorEncoding,
    build_normpose_template,
    decode_vector,
    encode,
    encode_normpose,
    encode_vector,
    load_normpose_template,
    save_normpose_template,
)


@pytest.fixture(scope="module")
def template():
    return build_normpose_template()


def one_hot(name):
    v = np.zeros(KEYPOINT_DIM)
    v[KEYPOINT_INDEX[name]] = 1.0
    return v


def test_upper_arm_endpoint_is_one_hot():
    enc = encode_vector(KeypointQuery("l_upper_arm", 1.0, 0.0))
    assert np.array_equal(enc.keypoint_vec, one_hot("l_shoulder"))
    assert enc.thickness_vec.tolist() == [0.0, 1.0, 0.0]
    assert enc.angle_vec.tolist() == [0.0]


def test_torso_hip_split():
    enc = encode_vector(KeypointQuery("torso", 0.4, 0.2, Side.RIGHT))
    kv = enc.keypoint_vec
    assert kv[KEYPOINT_INDEX["neck"]] == pytest.approx(0.4)
    assert kv[KEYPOINT_INDEX["l_hip"]] == pytest.approx(0.3)
    assert kv[KEYPOINT_INDEX["r_hip"]] == pytest.approx(0.3)
    assert enc.thickness_vec.tolist() == pytest.approx([0.0, 0.8, 0.2])


def test_head_angle_vectors():
    enc = encode_vector(KeypointQuery.head_angle(math.pi, 0.5))
    assert enc.angle_vec.tolist() == [0.5]
    assert enc.thickness_vec.tolist() == [0.0, 0.5, 0.5]
    assert np.array_equal(enc.keypoint_vec, one_hot("head"))  # neck zeroed


def test_head_angle_thickness_ignores_side():
    for alpha in (0.2, 4.0):
        assert encode_vector(KeypointQuery.head_angle(alpha, 0.3)).thickness_vec.tolist() == pytest.approx([0, 0.7, 0.3])


def test_hand_uses_wrist_and_hand_entries():
    kv = encode_vector(KeypointQuery("r_hand", 0.3, 0.0)).keypoint_vec
    assert kv[KEYPOINT_INDEX["r_wrist"]] == pytest.approx(0.3)
    assert kv[KEYPOINT_INDEX["r_hand"]] == pytest.approx(0.7)


def test_thickness_slots():
    assert encode_vector(KeypointQuery("l_thigh", 0.5, 0.25, Side.LEFT)).thickness_vec.tolist() == [0.25, 0.75, 0.0]
    assert encode_vector(KeypointQuery("l_thigh", 0.5, 0.25, Side.RIGHT)).thickness_vec.tolist() == [0.0, 0.75, 0.25]


def test_joint_pattern_uses_three_keypoints():
    kv = encode_vector(KeypointQuery("r_knee", 0.25, 0.0)).keypoint_vec
    assert set(np.flatnonzero(kv)) == {KEYPOINT_INDEX[k] for k in ("r_hip", "r_knee", "r_ankle")}
    assert kv[KEYPOINT_INDEX["r_knee"]] == 0.5
    assert kv.sum() == pytest.approx(1.0)


def _corrupt(query, **fields):
    for k, v in fields.items():
        object.__setattr__(query, k, v)  # bypass validation to reach the encoder's own checks
    return query


@pytest.mark.parametrize("fields", [{"p": 1.5}, {"q": -0.1}, {"p": float("nan")}])
def test_encode_rejects_out_of_range(fields):
    with pytest.raises(EncodeError):
        encode_vector(_corrupt(KeypointQuery("torso", 0.5, 0.0), **fields))


def test_encode_rejects_bad_alpha():
    with pytest.raises(EncodeError):
        encode_vector(_corrupt(KeypointQuery.head_angle(1.0, 0.5), alpha=7.0))


def test_query_constructor_validates():
    with pytest.raises(ValueError):
        KeypointQuery("torso", 1.5, 0.0)


def test_encode_rejects_non_query():
    with pytest.raises(EncodeError):
        encode_vector(("torso", 0.5, 0.0))


def test_decode_all_zero():
    with pytest.raises(DecodeError):
        decode_vector(VectorEncoding(np.zeros(20), np.array([0, 1.0, 0]), np.zeros(1)))


def test_decode_unequal_hips():
    kv = np.zeros(20)
    kv[KEYPOINT_INDEX["neck"]] = 0.4
    kv[KEYPOINT_INDEX["l_hip"]] = 0.4
    kv[KEYPOINT_INDEX["r_hip"]] = 0.2
    with pytest.raises(DecodeError):
        decode_vector(VectorEncoding(kv, np.array([0, 1.0, 0]), np.zeros(1)))


@pytest.mark.parametrize(
    "kv_items, tv",
    [
        ({"l_shoulder": 0.5, "r_knee": 0.5}, [0, 1, 0]),  # no part spans these
        ({"l_shoulder": 0.5, "l_elbow": 0.6}, [0, 1, 0]),  # does not sum to 1
        ({"l_shoulder": 0.5, "l_elbow": 0.5}, [0.2, 0.6, 0.2]),  # both sides set
    ],
)
def test_decode_inconsistent(kv_items, tv):
    kv = np.zeros(20)
    for k, v in kv_items.items():
        kv[KEYPOINT_INDEX[k]] = v
    with pytest.raises(DecodeError):
        decode_vector(VectorEncoding(kv, np.array(tv, float), np.zeros(1)))


def test_decode_wrong_length():
    with pytest.raises(DecodeError):
        decode_vector(np.zeros(VECTOR_DIM + 1))


def test_shared_endpoint_needs_hint():
    enc = encode_vector(KeypointQuery("l_forearm", 1.0, 0.5))  # elbow alone
    with pytest.raises(DecodeError, match="ambiguous"):
        decode_vector(enc)
    assert decode_vector(enc, part="l_forearm") == KeypointQuery("l_forearm", 1.0, 0.5)
    assert decode_vector(enc, part="l_upper_arm") == KeypointQuery("l_upper_arm", 0.0, 0.5)


def test_head_one_hot_needs_strategy():
    enc = encode_vector(KeypointQuery.head_angle(0.0, 0.4))
    with pytest.raises(DecodeError):
        decode_vector(enc)
    assert decode_vector(enc, head_strategy="angle") == KeypointQuery.head_angle(0.0, 0.4)


def _random_query(rng, i):
    part = EVAL_PARTS[i % len(EVAL_PARTS)]
    strategy = HeadStrategy.ANGLE if part == "head" and i % 36 < 18 else HeadStrategy.EXTENSION
    return sample_query(part, rng, strategy)


def test_roundtrip_random():
    rng = np.random.default_rng(42)
    for i in range(3000):
        q = _random_query(rng, i)
        d = decode_vector(encode_vector(q))
        assert d.part == q.part and d.side is q.side
        assert d.p == pytest.approx(q.p, abs=1e-9) and d.q == pytest.approx(q.q, abs=1e-9)
        if q.alpha is None:
            assert d.alpha is None
        else:
            assert d.alpha == pytest.approx(q.alpha, abs=1e-9)


def test_roundtrip_exact_for_straight_parts():
    rng = np.random.default_rng(3)
    for i in range(2000):
        q = _random_query(rng, i)
        if q.part in JOINTS:
            continue
        assert decode_vector(encode_vector(q)) == q


probability = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(EVAL_PARTS), probability, probability, st.sampled_from([Side.LEFT, Side.RIGHT]))
def test_vectors_sum_to_one(part, p, q, side):
    enc = encode_vector(KeypointQuery(part, p, q, side))
    assert enc.keypoint_vec.sum() == pytest.approx(1.0, abs=1e-12)
    assert enc.thickness_vec.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(enc.keypoint_vec >= 0) and np.all(enc.keypoint_vec <= 1)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(EVAL_PARTS), probability, probability, probability, probability, st.sampled_from([Side.LEFT, Side.RIGHT]))
def test_vector_injective_per_part_and_side(part, p1, q1, p2, q2, side):
    if (p1, q1) == (p2, q2):
        return
    a = encode_vector(KeypointQuery(part, p1, q1, side)).as_array()
    b = encode_vector(KeypointQuery(part, p2, q2, side)).as_array()
    assert not np.array_equal(a, b)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, TWO_PI, exclude_max=True), st.floats(0.0, TWO_PI, exclude_max=True), probability)
def test_head_angle_injective_in_alpha(a1, a2, q):
    if a1 == a2 or q == 0.0:
        return
    e1 = encode_vector(KeypointQuery.head_angle(a1, q)).as_array()
    e2 = encode_vector(KeypointQuery.head_angle(a2, q)).as_array()
    assert not np.array_equal(e1, e2)


# ---------------------------------------------------------------------------
# normalized pose


def test_template_labels_large_enough(template):
    counts = np.bincount(template.mask.raster.ravel(), minlength=15)
    for name in MASK_PARTS:
        assert counts[LABEL_CODE[name]] >= 100, name


def test_template_mirror_symmetric(template):
    r = template.mask.raster
    flipped = r[:, ::-1]
    swap = np.arange(256, dtype=np.uint8)
    for name in MASK_PARTS:
        if name.startswith("l_"):
            a, b = LABEL_CODE[name], LABEL_CODE["r_" + name[2:]]
            swap[a], swap[b] = b, a
    assert np.array_equal(swap[flipped], r)
    w = template.mask.width
    for name, kp in template.skeleton.keypoints.items():
        other = "r_" + name[2:] if name.startswith("l_") else "l_" + name[2:] if name.startswith("r_") else name
        mate = template.skeleton.xy(other)
        assert abs(w - 1 - kp.x - mate[0]) <= 1 and abs(kp.y - mate[1]) <= 1


def test_template_keypoints_inside_parts(template):
    for name, kp in template.skeleton.keypoints.items():
        assert kp.visible, name
        assert label_at(template.mask, kp.xy) != 0, name


def test_template_deterministic(template):
    again = build_normpose_template()
    assert np.array_equal(again.mask.raster, template.mask.raster)


def test_template_roundtrip(template, tmp_path):
    save_normpose_template(template, tmp_path)
    loaded = load_normpose_template(tmp_path)
    assert np.array_equal(loaded.mask.raster, template.mask.raster)
    q = KeypointQuery("l_forearm", 0.3, 0.7, Side.RIGHT)
    assert encode_normpose(q, loaded) == encode_normpose(q, template)


@pytest.mark.parametrize("part", ["l_upper_arm", "r_forearm", "l_thigh", "r_lower_leg", "torso", "l_foot"])
def test_normpose_midpoint(template, part):
    got = encode_normpose(KeypointQuery(part, 0.5, 0.0), template)
    geom = template.generator.geometry(part)
    mid = 0.5 * (geom.k1 + geom.k2)
    assert (got.x, got.y) == pytest.approx(template.normalize(mid), abs=1e-12)


def _grid(part, strategy=HeadStrategy.EXTENSION):
    from arbkp.evaluation import grid_queries

    return grid_queries(part, strategy)


@pytest.mark.parametrize("strategy", list(HeadStrategy))
def test_normpose_in_unit_square_and_on_part(template, strategy):
    for part in EVAL_PARTS:
        for q in _grid(part, strategy):
            e = encode_normpose(q, template)
            assert 0.0 <= e.x <= 1.0 and 0.0 <= e.y <= 1.0
            pt = template.denormalize(e.x, e.y)
            assert label_at(template.mask, pt) > 0, q
            # the point sits on its own part unless it is an endpoint on a junction
            if 0.0 < q.p < 1.0 and q.alpha is None and q.part not in JOINTS:
                assert label_at(template.mask, pt) in part_labels(q.part), q


def _distinct_part_entries(template, part):
    """Grid entries of ``part`` that name distinct template points.

    Skipped: joints (the straight template limb makes every rotation
    fraction share one line), q=0 duplicates of one axis point, and
    entries whose cross line was moved off their axis point at a junction.
    The hands hang down from the forearm ends, so the first stretch of the
    hand axis runs over forearm pixels and those cross lines all slide onto
    the hand's first row; limb ends on a label seam slide a short way in.
    """
    seen = set()
    for q in _grid(part):
        key = (q.p, 0.0) if q.q == 0.0 else (q.p, q.q, q.side)
        if key in seen:
            continue
        seen.add(key)
        if part != "head" and not np.array_equal(
            template.generator.construction(q).origin, template.generator.geometry(part).at(q.p)
        ):
            continue
        yield q


def test_normpose_few_junction_entries(template):
    for part in EVAL_PARTS:
        if part in JOINTS:
            continue
        kept = {q.p for q in _distinct_part_entries(template, part)}
        assert len(kept) >= 20, (part, len(kept))


def test_normpose_injective_per_part(template):
    w, h = template.mask.width, template.mask.height
    for part in EVAL_PARTS:
        if part in JOINTS:
            continue
        pts = np.array([[e.x * w, e.y * h] for e in (encode_normpose(q, template) for q in _distinct_part_entries(template, part))])
        dist = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        np.fill_diagonal(dist, np.inf)
        assert dist.min() >= 1.0, part


def test_normpose_parts_disjoint(template):
    w, h = template.mask.width, template.mask.height
    owner = {}
    for part in EVAL_PARTS:
        if part in JOINTS:
            continue
        for q in _distinct_part_entries(template, part):
            if q.p in (0.0, 1.0):
                continue  # shared enclosing keypoints
            e = encode_normpose(q, template)
            pix = (round(e.x * w - 0.5), round(e.y * h - 0.5))
            assert owner.setdefault(pix, part) == part, (pix, part, owner[pix])


def test_encode_dispatch(template):
    q = KeypointQuery("l_hand", 0.5, 0.5)
    assert encode(q, "vector").shape == (VECTOR_DIM,)
    assert encode(q, "normpose", template).shape == (2,)
    with pytest.raises(EncodeError):
        encode(q, "normpose")
    with pytest.raises(EncodeError):
        encode(q, "bogus")
