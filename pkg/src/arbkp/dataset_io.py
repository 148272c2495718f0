"""Annotation, mask and prediction files.

Annotations are one CSV per split with header
``image_id,athlete_id,slow_motion`` followed by ``<name>_x,<name>_y,<name>_v``
for the 20 keypoints in :data:`~arbkp.parts.KEYPOINT_NAMES` order. Masks are
8-bit single-channel PNGs holding label codes 0..14. Predictions (and query
files, which share the layout) are CSV ``image_id,part,p,q,side,alpha,x,y``.

Lines starting with ``#`` are provenance headers and are skipped on read.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import (
    DuplicateError,
    MaskFormatError,
    PredictionParseError,
    SchemaError,
    SplitError,
)
from .parts import EVAL_PARTS, KEYPOINT_NAMES, MAX_LABEL, KeypointQuery, Side

ANNOTATION_PREFIX = ("image_id", "athlete_id", "slow_motion")
ANNOTATION_HEADER = ANNOTATION_PREFIX + tuple(
    f"{name}_{suffix}" for name in KEYPOINT_NAMES for suffix in ("x", "y", "v")
)
PREDICTION_HEADER = ("image_id", "part", "p", "q", "side", "alpha", "x", "y")
SPLIT_NAMES = ("train", "test", "val")


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    visible: bool

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Skeleton:
    """The 20 annotated keypoints of one athlete in one image.

    Invisible keypoints carry (0, 0) and ``visible=False``; geometry code
    must check the flag via :meth:`require`.
    """

    image_id: str
    athlete_id: str
    keypoints: dict[str, Keypoint]
    is_slow_motion: bool = False

    def __post_init__(self):
        names = set(self.keypoints)
        if names != set(KEYPOINT_NAMES):
            missing = sorted(set(KEYPOINT_NAMES) - names)
            extra = sorted(names - set(KEYPOINT_NAMES))
            raise SchemaError(f"keypoint set mismatch: missing={missing} unknown={extra}")

    def visible(self, *names: str) -> bool:
        return all(self.keypoints[n].visible for n in names)

    def xy(self, name: str) -> np.ndarray:
        return self.keypoints[name].xy

    def check_bounds(self, width: int, height: int) -> None:
        """Raise if a visible keypoint lies outside a ``width`` x ``height`` image."""
        for name, kp in self.keypoints.items():
            if kp.visible and not (-0.5 <= kp.x <= width - 0.5 and -0.5 <= kp.y <= height - 0.5):
                raise SchemaError(
                    f"{self.image_id}: visible keypoint {name} at ({kp.x}, {kp.y}) "
                    f"outside {width}x{height}"
                )

    def transformed(self, fn) -> "Skeleton":
        """Apply ``fn(x, y) -> (x, y)`` to every visible keypoint."""
        kps = {}
        for name, kp in self.keypoints.items():
            if kp.visible:
                x, y = fn(kp.x, kp.y)
                kps[name] = Keypoint(float(x), float(y), True)
            else:
                kps[name] = kp
        return Skeleton(self.image_id, self.athlete_id, kps, self.is_slow_motion)


@dataclass(frozen=True)
class BodyPartMask:
    """Label raster indexed ``raster[y, x]``; 0 is background."""

    raster: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.raster)
        if r.ndim != 2:
            raise MaskFormatError(f"mask raster must be 2D, got shape {r.shape}")
        if r.size and (r.min() < 0 or r.max() > MAX_LABEL):
            raise MaskFormatError(f"label codes must lie in 0..{MAX_LABEL}")
        r = r.astype(np.uint8)
        r.setflags(write=False)
        object.__setattr__(self, "raster", r)

    @property
    def height(self) -> int:
        return self.raster.shape[0]

    @property
    def width(self) -> int:
        return self.raster.shape[1]

    @property
    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.raster))


@dataclass(frozen=True)
class PredictionRecord:
    image_id: str
    query: KeypointQuery
    x: float
    y: float

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


# --------------------------------------------------------------------------
# annotations


def _parse_flag(value: str, what: str, line: int) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no", ""):
        return False
    raise SchemaError(f"line {line}: cannot parse {what} flag {value!r}")


def _data_lines(handle: Iterable[str]):
    """Yield ``(line_number, text)`` skipping ``#`` provenance lines."""
    for number, text in enumerate(handle, start=1):
        if text.startswith("#"):
            continue
        yield number, text


def _read_rows(path: Path):
    with open(path, newline="") as handle:
        lines = list(_data_lines(handle))
    if not lines:
        return None, []
    numbers = [n for n, _ in lines]
    rows = list(csv.reader(text for _, text in lines))
    return rows[0], list(zip(numbers[1:], rows[1:]))


def _check_annotation_header(header: Sequence[str]) -> None:
    header = [h.strip() for h in header]
    if tuple(header[:3]) != ANNOTATION_PREFIX:
        raise SchemaError(f"annotation header must start with {','.join(ANNOTATION_PREFIX)}")
    names = []
    for col in header[3:]:
        name, _, suffix = col.rpartition("_")
        if suffix not in ("x", "y", "v") or name not in KEYPOINT_NAMES:
            raise SchemaError(f"unknown keypoint column {col!r}")
        names.append(name)
    if tuple(header) != ANNOTATION_HEADER:
        missing = sorted(set(KEYPOINT_NAMES) - set(names))
        if missing:
            raise SchemaError(f"missing keypoint columns for {missing}")
        raise SchemaError("keypoint columns out of canonical order")


def load_annotations(path: str | os.PathLike) -> list[Skeleton]:
    """Read one annotation CSV into skeletons, one per row."""
    path = Path(path)
    header, rows = _read_rows(path)
    if header is None:
        raise SchemaError(f"{path}: empty annotation file")
    _check_annotation_header(header)

    skeletons = []
    seen: dict[str, int] = {}
    for line, row in rows:
        if not row:
            continue
        if len(row) != len(ANNOTATION_HEADER):
            raise SchemaError(f"{path}: line {line}: expected {len(ANNOTATION_HEADER)} fields, got {len(row)}")
        image_id = row[0]
        if image_id in seen:
            raise DuplicateError(f"{path}: image_id {image_id!r} on lines {seen[image_id]} and {line}")
        seen[image_id] = line
        kps = {}
        for i, name in enumerate(KEYPOINT_NAMES):
            xs, ys, vs = row[3 + 3 * i: 6 + 3 * i]
            try:
                x, y = float(xs), float(ys)
            except ValueError as exc:
                raise SchemaError(f"{path}: line {line}: bad coordinate for {name}") from exc
            visible = _parse_flag(vs, f"{name} visibility", line)
            if not visible:
                x = y = 0.0
            elif not (math.isfinite(x) and math.isfinite(y)):
                raise SchemaError(f"{path}: line {line}: non-finite coordinate for {name}")
            kps[name] = Keypoint(x, y, visible)
        skeletons.append(
            Skeleton(image_id, row[1], kps, _parse_flag(row[2], "slow_motion", line))
        )
    return skeletons


def _fmt(value: float) -> str:
    return repr(float(value))


def format_annotations(skeletons: Iterable[Skeleton]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ANNOTATION_HEADER)
    for sk in skeletons:
        row = [sk.image_id, sk.athlete_id, int(sk.is_slow_motion)]
        for name in KEYPOINT_NAMES:
            kp = sk.keypoints[name]
            if kp.visible:
                row += [_fmt(kp.x), _fmt(kp.y), 1]
            else:
                row += ["0.0", "0.0", 0]
        writer.writerow(row)
    return out.getvalue()


def save_annotations(skeletons: Iterable[Skeleton], path: str | os.PathLike, header: str = "") -> None:
    write_text_atomic(path, header + format_annotations(skeletons))


def load_dataset_annotations(root: str | os.PathLike) -> dict[str, list[Skeleton]]:
    """Load a split directory (``train.csv``, ``test.csv``, ``val.csv``) or a single CSV.

    A single file is returned under the split name ``"all"``. Image ids must
    be unique across splits.
    """
    root = Path(root)
    if root.is_file():
        return {"all": load_annotations(root)}
    if not root.is_dir():
        raise FileNotFoundError(root)
    splits = {}
    for name in SPLIT_NAMES:
        f = root / f"{name}.csv"
        if f.exists():
            splits[name] = load_annotations(f)
    if not splits:
        raise FileNotFoundError(f"{root}: no train.csv/test.csv/val.csv found")
    seen: dict[str, str] = {}
    for split, sks in splits.items():
        for sk in sks:
            if sk.image_id in seen:
                raise DuplicateError(f"image_id {sk.image_id!r} in splits {seen[sk.image_id]} and {split}")
            seen[sk.image_id] = split
    return splits


# --------------------------------------------------------------------------
# masks


def load_mask(path: str | os.PathLike) -> BodyPartMask:
    """Read an 8-bit single-channel label PNG."""
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            raise MaskFormatError(f"{path}: expected single-channel 8-bit PNG, got mode {img.mode}")
        raster = np.array(img)
    if raster.ndim != 2:
        raise MaskFormatError(f"{path}: expected a single channel")
    if raster.size and raster.max() > MAX_LABEL:
        raise MaskFormatError(f"{path}: label code {int(raster.max())} exceeds {MAX_LABEL}")
    return BodyPartMask(raster)


def save_mask(mask: BodyPartMask, path: str | os.PathLike) -> None:
    buf = io.BytesIO()
    Image.fromarray(mask.raster, mode="L").save(buf, format="PNG")
    write_bytes_atomic(path, buf.getvalue())


def mask_path(mask_dir: str | os.PathLike, image_id: str) -> Path:
    return Path(mask_dir) / f"{image_id}.png"


# --------------------------------------------------------------------------
# splits


def split_by_athlete(
    skeletons: Sequence[Skeleton],
    fractions: Sequence[float] = (0.75, 0.2, 0.05),
    seed: int = 0,
) -> tuple[list[Skeleton], list[Skeleton], list[Skeleton]]:
    """Split images into (train, test, val) so that no athlete spans two subsets.

    Athletes are visited largest-first (ties broken by a seeded shuffle) and
    each goes to the subset furthest below its target image count. Every
    subset with a positive fraction receives at least one athlete.
    """
    if len(fractions) != 3:
        raise SplitError("exactly three fractions are required")
    if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise SplitError(f"fractions must be non-negative and sum to 1, got {tuple(fractions)}")

    by_athlete: dict[str, list[Skeleton]] = defaultdict(list)
    for sk in skeletons:
        by_athlete[sk.athlete_id].append(sk)
    needed = sum(1 for f in fractions if f > 0)
    if len(by_athlete) < max(3, needed):
        raise SplitError(f"need at least 3 distinct athletes, got {len(by_athlete)}")

    rng = np.random.default_rng(seed)
    athletes = sorted(by_athlete)
    order = rng.permutation(len(athletes))
    athletes = [athletes[i] for i in order]
    athletes.sort(key=lambda a: -len(by_athlete[a]))  # stable: shuffle breaks ties

    total = len(skeletons)
    targets = [f * total for f in fractions]
    sizes = [0, 0, 0]
    subsets: list[list[Skeleton]] = [[], [], []]
    empty = [i for i in range(3) if fractions[i] > 0]
    remaining = len(athletes)
    for athlete in athletes:
        n = len(by_athlete[athlete])
        if empty and remaining <= len(empty):
            pool = empty
        else:
            pool = [i for i in range(3) if fractions[i] > 0]
        best = max(pool, key=lambda i: (targets[i] - sizes[i], -i))
        subsets[best].extend(by_athlete[athlete])
        sizes[best] += n
        if best in empty:
            empty.remove(best)
        remaining -= 1
    return subsets[0], subsets[1], subsets[2]


# --------------------------------------------------------------------------
# predictions / query files


def _parse_float(value: str, what: str, line: int) -> float:
    try:
        v = float(value)
    except ValueError:
        raise PredictionParseError(f"cannot parse {what} {value!r}", line) from None
    if not math.isfinite(v):
        raise PredictionParseError(f"non-finite {what}", line)
    return v


def parse_prediction_row(row: Sequence[str], line: int) -> PredictionRecord:
    if len(row) != len(PREDICTION_HEADER):
        raise PredictionParseError(f"expected {len(PREDICTION_HEADER)} fields, got {len(row)}", line)
    image_id, part, p, q, side, alpha, x, y = row
    if part not in EVAL_PARTS:
        raise PredictionParseError(f"unknown part {part!r}", line)
    try:
        side_v = Side(side)
    except ValueError:
        raise PredictionParseError(f"bad side {side!r}", line) from None
    try:
        query = KeypointQuery(
            part,
            _parse_float(p, "p", line),
            _parse_float(q, "q", line),
            side_v,
            None if alpha == "" else _parse_float(alpha, "alpha", line),
        )
    except ValueError as exc:
        raise PredictionParseError(str(exc), line) from None
    return PredictionRecord(image_id, query, _parse_float(x, "x", line), _parse_float(y, "y", line))


def load_predictions(path: str | os.PathLike) -> list[PredictionRecord]:
    records = []
    with open(path, newline="") as handle:
        lines = list(_data_lines(handle))
    if not lines:
        return records
    header_line, header_text = lines[0]
    header = next(csv.reader([header_text]))
    if tuple(h.strip() for h in header) != PREDICTION_HEADER:
        raise PredictionParseError(f"expected header {','.join(PREDICTION_HEADER)}", header_line)
    for line, text in lines[1:]:
        row = next(csv.reader([text]), None)
        if not row:
            continue
        records.append(parse_prediction_row(row, line))
    return records


def prediction_row(rec: PredictionRecord) -> list[str]:
    q = rec.query
    return [
        rec.image_id,
        q.part,
        _fmt(q.p),
        _fmt(q.q),
        q.side.value,
        "" if q.alpha is None else _fmt(q.alpha),
        _fmt(rec.x),
        _fmt(rec.y),
    ]


def format_predictions(records: Iterable[PredictionRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PREDICTION_HEADER)
    for rec in records:
        writer.writerow(prediction_row(rec))
    return out.getvalue()


def save_predictions(records: Iterable[PredictionRecord], path: str | os.PathLike, header: str = "") -> None:
    """Write records with ``repr`` floats so a reload is exact."""
    write_text_atomic(path, header + format_predictions(records))


# --------------------------------------------------------------------------
# atomic writes


def write_bytes_atomic(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))
