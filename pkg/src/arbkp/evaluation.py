"""Evaluation grid and the PCK / PCT metrics.

The grid places 25 equally spaced longitudinal positions (both ends
included) on each of the 18 evaluation parts. At every position there is
one central point (q = 0) and points at q = 0.5 and q = 1 on each side,
125 per part and 2250 per fully visible athlete. For the head under the
angle strategy the 25 positions are angles ``j * pi / 25``; the left-side
points of a line use the opposite angle ``alpha + pi``, so the 50 rays are
evenly spaced over the full circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset_io import BodyPartMask, PredictionRecord, Skeleton
from .errors import GenerationFailed, GeometryUnavailable
from .gt_generation import Generator
from .parts import EVAL_PARTS, PART_TYPES, HeadStrategy, KeypointQuery, Side, part_type

GRID_POSITIONS = 25
GRID_THICKNESS = (0.0, 0.5, 1.0)
DEFAULT_PCK_THRESHOLDS = (0.1, 0.05)
DEFAULT_PCT_THRESHOLD = 0.2
PCK_REFERENCE = ("l_shoulder", "r_hip")


@dataclass(frozen=True)
class GridEntry:
    query: KeypointQuery
    gt: np.ndarray


@dataclass
class EvalGrid:
    image_id: str
    head_strategy: HeadStrategy
    entries: list[GridEntry] = field(default_factory=list)
    skipped_parts: dict[str, str] = field(default_factory=dict)
    failed_queries: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def counts(self) -> dict[str, int]:
        out = {part: 0 for part in EVAL_PARTS}
        for e in self.entries:
            out[e.query.part] += 1
        return out

    def records(self) -> list[PredictionRecord]:
        """Ground truth in prediction-file form."""
        return [PredictionRecord(self.image_id, e.query, float(e.gt[0]), float(e.gt[1])) for e in self.entries]


def grid_queries(part: str, head_strategy: HeadStrategy | str = HeadStrategy.EXTENSION, n: int = GRID_POSITIONS) -> list[KeypointQuery]:
    """The ``5 n`` grid queries of one part, in grid order."""
    out = []
    angle = part == "head" and HeadStrategy(head_strategy) is HeadStrategy.ANGLE
    for j in range(n):
        if angle:
            alpha = j * math.pi / n
            out.append(KeypointQuery.head_angle(alpha, 0.0))
            for q in GRID_THICKNESS[1:]:
                out.append(KeypointQuery.head_angle(alpha + math.pi, q))
                out.append(KeypointQuery.head_angle(alpha, q))
            continue
        p = j / (n - 1)
        out.append(KeypointQuery(part, p, 0.0, Side.LEFT))
        for q in GRID_THICKNESS[1:]:
            out.append(KeypointQuery(part, p, q, Side.LEFT))
            out.append(KeypointQuery(part, p, q, Side.RIGHT))
    return out


def make_grid(
    skeleton: Skeleton,
    mask: BodyPartMask,
    head_strategy: HeadStrategy | str = HeadStrategy.EXTENSION,
    max_gap: int = 0,
) -> EvalGrid:
    """Ground-truth grid for one image; unavailable parts are skipped, never fatal."""
    strategy = HeadStrategy(head_strategy)
    gen = Generator(skeleton, mask, max_gap)
    grid = EvalGrid(skeleton.image_id, strategy)
    for part in EVAL_PARTS:
        try:
            gen.check_part(part, strategy)
        except (GeometryUnavailable, GenerationFailed) as exc:
            grid.skipped_parts[part] = str(exc)
            continue
        for query in grid_queries(part, strategy):
            try:
                c = gen.construction(query)
            except (GeometryUnavailable, GenerationFailed):
                grid.failed_queries += 1
                continue
            grid.entries.append(GridEntry(query, c.point(query.q, query.side)))
    return grid


# ---------------------------------------------------------------------------
# metrics


def _lookup(preds) -> Mapping[KeypointQuery, np.ndarray]:
    if isinstance(preds, Mapping):
        return {q.canonical(): np.asarray(v, float) for q, v in preds.items()}
    return {r.query.canonical(): r.xy for r in preds}


def pck_reference(skeleton: Skeleton) -> float | None:
    """Left-shoulder to right-hip distance, or ``None`` if either is invisible."""
    if not skeleton.visible(*PCK_REFERENCE):
        return None
    return float(np.linalg.norm(skeleton.xy(PCK_REFERENCE[0]) - skeleton.xy(PCK_REFERENCE[1])))


def pck(preds, grid: EvalGrid, skeleton: Skeleton, t: float) -> float | None:
    """Share of predicted grid entries within ``t`` times the reference distance.

    Entries without a prediction are skipped, as in :func:`report`. ``None``
    when the reference keypoints are invisible or nothing was predicted.
    """
    ref = pck_reference(skeleton)
    if ref is None:
        return None
    lut = _lookup(preds)
    dists = [float(np.linalg.norm(lut[k] - e.gt)) for e in grid.entries if (k := e.query.canonical()) in lut]
    if not dists:
        return None
    return sum(d <= t * ref for d in dists) / len(dists)


def thickness_of(pred, query: KeypointQuery, skeleton: Skeleton, mask: BodyPartMask, generator: Generator | None = None) -> tuple[float, Side]:
    """Recovered thickness and side of ``pred`` on the query's construction line.

    Raises :class:`GenerationFailed` or :class:`GeometryUnavailable` when the
    line cannot be built.
    """
    gen = generator or Generator(skeleton, mask)
    return gen.construction(query).thickness(pred, query.side)


def thickness_error(q_hat: float, side_hat: Side, query: KeypointQuery) -> float:
    if side_hat is query.side or query.q == 0.0:
        return abs(q_hat - query.q)
    return q_hat + query.q


def pct(preds, grid: EvalGrid, skeleton: Skeleton, mask: BodyPartMask, t: float = DEFAULT_PCT_THRESHOLD) -> float | None:
    rep = report(preds, grid, skeleton, mask, (), t)
    return rep.pct


@dataclass
class Counts:
    evaluated: int = 0
    skipped: int = 0
    pct_correct: int = 0
    pck_evaluated: int = 0
    pck_correct: dict[float, int] = field(default_factory=dict)

    def __add__(self, other: "Counts") -> "Counts":
        keys = set(self.pck_correct) | set(other.pck_correct)
        return Counts(
            self.evaluated + other.evaluated,
            self.skipped + other.skipped,
            self.pct_correct + other.pct_correct,
            self.pck_evaluated + other.pck_evaluated,
            {k: self.pck_correct.get(k, 0) + other.pck_correct.get(k, 0) for k in sorted(keys)},
        )

    @property
    def pct(self) -> float:
        return self.pct_correct / self.evaluated if self.evaluated else 0.0

    def pck(self, t: float) -> float:
        return self.pck_correct.get(t, 0) / self.pck_evaluated if self.pck_evaluated else 0.0


@dataclass
class MetricReport:
    """Count-based metric summary; reports of disjoint image sets add up."""

    pck_thresholds: tuple[float, ...]
    pct_threshold: float
    total: Counts = field(default_factory=Counts)
    per_part: dict[str, Counts] = field(default_factory=lambda: {p: Counts() for p in PART_TYPES})
    images: int = 0
    pck_excluded_images: int = 0

    def __add__(self, other: "MetricReport") -> "MetricReport":
        if (self.pck_thresholds, self.pct_threshold) != (other.pck_thresholds, other.pct_threshold):
            raise ValueError("cannot merge reports with different thresholds")
        return MetricReport(
            self.pck_thresholds,
            self.pct_threshold,
            self.total + other.total,
            {p: self.per_part[p] + other.per_part[p] for p in PART_TYPES},
            self.images + other.images,
            self.pck_excluded_images + other.pck_excluded_images,
        )

    @property
    def grid_size(self) -> int:
        return self.total.evaluated + self.total.skipped

    @property
    def pct(self) -> float:
        return self.total.pct

    def pck(self, t: float) -> float:
        return self.total.pck(t)

    def rows(self) -> list[list[str]]:
        head = ["part", "evaluated", "skipped"] + [f"pck@{t:g}" for t in self.pck_thresholds] + [f"pct@{self.pct_threshold:g}"]
        out = [head]
        for name, c in list(self.per_part.items()) + [("all", self.total)]:
            out.append(
                [name, str(c.evaluated), str(c.skipped)]
                + [f"{c.pck(t):.6f}" for t in self.pck_thresholds]
                + [f"{c.pct:.6f}"]
            )
        return out

    def table(self) -> str:
        rows = self.rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        if self.pck_excluded_images:
            lines.append(f"{self.pck_excluded_images} image(s) excluded from PCK (reference keypoints invisible)")
        return "\n".join(lines)


def report(
    preds,
    grid: EvalGrid,
    skeleton: Skeleton,
    mask: BodyPartMask,
    pck_thresholds: Sequence[float] = DEFAULT_PCK_THRESHOLDS,
    pct_threshold: float = DEFAULT_PCT_THRESHOLD,
) -> MetricReport:
    """Metrics of one image. Missing predictions and unbuildable lines count as skipped."""
    thresholds = tuple(pck_thresholds)
    rep = MetricReport(thresholds, pct_threshold, images=1)
    lut = _lookup(preds)
    ref = pck_reference(skeleton)
    if ref is None:
        rep.pck_excluded_images = 1
    gen = Generator(skeleton, mask)
    for e in grid.entries:
        c = Counts(pck_correct={t: 0 for t in thresholds})
        pred = lut.get(e.query.canonical())
        try:
            if pred is None:
                raise KeyError(e.query)
            q_hat, side_hat = thickness_of(pred, e.query, skeleton, mask, gen)
        except (KeyError, GenerationFailed, GeometryUnavailable):
            c.skipped = 1
        else:
            c.evaluated = 1
            c.pct_correct = int(thickness_error(q_hat, side_hat, e.query) <= pct_threshold)
            if ref is not None:
                c.pck_evaluated = 1
                dist = float(np.linalg.norm(pred - e.gt))
                c.pck_correct = {t: int(dist <= t * ref) for t in thresholds}
        rep.total = rep.total + c
        key = part_type(e.query.part)
        rep.per_part[key] = rep.per_part[key] + c
    return rep


def empty_report(pck_thresholds: Iterable[float] = DEFAULT_PCK_THRESHOLDS, pct_threshold: float = DEFAULT_PCT_THRESHOLD) -> MetricReport:
    return MetricReport(tuple(pck_thresholds), pct_threshold)
