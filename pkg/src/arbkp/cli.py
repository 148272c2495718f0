"""``arbkp`` command line: dataset statistics, ground truth, grids, encodings, tokens, metrics, overlays.

Exit codes: 0 success, 1 usage error (bad flags, missing inputs), 2 data error.
Every output carries a provenance header (tool version, the command with
its non-output arguments, seed), so identical inputs and flags reproduce
identical bytes regardless of ``--jobs``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from . import __version__
from .dataset_io import (
    PREDICTION_HEADER,
    PredictionRecord,
    Skeleton,
    load_dataset_annotations,
    load_mask,
    load_predictions,
    mask_path,
    parse_prediction_row,
    prediction_row,
    save_annotations,
    save_mask,
    save_predictions,
    write_bytes_atomic,
    write_text_atomic,
)
from .errors import ArbkpError, ConfigError, GenerationFailed, GeometryUnavailable
from .evaluation import DEFAULT_PCK_THRESHOLDS, DEFAULT_PCT_THRESHOLD, empty_report, make_grid, report
from .gt_generation import Generator, is_generated_point_valid, sample_query
from .parts import EVAL_PARTS, HeadStrategy
from .query_encoding import (
    NORMPOSE_DIM,
    VECTOR_DIM,
    VectorEncoding,
    build_normpose_template,
    decode_vector,
    encode,
    save_normpose_template,
)
from .render import OverlaySpec, mask_preview, render_overlay
from .token_embedding import TOKENS_MAGIC, EmbedderConfig, embed_batch, init_embedder, save_embedder, write_tensors

OUTPUT_ARGS = {"out", "out_dir", "failures", "weights_out", "jobs", "config", "func"}
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def provenance(args: argparse.Namespace) -> dict:
    items = {k: v for k, v in sorted(vars(args).items()) if k not in OUTPUT_ARGS and k != "command"}
    parts = [args.command]
    for k, v in items.items():
        if v is None or v is False:
            continue
        flag = "--" + k.replace("_", "-")
        if v is True:
            parts.append(flag)
        elif isinstance(v, (list, tuple)):
            parts.append(flag + " " + " ".join(str(x) for x in v))
        else:
            parts.append(f"{flag} {v}")
    return {"tool": f"arbkp {__version__}", "command": " ".join(parts), "seed": getattr(args, "seed", None)}


def header_text(args: argparse.Namespace) -> str:
    prov = provenance(args)
    return f"# {prov['tool']}\n# command: {prov['command']}\n# seed: {prov['seed']}\n"


def _require_path(path, what: str, kind: str = "any") -> Path:
    p = Path(path)
    ok = p.exists() if kind == "any" else (p.is_dir() if kind == "dir" else p.is_file())
    if not ok:
        raise UsageError(f"{what} not found: {p}")
    return p


def load_skeletons(path) -> list[tuple[str, Skeleton]]:
    root = _require_path(path, "annotations")
    if root.is_dir() and not any(root.iterdir()):
        raise UsageError(f"annotation directory {root} is empty")
    try:
        splits = load_dataset_annotations(root)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    return [(split, sk) for split, sks in splits.items() for sk in sks]


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_image_mask(skeleton: Skeleton, masks: Path):
    path = mask_path(masks, skeleton.image_id)
    if not path.exists():
        return None
    mask = load_mask(path)
    skeleton.check_bounds(mask.width, mask.height)
    return mask


def _csv_line(row: Sequence[str]) -> str:
    out = io.StringIO()
    csv.writer(out, lineterminator="\n").writerow(row)
    return out.getvalue()


# ---------------------------------------------------------------------------
# stats


def cmd_stats(args) -> int:
    items = load_skeletons(args.annotations)
    masks = _require_path(args.masks, "mask directory", "dir") if args.masks else None
    rows = [["split", "images", "athletes", "slow_motion", "masks"]]
    splits: dict[str, list[Skeleton]] = {}
    for split, sk in items:
        splits.setdefault(split, []).append(sk)
    total_masks = 0
    for split, sks in list(splits.items()) + [("total", [sk for _, sk in items])]:
        n_masks = sum(mask_path(masks, sk.image_id).exists() for sk in sks) if masks else 0
        rows.append(
            [split, str(len(sks)), str(len({sk.athlete_id for sk in sks})), str(sum(sk.is_slow_motion for sk in sks)), str(n_masks) if masks else "-"]
        )
        if split != "total":
            total_masks += n_masks
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return 0


# ---------------------------------------------------------------------------
# gt-gen


def _gt_gen_one(task):
    index, skeleton, masks, seed, count, strategy = task
    mask = _load_image_mask(skeleton, masks)
    if mask is None:
        return [], [(skeleton.image_id, "", "mask missing")]
    rng = np.random.default_rng([seed, index])
    gen = Generator(skeleton, mask)
    rows, failures = [], []
    for _ in range(count):
        part = EVAL_PARTS[int(rng.integers(len(EVAL_PARTS)))]
        query = sample_query(part, rng, strategy)
        try:
            pt = gen.point(query)
        except (GeometryUnavailable, GenerationFailed) as exc:
            failures.append((skeleton.image_id, part, str(exc).replace("\n", " ")))
            continue
        if not is_generated_point_valid(mask, part, pt):
            failures.append((skeleton.image_id, part, "point off the part mask"))
            continue
        rows.append(PredictionRecord(skeleton.image_id, query, float(pt[0]), float(pt[1])))
    return rows, failures


def cmd_gt_gen(args) -> int:
    items = load_skeletons(args.annotations)
    masks = _require_path(args.masks, "mask directory", "dir")
    if args.count_per_image < 0:
        raise UsageError("--count-per-image must be >= 0")
    tasks = [(i, sk, masks, args.seed, args.count_per_image, args.head_strategy) for i, (_, sk) in enumerate(items)]
    results = _map(_gt_gen_one, tasks, args.jobs)
    records = [r for rows, _ in results for r in rows]
    failures = [f for _, fails in results for f in fails]
    save_predictions(records, args.out, header_text(args))
    if args.failures:
        text = header_text(args) + _csv_line(["image_id", "part", "reason"]) + "".join(_csv_line(f) for f in failures)
        write_text_atomic(args.failures, text)
    print(f"{len(records)} keypoints, {len(failures)} failures", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# grid / eval


def _grid_one(task):
    skeleton, masks, strategy = task
    mask = _load_image_mask(skeleton, masks)
    if mask is None:
        return skeleton.image_id, None, {}
    grid = make_grid(skeleton, mask, strategy)
    return skeleton.image_id, grid.records(), grid.skipped_parts


def cmd_grid(args) -> int:
    items = load_skeletons(args.annotations)
    masks = _require_path(args.masks, "mask directory", "dir")
    results = _map(_grid_one, [(sk, masks, args.head_strategy) for _, sk in items], args.jobs)
    records = []
    for image_id, recs, skipped in results:
        if recs is None:
            print(f"{image_id}: mask missing, skipped", file=sys.stderr)
            continue
        records.extend(recs)
        for part, reason in skipped.items():
            print(f"{image_id}: {part} skipped ({reason})", file=sys.stderr)
    save_predictions(records, args.out, header_text(args))
    print(f"{len(records)} grid keypoints for {len(items)} images", file=sys.stderr)
    return 0


def _eval_one(task):
    skeleton, masks, preds, strategy, pck_t, pct_t = task
    mask = _load_image_mask(skeleton, masks)
    if mask is None:
        return None, []
    grid = make_grid(skeleton, mask, strategy)
    have = {r.query.canonical() for r in preds}
    missing = [e.query for e in grid.entries if e.query.canonical() not in have]
    return report(preds, grid, skeleton, mask, pck_t, pct_t), [(skeleton.image_id, q) for q in missing]


def cmd_eval(args) -> int:
    items = load_skeletons(args.annotations)
    masks = _require_path(args.masks, "mask directory", "dir")
    preds = load_predictions(_require_path(args.predictions, "predictions", "file"))
    by_image: dict[str, list[PredictionRecord]] = {}
    for r in preds:
        by_image.setdefault(r.image_id, []).append(r)
    known = {sk.image_id for _, sk in items}
    unknown = sorted(set(by_image) - known)
    if unknown:
        print(f"warning: predictions for {len(unknown)} unknown image(s), e.g. {unknown[:3]}", file=sys.stderr)
    tasks = [(sk, masks, by_image.get(sk.image_id, []), args.head_strategy, tuple(args.pck), args.pct) for _, sk in items]
    total = empty_report(tuple(args.pck), args.pct)
    missing = []
    for rep, miss in _map(_eval_one, tasks, args.jobs):
        if rep is not None:
            total = total + rep
        missing.extend(miss)
    if missing:
        print(f"{len(missing)} grid queries without prediction:", file=sys.stderr)
        for image_id, q in missing[: args.show_missing]:
            print(f"  {image_id} {q.part} p={q.p!r} q={q.q!r} side={q.side.value} alpha={q.alpha!r}", file=sys.stderr)
        if len(missing) > args.show_missing:
            print(f"  ... {len(missing) - args.show_missing} more", file=sys.stderr)
    print(total.table())
    if args.out:
        rows = total.rows()
        write_text_atomic(args.out, header_text(args) + "".join(_csv_line(r) for r in rows))
    return 0


# ---------------------------------------------------------------------------
# encode / decode / embed

ENCODING_PREFIX = ("image_id", "part", "head_strategy", "kind", "x", "y")


def _read_queries(path) -> list[PredictionRecord]:
    return load_predictions(_require_path(path, "query file", "file"))


def cmd_encode(args) -> int:
    records = _read_queries(args.queries)
    template = build_normpose_template() if args.kind == "normpose" else None
    dim = VECTOR_DIM if args.kind == "vector" else NORMPOSE_DIM
    lines = [header_text(args), _csv_line(list(ENCODING_PREFIX) + [f"e{i}" for i in range(dim)])]
    for r in records:
        vec = encode(r.query, args.kind, template)
        strategy = r.query.head_strategy.value if r.query.head_strategy else ""
        lines.append(_csv_line([r.image_id, r.query.part, strategy, args.kind, repr(r.x), repr(r.y)] + [repr(float(v)) for v in vec]))
    write_text_atomic(args.out, "".join(lines))
    return 0


def read_encodings(path) -> tuple[str | None, list[dict]]:
    rows = []
    with open(_require_path(path, "encoding file", "file"), newline="") as handle:
        data = [(i, line) for i, line in enumerate(handle, start=1) if line.strip() and not line.startswith("#")]
    if not data:
        return None, rows
    header = next(csv.reader([data[0][1]]))
    if tuple(header[: len(ENCODING_PREFIX)]) != ENCODING_PREFIX:
        raise UsageError(f"{path}: not an encoding file")
    kinds = set()
    for line, text in data[1:]:
        row = next(csv.reader([text]))
        if len(row) != len(header):
            raise ArbkpError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        rec = dict(zip(ENCODING_PREFIX, row))
        rec["values"] = np.array([float(v) for v in row[len(ENCODING_PREFIX) :]])
        rec["line"] = line
        kinds.add(rec["kind"])
        rows.append(rec)
    if len(kinds) > 1:
        raise UsageError(f"{path}: mixed encoding kinds {sorted(kinds)}")
    return (kinds.pop() if kinds else None), rows


def cmd_decode(args) -> int:
    kind, rows = read_encodings(args.encodings)
    if kind not in (None, "vector"):
        raise UsageError(f"only vector encodings can be decoded, file holds {kind!r}")
    out = [header_text(args), _csv_line(PREDICTION_HEADER)]
    for rec in rows:
        query = decode_vector(VectorEncoding.from_array(rec["values"]), rec["part"] or None, rec["head_strategy"] or None)
        out.append(_csv_line(prediction_row(PredictionRecord(rec["image_id"], query, float(rec["x"]), float(rec["y"])))))
    write_text_atomic(args.out, "".join(out))
    return 0


def cmd_embed(args) -> int:
    kind, rows = read_encodings(args.encodings)
    if kind is not None and kind != args.kind:
        raise UsageError(f"--kind {args.kind} does not match the {kind} encodings in {args.encodings}")
    try:
        config = EmbedderConfig(
            token_dim=args.token_dim,
            num_layers=args.num_layers,
            concat_stage=args.concat_stage,
            kind=args.kind,
            with_angle=not args.no_angle,
            bias=not args.no_bias,
            seed=args.seed,
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    embedder = init_embedder(config)
    values = [r["values"] for r in rows]
    if args.kind == "vector" and not config.with_angle:
        if any(v[-1] != 0.0 for v in values):
            raise UsageError("--no-angle given but the file holds head-angle encodings")
        values = [v[: config.input_dim] for v in values]
    tokens = embed_batch(embedder, values).astype(np.float32)
    prov = provenance(args)
    header = {
        "provenance": prov,
        "config": asdict(config),
        "image_ids": [r["image_id"] for r in rows],
        "parts": [r["part"] for r in rows],
    }
    write_tensors(args.out, TOKENS_MAGIC, header, [("tokens", tokens.reshape(len(rows), config.token_dim))])
    if args.weights_out:
        save_embedder(embedder, args.weights_out, prov)
    print(f"{tokens.shape[0]} x {config.token_dim} tokens", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# render


def _find_image(images: Path | None, image_id: str) -> Path | None:
    if images is None:
        return None
    for suffix in IMAGE_SUFFIXES:
        p = images / f"{image_id}{suffix}"
        if p.exists():
            return p
    return None


def _render_one(task):
    skeleton, masks, images, out_dir, lines_per_side, text = task
    mask = _load_image_mask(skeleton, masks)
    if mask is None:
        return f"{skeleton.image_id}: mask missing, skipped"
    src = _find_image(images, skeleton.image_id)
    if src is None:
        base = mask_preview(mask)
    else:
        with Image.open(src) as img:
            base = np.asarray(img.convert("RGB"))
    out = render_overlay(base, skeleton, mask, OverlaySpec(lines_per_side=lines_per_side))
    info = PngInfo()
    info.add_text("arbkp", text)
    buf = io.BytesIO()
    Image.fromarray(out, "RGB").save(buf, format="PNG", pnginfo=info)
    write_bytes_atomic(Path(out_dir) / f"{skeleton.image_id}.png", buf.getvalue())
    return None


def cmd_render(args) -> int:
    items = load_skeletons(args.annotations)
    masks = _require_path(args.masks, "mask directory", "dir")
    images = _require_path(args.images, "image directory", "dir") if args.images else None
    if args.lines_per_side < 1:
        raise UsageError("--lines-per-side must be >= 1")
    text = header_text(args)
    tasks = [(sk, masks, images, args.out_dir, args.lines_per_side, text) for _, sk in items]
    for msg in _map(_render_one, tasks, args.jobs):
        if msg:
            print(msg, file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# demo data and template export


def cmd_demo_data(args) -> int:
    from .synthetic import synthetic_athlete

    out = Path(args.out_dir)
    rng = np.random.default_rng(args.seed)
    splits = {"train": 3, "test": 1, "val": 1}
    index = 0
    for split, n_athletes in splits.items():
        skeletons = []
        for a in range(n_athletes):
            for _ in range(args.images_per_athlete):
                sk, mask = synthetic_athlete(
                    image_id=f"img{index:04d}",
                    athlete_id=f"{split}_athlete{a}",
                    dx=float(rng.integers(-20, 21)),
                    dy=float(rng.integers(-10, 11)),
                    elbow_bend=float(rng.uniform(0.0, 2.0)),
                    knee_bend=float(rng.uniform(0.0, 2.0)),
                )
                skeletons.append(sk)
                save_mask(mask, mask_path(out / "masks", sk.image_id))
                index += 1
        save_annotations(skeletons, out / "annotations" / f"{split}.csv", header_text(args))
    print(f"{index} synthetic images written to {out}", file=sys.stderr)
    return 0


def cmd_template(args) -> int:
    save_normpose_template(build_normpose_template(), args.out_dir)
    return 0


# ---------------------------------------------------------------------------
# parser


def _dataset_args(p: argparse.ArgumentParser, masks: bool = True) -> None:
    p.add_argument("--annotations", required=True, help="annotation CSV or a directory with train/test/val.csv")
    if masks:
        p.add_argument("--masks", required=True, help="directory of <image_id>.png label masks")


def _jobs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output is identical for any value)")


def _strategy(p: argparse.ArgumentParser) -> None:
    p.add_argument("--head-strategy", choices=[s.value for s in HeadStrategy], default=HeadStrategy.EXTENSION.value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arbkp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"arbkp {__version__}")
    parser.add_argument("--config", help="JSON file with default flag values; explicit flags override")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="image, athlete and mask counts per split")
    _dataset_args(p, masks=False)
    p.add_argument("--masks", help="mask directory (optional)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gt-gen", help="sample random queries and their ground-truth points")
    _dataset_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-per-image", type=int, default=10)
    _strategy(p)
    p.add_argument("--out", required=True)
    p.add_argument("--failures", help="CSV log of failed generations")
    _jobs(p)
    p.set_defaults(func=cmd_gt_gen)

    p = sub.add_parser("grid", help="write the 125-per-part evaluation grid")
    _dataset_args(p)
    _strategy(p)
    p.add_argument("--out", required=True)
    _jobs(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="PCK and PCT of a prediction file on the evaluation grid")
    _dataset_args(p)
    p.add_argument("--predictions", required=True)
    _strategy(p)
    p.add_argument("--pck", type=float, nargs="+", default=list(DEFAULT_PCK_THRESHOLDS))
    p.add_argument("--pct", type=float, default=DEFAULT_PCT_THRESHOLD)
    p.add_argument("--show-missing", type=int, default=20)
    p.add_argument("--out", help="CSV report")
    _jobs(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("encode", help="encode a query file as vectors or normalized-pose coordinates")
    p.add_argument("--queries", required=True, help="query file in the prediction format")
    p.add_argument("--kind", choices=["vector", "normpose"], default="vector")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a vector encoding file back to queries")
    p.add_argument("--encodings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("embed", help="embed an encoding file into query tokens")
    p.add_argument("--encodings", required=True)
    p.add_argument("--kind", choices=["vector", "normpose"], default="vector")
    p.add_argument("--token-dim", type=int, default=192)
    p.add_argument("--num-layers", type=int, default=1)
    p.add_argument("--concat-stage", type=int, default=0)
    p.add_argument("--no-angle", action="store_true", help="two input vectors (no angle vector)")
    p.add_argument("--no-bias", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="token file")
    p.add_argument("--weights-out", help="also write the embedder weights")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("render", help="draw the longitudinal-line overlay")
    _dataset_args(p)
    p.add_argument("--images", help="directory of <image_id>.png/.jpg photos; masks are shown otherwise")
    p.add_argument("--lines-per-side", type=int, default=3)
    p.add_argument("--out-dir", required=True)
    _jobs(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("demo-data", help="write a small synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images-per-athlete", type=int, default=2)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_demo_data)

    p = sub.add_parser("template", help="export the normalized-pose template (mask PNG + skeleton CSV)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_template)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config) as handle:
            values = json.load(handle)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(values, dict):
        raise UsageError("config file must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    for action in parser._subparsers._group_actions:  # type: ignore[union-attr]
        for sp in action.choices.values():
            sp.set_defaults(**values)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help, --version and flag errors
            return int(exc.code or 0)
        return args.func(args)
    except UsageError as exc:
        print(f"arbkp: usage error: {exc}", file=sys.stderr)
        return 1
    except (ArbkpError, OSError) as exc:
        print(f"arbkp: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
