"""Reference query-token embedder: per-vector affine branches, concatenation, shared layers.

Layout for ``num_layers = L`` and ``concat_stage = C``:

* each input vector passes through ``C`` affine layers of its own; every
  branch layer outputs the branch's share of ``token_dim`` (half or a
  third, any remainder goes to the keypoint-vector branch);
* the branch outputs (or the raw vectors when ``C = 0``) are concatenated;
* ``L - C`` shared affine layers map to ``token_dim``.

A rectifier follows every layer except the last one on the path, so each
input-to-output path carries ``L - 1`` rectifiers. Weights and biases are
drawn uniformly from ``+-1/sqrt(fan_in)`` with a seeded generator, layer by
layer (branches in input order first, then shared layers), and stored as
float32. Evaluation runs in float64 with a fixed reduction order so that a
batch yields exactly the tokens of single calls.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import write_bytes_atomic
from .errors import ConfigError, ShapeError
from .query_encoding import ANGLE_DIM, KEYPOINT_DIM, NORMPOSE_DIM, THICKNESS_DIM, NormPoseEncoding, VectorEncoding

WEIGHTS_MAGIC = b"ARBKPW01"
TOKENS_MAGIC = b"ARBKPT01"
MAX_LAYERS = 4
_CHUNK = 64


@dataclass(frozen=True)
class EmbedderConfig:
    token_dim: int = 192
    num_layers: int = 1
    concat_stage: int = 0
    kind: str = "vector"
    with_angle: bool = True  # vector kind only: angle vector as a third input
    bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("vector", "normpose"):
            raise ConfigError(f"unknown encoding kind {self.kind!r}")
        if not isinstance(self.token_dim, int) or self.token_dim < len(self.input_dims):
            raise ConfigError(f"token_dim must be an integer >= {len(self.input_dims)}, got {self.token_dim}")
        if not 1 <= self.num_layers <= MAX_LAYERS:
            raise ConfigError(f"num_layers must lie in 1..{MAX_LAYERS}, got {self.num_layers}")
        if not 0 <= self.concat_stage <= self.num_layers:
            raise ConfigError(f"concat_stage must lie in 0..num_layers, got {self.concat_stage}")

    @property
    def input_dims(self) -> tuple[int, ...]:
        if self.kind == "normpose":
            return (NORMPOSE_DIM,)
        if self.with_angle:
            return (KEYPOINT_DIM, THICKNESS_DIM, ANGLE_DIM)
        return (KEYPOINT_DIM, THICKNESS_DIM)

    @property
    def input_dim(self) -> int:
        return sum(self.input_dims)

    @property
    def branch_dims(self) -> tuple[int, ...]:
        n = len(self.input_dims)
        base, extra = divmod(self.token_dim, n)
        return (base + extra,) + (base,) * (n - 1)


Layer = tuple[np.ndarray, np.ndarray | None]


@dataclass(frozen=True)
class Embedder:
    config: EmbedderConfig
    branches: tuple[tuple[Layer, ...], ...]
    shared: tuple[Layer, ...]

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for b, layers in enumerate(self.branches):
            for i, (w, bias) in enumerate(layers):
                out.append((f"branch{b}.{i}.weight", w))
                if bias is not None:
                    out.append((f"branch{b}.{i}.bias", bias))
        for i, (w, bias) in enumerate(self.shared):
            out.append((f"shared.{i}.weight", w))
            if bias is not None:
                out.append((f"shared.{i}.bias", bias))
        return out


def _layer(rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool) -> Layer:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32)
    b = rng.uniform(-bound, bound, size=fan_out).astype(np.float32) if bias else None
    return w, b


def init_embedder(config: EmbedderConfig, seed: int | None = None) -> Embedder:
    """Deterministic weights for ``config``; ``seed`` overrides ``config.seed``."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    branches = []
    for in_dim, out_dim in zip(config.input_dims, config.branch_dims):
        layers, fan_in = [], in_dim
        for _ in range(config.concat_stage):
            layers.append(_layer(rng, fan_in, out_dim, config.bias))
            fan_in = out_dim
        branches.append(tuple(layers))
    fan_in = config.token_dim if config.concat_stage else config.input_dim
    shared = []
    for _ in range(config.num_layers - config.concat_stage):
        shared.append(_layer(rng, fan_in, config.token_dim, config.bias))
        fan_in = config.token_dim
    return Embedder(config, tuple(branches), tuple(shared))


def _as_matrix(embedder: Embedder, encodings) -> np.ndarray:
    cfg = embedder.config
    rows = []
    kinds = set()
    for enc in encodings:
        if isinstance(enc, VectorEncoding):
            kinds.add("vector")
            a = enc.as_array()
            if not cfg.with_angle:
                if enc.angle_vec[0] != 0.0:
                    raise ShapeError("angle vector set but the embedder has no angle input")
                a = a[: KEYPOINT_DIM + THICKNESS_DIM]
        elif isinstance(enc, NormPoseEncoding):
            kinds.add("normpose")
            a = enc.as_array()
        else:
            a = np.asarray(enc, dtype=float)
            kinds.add("array")
        if a.shape != (cfg.input_dim,):
            raise ShapeError(f"{cfg.kind} embedder expects {cfg.input_dim} inputs, got shape {a.shape}")
        rows.append(a)
    if len(kinds - {"array"}) > 1:
        raise ShapeError(f"heterogeneous encoding kinds in one batch: {sorted(kinds)}")
    if kinds - {"array"} and (kinds - {"array"}) != {cfg.kind}:
        raise ShapeError(f"{cfg.kind} embedder given {sorted(kinds - {'array'})} encodings")
    if not rows:
        return np.zeros((0, cfg.input_dim))
    return np.stack(rows)


def _affine(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    # broadcast-and-sum keeps the reduction order independent of the batch size
    out = np.empty((x.shape[0], w.shape[0]))
    for start in range(0, x.shape[0], _CHUNK):
        chunk = x[start : start + _CHUNK]
        out[start : start + _CHUNK] = (chunk[:, None, :] * w[None, :, :]).sum(axis=2)
    if b is not None:
        out += b
    return out


def _f64(layer: Layer) -> tuple[np.ndarray, np.ndarray | None]:
    w, b = layer
    return w.astype(np.float64), None if b is None else b.astype(np.float64)


def _forward(embedder: Embedder, x: np.ndarray) -> np.ndarray:
    cfg = embedder.config
    remaining = cfg.num_layers
    parts = []
    offset = 0
    for dim, layers in zip(cfg.input_dims, embedder.branches):
        h = x[:, offset : offset + dim]
        offset += dim
        for i, layer in enumerate(layers):
            h = _affine(h, *_f64(layer))
            if cfg.num_layers - (i + 1) > 0:
                h = np.maximum(h, 0.0)
        parts.append(h)
    h = np.concatenate(parts, axis=1)
    remaining -= cfg.concat_stage
    for layer in embedder.shared:
        h = _affine(h, *_f64(layer))
        remaining -= 1
        if remaining > 0:
            h = np.maximum(h, 0.0)
    return h


def embed(embedder: Embedder, encoding) -> np.ndarray:
    """Token of one encoding (``VectorEncoding``, ``NormPoseEncoding`` or flat array)."""
    return _forward(embedder, _as_matrix(embedder, [encoding]))[0]


def embed_batch(embedder: Embedder, encodings: Sequence) -> np.ndarray:
    """Tokens of many encodings as a ``(len(encodings), token_dim)`` array, order kept."""
    x = _as_matrix(embedder, encodings)
    if x.shape[0] == 0:
        return np.zeros((0, embedder.config.token_dim))
    return _forward(embedder, x)


# ---------------------------------------------------------------------------
# binary container: magic, u32 header length, JSON header, then per tensor
# u32 ndim, ndim x u32 dims, float32 little-endian data in row-major order


def write_tensors(path, magic: bytes, header: dict, tensors: Sequence[tuple[str, np.ndarray]]) -> None:
    meta = dict(header)
    meta["tensors"] = [name for name, _ in tensors]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [magic, struct.pack("<I", len(blob)), blob]
    for _, arr in tensors:
        a = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes())
    write_bytes_atomic(path, b"".join(chunks))


def read_tensors(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[: len(magic)] != magic:
        raise ShapeError(f"{path}: not a {magic.decode()} file")
    pos = len(magic)
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos : pos + n].decode("utf-8"))
    pos += n
    tensors = {}
    for name in meta["tensors"]:
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * count
    if pos != len(data):
        raise ShapeError(f"{path}: {len(data) - pos} trailing bytes")
    return meta, tensors


def save_embedder(embedder: Embedder, path: str | os.PathLike, provenance: dict | None = None) -> None:
    header = {"config": asdict(embedder.config)}
    if provenance:
        header["provenance"] = provenance
    write_tensors(path, WEIGHTS_MAGIC, header, embedder.tensors())


def load_embedder(path: str | os.PathLike) -> Embedder:
    meta, tensors = read_tensors(path, WEIGHTS_MAGIC)
    config = EmbedderConfig(**meta["config"])
    get = lambda name: tensors.get(name)  # noqa: E731
    branches = tuple(
        tuple((get(f"branch{b}.{i}.weight"), get(f"branch{b}.{i}.bias")) for i in range(config.concat_stage))
        for b in range(len(config.input_dims))
    )
    shared = tuple(
        (get(f"shared.{i}.weight"), get(f"shared.{i}.bias")) for i in range(config.num_layers - config.concat_stage)
    )
    return Embedder(config, branches, shared)
