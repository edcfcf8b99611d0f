"""On-disk model directories and activation dumps.

A model directory holds::

    manifest.txt   key = value: ModelSpec fields plus generation metadata
    weights.ter    packed ternary tensors, named ``layer<i>.<matrix>``
    norms.nrm      norm-weight vectors as float32 little-endian

Norms file layout (little-endian): ``b"NRM1"``, u16 version, u32 count, then
per vector u16 name length, UTF-8 name, u32 length, float32 data.

Activation file layout: ``b"TAC1"``, u16 version, u32 batch, u32 steps,
u32 width, then for each (batch, step) in row-major order an f64 scale
followed by ``width`` int8 values.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .codec import _Reader, pack_tensor, read_weight_file, unpack_tensor, write_weight_file
from .errors import BadMagic, ConfigError, FormatError, ShapeMismatch, UnsupportedVersion
from .model import MATRICES, LayerWeights
from .numerics import QuantVector
from .specs import MODEL_KEYS, ModelSpec, format_kv, model_spec_from_kv, model_spec_to_kv, parse_kv

MANIFEST = "manifest.txt"
WEIGHTS = "weights.ter"
NORMS = "norms.nrm"
EXTRA_KEYS = {"seed", "zero_prob", "weights", "norms"}

NORMS_MAGIC = b"NRM1"
ACT_MAGIC = b"TAC1"
VERSION = 1


def tensor_name(layer: int, matrix: str) -> str:
    return f"layer{layer}.{matrix}"


# -- manifest -------------------------------------------------------------------


def write_manifest(path: str | Path, spec: ModelSpec, extras: dict[str, str] | None = None) -> None:
    kv = model_spec_to_kv(spec) | {k: str(v) for k, v in (extras or {}).items()}
    unknown = kv.keys() - MODEL_KEYS - EXTRA_KEYS
    if unknown:
        raise ConfigError(f"unknown manifest keys {sorted(unknown)}")
    Path(path).write_text(format_kv(kv, "ternsim model manifest"))


def read_manifest(path: str | Path) -> tuple[ModelSpec, dict[str, str]]:
    kv = parse_kv(Path(path).read_text(), str(path))
    unknown = kv.keys() - MODEL_KEYS - EXTRA_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    spec = model_spec_from_kv({k: v for k, v in kv.items() if k in MODEL_KEYS}, str(path))
    return spec, {k: v for k, v in kv.items() if k in EXTRA_KEYS}


# -- norms ------------------------------------------------------------------------


def write_norms(f: BinaryIO, vectors: Iterable[tuple[str, np.ndarray]]) -> int:
    start = f.tell()
    f.write(NORMS_MAGIC + struct.pack("<HI", VERSION, 0))
    n = 0
    for name, v in vectors:
        raw = name.encode()
        data = np.asarray(v, "<f4")
        f.write(struct.pack("<H", len(raw)) + raw + struct.pack("<I", data.size) + data.tobytes())
        n += 1
    end = f.tell()
    f.seek(start + 6)
    f.write(struct.pack("<I", n))
    f.seek(end)
    return n


def read_norms(data: bytes) -> dict[str, np.ndarray]:
    r = _Reader(data)
    if r.take(4, "magic") != NORMS_MAGIC:
        raise BadMagic("not a norms file (bad magic)")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise UnsupportedVersion(f"norms format version {version} is not supported")
    (count,) = r.unpack("<I", "vector count")
    out = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8", errors="replace")
        (n,) = r.unpack("<I", f"{name} length")
        out[name] = np.frombuffer(r.take(4 * n, f"{name} data"), "<f4").astype(np.float64)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after norms records")
    return out


# -- model directories ---------------------------------------------------------------


def write_model_dir(
    path: str | Path,
    spec: ModelSpec,
    layers: Iterable[LayerWeights] | None,
    extras: dict[str, str] | None = None,
) -> dict[str, float]:
    """Write a model directory; ``layers=None`` writes only the manifest.

    ``layers`` is consumed lazily, so a generator keeps one layer in memory.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    extras = dict(extras or {})
    summary = {"params": 0, "weight_bytes": 0}
    if layers is not None:
        extras |= {"weights": WEIGHTS, "norms": NORMS}
        norms: list[tuple[str, np.ndarray]] = []

        def tensors() -> Iterator:
            for i, lw in enumerate(layers):
                for name, W in lw.matrices():
                    norms.append((tensor_name(i, name), lw.norms[name]))
                    summary["params"] += W.size
                    p = pack_tensor(W)
                    summary["weight_bytes"] += p.nbytes
                    yield tensor_name(i, name), p

        write_weight_file(path / WEIGHTS, tensors())
        with open(path / NORMS, "wb") as f:
            write_norms(f, norms)
    write_manifest(path / MANIFEST, spec, extras)
    return summary


def read_model_dir(path: str | Path) -> tuple[ModelSpec, list[LayerWeights], dict[str, str]]:
    path = Path(path)
    manifest = path / MANIFEST if path.is_dir() else path
    spec, extras = read_manifest(manifest)
    root = manifest.parent
    if "weights" not in extras:
        raise FormatError(f"{manifest}: manifest has no weights (written with --manifest-only?)")
    tensors = dict(read_weight_file(root / extras["weights"]))
    norms = read_norms((root / extras.get("norms", NORMS)).read_bytes())
    layers = []
    for i in range(spec.layers):
        mats, nw = {}, {}
        for name in MATRICES:
            key = tensor_name(i, name)
            if key not in tensors or key not in norms:
                raise FormatError(f"{root}: missing tensor or norm {key!r}")
            mats[name] = unpack_tensor(tensors[key])
            nw[name] = norms[key]
        lw = LayerWeights(**mats, norms=nw)
        if (lw.dim, lw.hidden) != (spec.padded_dim, spec.glu_dim):
            raise ShapeMismatch(f"layer {i} is {lw.dim}x{lw.hidden}, manifest implies {spec.padded_dim}x{spec.glu_dim}")
        layers.append(lw)
    return spec, layers, extras


# -- activations ---------------------------------------------------------------------


def dumps_activations(outputs: Sequence[Sequence[QuantVector]]) -> bytes:
    batch, steps = len(outputs), len(outputs[0]) if outputs else 0
    width = len(outputs[0][0]) if steps else 0
    parts = [ACT_MAGIC, struct.pack("<HIII", VERSION, batch, steps, width)]
    for row in outputs:
        if len(row) != steps:
            raise ShapeMismatch("every batch element needs the same number of steps")
        for q in row:
            if len(q) != width:
                raise ShapeMismatch("all activation vectors must have the same width")
            parts.append(struct.pack("<d", q.scale) + q.values.tobytes())
    return b"".join(parts)


def write_activations(path: str | Path, outputs: Sequence[Sequence[QuantVector]]) -> None:
    Path(path).write_bytes(dumps_activations(outputs))


def read_activations(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Return (values int8 of shape (batch, steps, width), scales of shape (batch, steps))."""
    r = _Reader(data)
    if r.take(4, "magic") != ACT_MAGIC:
        raise BadMagic("not an activations file (bad magic)")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise UnsupportedVersion(f"activations format version {version} is not supported")
    batch, steps, width = r.unpack("<III", "header")
    values = np.empty((batch, steps, width), np.int8)
    scales = np.empty((batch, steps))
    for b in range(batch):
        for s in range(steps):
            (scales[b, s],) = r.unpack("<d", f"scale [{b}, {s}]")
            values[b, s] = np.frombuffer(r.take(width, f"values [{b}, {s}]"), np.int8)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after activations")
    return values, scales
