"""Ternary weight codec: trits <-> 1.6-bit packed bytes <-> 2-bit compute codes.

Five trits go into one byte as a big-endian base-3 number with digit map
``0 -> 0, +1 -> 1, -1 -> 2`` (first weight is the most significant digit).
Codes 243..255 are never produced and are rejected on decode.

A ternary tensor is a plain ``np.int8`` array with values in {-1, 0, 1}.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    InvalidCode,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedVersion,
)

TRITS_PER_BYTE = 5
NUM_CODES = 3**TRITS_PER_BYTE  # 243
BITS_PER_TRIT = 8 / TRITS_PER_BYTE  # 1.6

_POW3 = np.array([81, 27, 9, 3, 1], dtype=np.uint8)

MAGIC = b"TER1"
FORMAT_VERSION = 1


def validate_trits(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.size and not np.isin(t, (-1, 0, 1)).all():
        raise ValueError("ternary tensor contains values outside {-1, 0, 1}")
    return t.astype(np.int8, copy=False)


def encode_block(block: Sequence[int]) -> int:
    if len(block) != TRITS_PER_BYTE:
        raise ValueError(f"a trit block has exactly {TRITS_PER_BYTE} trits, got {len(block)}")
    code = 0
    for t in block:
        if t not in (-1, 0, 1):
            raise ValueError(f"not a trit: {t!r}")
        code = code * 3 + (t % 3)
    return code


def decode_block(code: int) -> tuple[int, ...]:
    if not 0 <= code < NUM_CODES:
        raise InvalidCode(code)
    digits = []
    for _ in range(TRITS_PER_BYTE):
        code, d = divmod(code, 3)
        digits.append(d)
    return tuple(-1 if d == 2 else d for d in reversed(digits))


def trit_to_2bit(t: np.ndarray) -> np.ndarray:
    """+1 -> 0b01, -1 -> 0b11, 0 -> 0b00: the low two bits of two's complement."""
    return (np.asarray(t, dtype=np.int8) & 0b11).astype(np.uint8)


def twobit_to_trit(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.uint8)
    if (c == 0b10).any():
        raise ValueError("0b10 is not a valid 2-bit ternary code")
    return np.where(c == 0b11, -1, c).astype(np.int8)


def decode_to_2bit(code: int) -> tuple[int, ...]:
    return tuple(int(c) for c in trit_to_2bit(np.array(decode_block(code))))


def packed_nbytes(n: int) -> int:
    return -(-n // TRITS_PER_BYTE)


@dataclass(frozen=True)
class PackedTensor:
    shape: tuple[int, ...]
    payload: bytes

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    @property
    def nbytes(self) -> int:
        return len(self.payload)


def encode_array(trits: np.ndarray) -> np.ndarray:
    """Flat trit array (any length) -> uint8 codes, zero-padded to whole blocks."""
    flat = np.asarray(trits, dtype=np.int8).ravel()
    pad = (-flat.size) % TRITS_PER_BYTE
    if pad:
        flat = np.concatenate([flat, np.zeros(pad, dtype=np.int8)])
    digits = (flat.reshape(-1, TRITS_PER_BYTE) % 3).astype(np.uint8)
    # max code 242 fits in uint8, so the weighted sum never wraps
    return (digits * _POW3).sum(axis=1, dtype=np.uint8)


def decode_array(codes: np.ndarray, base_offset: int = 0) -> np.ndarray:
    """uint8 codes -> flat trit array of length 5 * len(codes)."""
    codes = np.asarray(codes, dtype=np.uint8).ravel()
    bad = np.flatnonzero(codes >= NUM_CODES)
    if bad.size:
        i = int(bad[0])
        raise InvalidCode(int(codes[i]), base_offset + i)
    digits = (codes[:, None] // _POW3) % 3
    return np.where(digits == 2, -1, digits).astype(np.int8).ravel()


def pack_tensor(t: np.ndarray) -> PackedTensor:
    t = validate_trits(t)
    return PackedTensor(t.shape, encode_array(t).tobytes())


def unpack_tensor(p: PackedTensor) -> np.ndarray:
    n = p.numel
    if p.nbytes != packed_nbytes(n):
        raise ShapeMismatch(
            f"shape {p.shape} holds {n} trits and needs {packed_nbytes(n)} bytes, "
            f"payload has {p.nbytes}"
        )
    flat = decode_array(np.frombuffer(p.payload, dtype=np.uint8))
    return flat[:n].reshape(p.shape)


def storage_ratio_vs_2bit(n: int) -> float:
    """Packed bytes over naive 2-bit bytes for ``n`` trits."""
    return packed_nbytes(n) / (-(-n // 4))


# -- weight file ---------------------------------------------------------------
#
# little-endian, no padding:
#   "TER1" | u16 version | u32 count
#   per tensor: u16 name_len | name (utf-8) | u8 rank | u32 dims[rank]
#               | u64 payload_len | payload


def _write_record(f: BinaryIO, name: str, p: PackedTensor) -> None:
    raw = name.encode("utf-8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)
    f.write(struct.pack("<B", len(p.shape)))
    f.write(struct.pack(f"<{len(p.shape)}I", *p.shape))
    f.write(struct.pack("<Q", p.nbytes))
    f.write(p.payload)


def write_weights(f: BinaryIO, tensors: Iterable[tuple[str, PackedTensor]]) -> int:
    """Stream records to a seekable binary file; returns the tensor count."""
    start = f.tell()
    f.write(MAGIC + struct.pack("<HI", FORMAT_VERSION, 0))
    count = 0
    for name, p in tensors:
        _write_record(f, name, p)
        count += 1
    end = f.tell()
    f.seek(start + len(MAGIC) + 2)
    f.write(struct.pack("<I", count))
    f.seek(end)
    return count


def write_weight_file(path: str | Path, tensors: Iterable[tuple[str, PackedTensor]]) -> int:
    with open(path, "wb") as f:
        return write_weights(f, tensors)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayload(
                f"file ends at byte {len(self.data)} while reading {what} "
                f"({n} bytes at offset {self.pos})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_weights(data: bytes) -> list[tuple[str, PackedTensor]]:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise BadMagic(f"not a packed weight file (magic {data[:4]!r}, expected {MAGIC!r})")
    (version,) = r.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version} (supported: {FORMAT_VERSION})")
    (count,) = r.unpack("<I", "tensor count")
    out = []
    for i in range(count):
        (name_len,) = r.unpack("<H", f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        (rank,) = r.unpack("<B", f"{name} rank")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        (plen,) = r.unpack("<Q", f"{name} payload length")
        offset = r.pos
        payload = r.take(plen, f"{name} payload")
        codes = np.frombuffer(payload, dtype=np.uint8)
        bad = np.flatnonzero(codes >= NUM_CODES)
        if bad.size:
            raise InvalidCode(int(codes[bad[0]]), offset + int(bad[0]))
        p = PackedTensor(dims, payload)
        if p.nbytes != packed_nbytes(p.numel):
            raise ShapeMismatch(f"tensor {name!r}: shape {p.shape} does not match {plen} payload bytes")
        out.append((name, p))
    return out


def read_weight_file(path: str | Path) -> list[tuple[str, PackedTensor]]:
    return read_weights(Path(path).read_bytes())


def dumps_weights(tensors: Iterable[tuple[str, PackedTensor]]) -> bytes:
    buf = io.BytesIO()
    write_weights(buf, tensors)
    return buf.getvalue()
