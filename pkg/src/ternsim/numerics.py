"""Non-matmul arithmetic of the datapath: int8 activations, RMSNorm, sigmoid.

Divisions by the RMS value are replaced by a multiply with a table-looked-up
reciprocal. The reciprocal table is indexed uniformly in log2(r) (the
exponent/mantissa bits of r), which keeps relative error flat across the
whole range; values outside the table range are brought in by a power-of-two
shift, which is free in hardware.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INT8_MAX = 127


@dataclass(frozen=True)
class QuantVector:
    """int8 values with one shared scale; real value = values * scale."""

    values: np.ndarray
    scale: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype != np.int8:
            if v.size and (v.min() < -128 or v.max() > 127):
                raise ValueError("values do not fit in int8")
            v = v.astype(np.int8)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, QuantVector):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.values, other.values)

    def dequantize(self) -> np.ndarray:
        return self.values.astype(np.float64) * self.scale


def quantize_absmax(x) -> QuantVector:
    x = np.asarray(x, dtype=np.float64)
    amax = float(np.max(np.abs(x))) if x.size else 0.0
    if amax == 0.0:
        return QuantVector(np.zeros(x.shape, np.int8), 1.0)
    scale = amax / INT8_MAX
    v = np.clip(np.rint(x / scale), -INT8_MAX, INT8_MAX)
    return QuantVector(v.astype(np.int8), scale)


def dequantize(q: QuantVector) -> np.ndarray:
    return q.dequantize()


@dataclass(frozen=True)
class RmsParams:
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def rms(x, params: RmsParams = RmsParams()) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("rms of an empty vector")
    return math.sqrt(float(np.dot(x, x)) / x.size + params.epsilon)


# -- lookup tables ---------------------------------------------------------


@dataclass(frozen=True)
class ReciprocalLUT:
    index_bits: int
    r_min: float
    r_max: float
    entries: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return 1 << self.index_bits

    def bucket(self, r) -> np.ndarray:
        r = np.clip(np.asarray(r, dtype=np.float64), self.r_min, self.r_max)
        pos = (np.log2(r) - math.log2(self.r_min)) / math.log2(self.r_max / self.r_min)
        return np.minimum((pos * self.size).astype(np.int64), self.size - 1)

    def midpoint(self, i) -> np.ndarray:
        lo, hi = math.log2(self.r_min), math.log2(self.r_max)
        return np.exp2(lo + (np.asarray(i) + 0.5) * (hi - lo) / self.size)


def build_reciprocal_lut(index_bits: int = 12, r_min: float = 2.0**-4, r_max: float = 2.0**4) -> ReciprocalLUT:
    if not 0 < r_min < r_max:
        raise ValueError("need 0 < r_min < r_max")
    lut = ReciprocalLUT(index_bits, r_min, r_max, np.empty(0))
    entries = 1.0 / lut.midpoint(np.arange(lut.size))
    entries.flags.writeable = False
    return ReciprocalLUT(index_bits, r_min, r_max, entries)


def lut_reciprocal(lut: ReciprocalLUT, r):
    """Clamped table lookup of 1/r."""
    out = lut.entries[lut.bucket(r)]
    return float(out) if np.ndim(out) == 0 else out


def reciprocal(lut: ReciprocalLUT, r: float) -> float:
    """1/r via the table, with power-of-two range reduction for r outside it."""
    if r <= 0:
        raise ValueError("r must be positive")
    shift = 0
    if r > lut.r_max:
        shift = math.ceil(math.log2(r / lut.r_max))
    elif r < lut.r_min:
        shift = -math.ceil(math.log2(lut.r_min / r))
    return math.ldexp(lut_reciprocal(lut, math.ldexp(r, -shift)), -shift)


@dataclass(frozen=True)
class SigmoidLUT:
    index_bits: int
    x_min: float
    x_max: float
    entries: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return 1 << self.index_bits

    @property
    def step(self) -> float:
        return (self.x_max - self.x_min) / self.size


def build_sigmoid_lut(index_bits: int = 12, x_min: float = -8.0, x_max: float = 8.0) -> SigmoidLUT:
    if not x_min < x_max:
        raise ValueError("need x_min < x_max")
    n = 1 << index_bits
    mids = x_min + (np.arange(n) + 0.5) * (x_max - x_min) / n
    entries = 1.0 / (1.0 + np.exp(-mids))
    entries.flags.writeable = False
    return SigmoidLUT(index_bits, x_min, x_max, entries)


def sigmoid_lut(lut: SigmoidLUT, x):
    x = np.asarray(x, dtype=np.float64)
    idx = np.floor((x - lut.x_min) / lut.step)
    idx = np.clip(idx, 0, lut.size - 1).astype(np.int64)
    out = lut.entries[idx]
    return float(out) if out.ndim == 0 else out


def silu_lut(lut: SigmoidLUT, x):
    return np.asarray(x, dtype=np.float64) * sigmoid_lut(lut, x)


@dataclass(frozen=True)
class Luts:
    """The tables and norm constants one datapath instance uses."""

    reciprocal: ReciprocalLUT = field(default_factory=build_reciprocal_lut)
    sigmoid: SigmoidLUT = field(default_factory=build_sigmoid_lut)
    rms: RmsParams = field(default_factory=RmsParams)


def rmsnorm(x: QuantVector, w, params: RmsParams, lut: ReciprocalLUT) -> QuantVector:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != x.values.shape:
        raise ValueError(f"norm weights {w.shape} do not match activation {x.values.shape}")
    xr = x.dequantize()
    inv_r = reciprocal(lut, rms(xr, params))
    return quantize_absmax(xr * w * inv_r)
