"""Ternary mat-vec engine: functional model and cycle count of the TMat core.

The core is ``core_dim`` TDot lanes, each a ``core_dim``-point dot product of
the int8 activation vector against one weight column. Products are selected
from {x, -x, 0}, with -x computed once per call and broadcast to every lane.
Larger matrices are tiled into core-sized blocks; partial sums accumulate in
32-bit integers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidBatch, LengthMismatch, ShapeMismatch

MAX_SAFE_DIM = 1 << 24  # 127 * 2**24 < 2**31


@dataclass(frozen=True)
class TMatCoreConfig:
    core_dim: int = 256
    reduction_cycles: int = 8

    def __post_init__(self):
        d = self.core_dim
        if d < 16 or d & (d - 1):
            raise ValueError(f"core_dim must be a power of two >= 16, got {d}")
        if self.reduction_cycles < 0:
            raise ValueError("reduction_cycles must be >= 0")


DEFAULT_CORE = TMatCoreConfig()


@dataclass
class EngineCounters:
    """Instrumentation hook: pass one in to count weight-tile fetches and cycles."""

    tile_fetches: int = 0
    cycles: int = 0
    calls: int = 0

    def reset(self):
        self.tile_fetches = self.cycles = self.calls = 0


@dataclass(frozen=True)
class BatchGroupPlan:
    batch: int
    core_dim: int = 256
    groups: tuple[range, ...] = field(init=False)

    def __post_init__(self):
        n = self.batch
        if n < 1 or self.core_dim % n:
            raise InvalidBatch(f"batch {n} does not divide core_dim {self.core_dim}")
        w = self.core_dim // n
        object.__setattr__(self, "groups", tuple(range(i * w, (i + 1) * w) for i in range(n)))

    @property
    def lanes_per_group(self) -> int:
        return self.core_dim // self.batch


def tmul(x: int, w: int) -> int:
    if w == 1:
        return x
    if w == -1:
        return -x
    if w == 0:
        return 0
    raise ValueError(f"not a trit: {w!r}")


def tdot(x, w) -> int:
    x = np.asarray(x)
    w = np.asarray(w)
    if x.shape != w.shape or x.ndim != 1:
        raise LengthMismatch(f"tdot operands have shapes {x.shape} and {w.shape}")
    x32 = x.astype(np.int32)
    return int(np.where(w == 1, x32, np.where(w == -1, -x32, 0)).sum(dtype=np.int32))


def _select_sum(x32: np.ndarray, nx32: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x32, nx32: (..., k); w: (k, m) -> (..., m)
    xs = x32[..., :, None]
    return np.where(w == 1, xs, np.where(w == -1, nx32[..., :, None], 0)).sum(axis=-2, dtype=np.int32)


def tmat_core(x, W, cfg: TMatCoreConfig = DEFAULT_CORE) -> np.ndarray:
    """One core pass: output j is the TDot of x with column j of W."""
    x = np.asarray(x)
    W = np.asarray(W)
    c = cfg.core_dim
    if x.shape != (c,) or W.shape != (c, c):
        raise ShapeMismatch(f"core expects x[{c}] and W[{c},{c}], got {x.shape} and {W.shape}")
    x32 = x.astype(np.int32)
    return _select_sum(x32, -x32, W)


def _check_tiled(x: np.ndarray, W: np.ndarray, cfg: TMatCoreConfig):
    c = cfg.core_dim
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"activation {x.shape} does not match weights {W.shape}")
    d, dp = W.shape
    if d % c or dp % c:
        raise ShapeMismatch(f"weights {W.shape} are not tile-aligned to {c}")
    if d > MAX_SAFE_DIM:
        raise ShapeMismatch(f"reduction dim {d} could overflow the 32-bit accumulator")


def _run_tiles(X32: np.ndarray, W: np.ndarray, cfg: TMatCoreConfig, threads: int) -> tuple[np.ndarray, int]:
    """X32: (n, d) int32 -> ((n, d') int32, tiles fetched). Each tile is read once for all n."""
    c = cfg.core_dim
    d, dp = W.shape
    nX32 = -X32

    def column_block(j: int) -> tuple[np.ndarray, int]:
        cols = slice(j * c, (j + 1) * c)
        acc = np.zeros((X32.shape[0], c), dtype=np.int32)
        fetched = 0
        for i in range(d // c):
            rows = slice(i * c, (i + 1) * c)
            tile = W[rows, cols]
            fetched += 1
            acc += _select_sum(X32[:, rows], nX32[:, rows], tile)
        return acc, fetched

    blocks = range(dp // c)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(column_block, blocks))
    else:
        parts = [column_block(j) for j in blocks]
    return np.concatenate([p[0] for p in parts], axis=1), sum(p[1] for p in parts)


def tiled_matvec(
    x,
    W,
    cfg: TMatCoreConfig = DEFAULT_CORE,
    counter: EngineCounters | None = None,
    threads: int = 1,
) -> np.ndarray:
    x = np.asarray(x)
    W = np.asarray(W)
    if x.ndim != 1:
        raise ShapeMismatch("tiled_matvec takes one activation vector")
    _check_tiled(x, W, cfg)
    out, fetched = _run_tiles(x.astype(np.int32)[None, :], W, cfg, threads)
    if counter is not None:
        counter.calls += 1
        counter.tile_fetches += fetched
        counter.cycles += matvec_cycles(W.shape[0], W.shape[1], 1, cfg)
    return out[0]


def batched_matvec(
    xs: Sequence,
    W,
    plan: BatchGroupPlan,
    cfg: TMatCoreConfig = DEFAULT_CORE,
    counter: EngineCounters | None = None,
    threads: int = 1,
) -> list[np.ndarray]:
    """Each TDot group serves one batch element; every tile is fetched once and shared."""
    if plan.core_dim != cfg.core_dim:
        raise InvalidBatch("batch plan and core config disagree on core_dim")
    X = np.asarray(xs)
    if X.ndim != 2 or X.shape[0] != plan.batch:
        raise InvalidBatch(f"plan is for {plan.batch} vectors, got array of shape {X.shape}")
    W = np.asarray(W)
    _check_tiled(X, W, cfg)
    out, fetched = _run_tiles(X.astype(np.int32), W, cfg, threads)
    if counter is not None:
        counter.calls += 1
        counter.tile_fetches += fetched
        counter.cycles += matvec_cycles(W.shape[0], W.shape[1], plan.batch, cfg)
    return list(out)


def matvec_cycles(d: int, dp: int, batch: int = 1, cfg: TMatCoreConfig = DEFAULT_CORE) -> int:
    """Core occupancy of one (batched) mat-vec: one cycle per tile per batch group, plus reduction."""
    c = cfg.core_dim
    if d % c or dp % c:
        raise ShapeMismatch(f"({d}, {dp}) is not tile-aligned to {c}")
    if batch < 1 or c % batch:
        raise InvalidBatch(f"batch {batch} does not divide core_dim {c}")
    return (d // c) * (dp // c) * batch + cfg.reduction_cycles

