"""Quantized MatMul-free decoder: recurrent token mixer + GLU channel mixer.

Every projection is a BitLinear block (RMSNorm -> ternary mat-vec -> int8
requantization). Gate arithmetic between blocks runs on dequantized reals.
Vectors are carried at the tile-padded width; padded positions have zero
norm weight and zero matrix rows/columns, so they stay exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ShapeMismatch, UsageError
from .numerics import Luts, QuantVector, quantize_absmax, rmsnorm, sigmoid_lut
from .specs import ModelSpec
from .tmat import DEFAULT_CORE, EngineCounters, TMatCoreConfig, tiled_matvec

MIXER = ("W_f", "W_c", "W_g", "W_o")
GLU = ("W_gg", "W_u", "W_d")
MATRICES = MIXER + GLU


@dataclass(frozen=True)
class Engine:
    """How BitLinear mat-vecs execute; results do not depend on ``threads``."""

    core: TMatCoreConfig = DEFAULT_CORE
    threads: int = 1
    counter: EngineCounters | None = None

    def matvec(self, x: np.ndarray, W: np.ndarray) -> np.ndarray:
        return tiled_matvec(x, W, self.core, self.counter, self.threads)


DEFAULT_ENGINE = Engine()


@dataclass(frozen=True)
class LayerWeights:
    """Ternary matrices stored (fan_in, fan_out) plus one norm vector per matrix input."""

    W_f: np.ndarray
    W_c: np.ndarray
    W_g: np.ndarray
    W_o: np.ndarray
    W_gg: np.ndarray
    W_u: np.ndarray
    W_d: np.ndarray
    norms: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        d = self.W_f.shape[0]
        h = self.W_gg.shape[1]
        want = {n: (d, d) for n in MIXER} | {"W_gg": (d, h), "W_u": (d, h), "W_d": (h, d)}
        for name, shape in want.items():
            W = getattr(self, name)
            if W.shape != shape:
                raise ShapeMismatch(f"{name} has shape {W.shape}, expected {shape}")
            if W.dtype != np.int8:
                raise ShapeMismatch(f"{name} must be int8 trits")
        norms = dict(self.norms)
        for name in MATRICES:
            fan_in = want[name][0]
            w = np.asarray(norms.get(name, np.ones(fan_in)), dtype=np.float64)
            if w.shape != (fan_in,):
                raise ShapeMismatch(f"norm for {name} has shape {w.shape}, expected ({fan_in},)")
            w.setflags(write=False)
            norms[name] = w
        object.__setattr__(self, "norms", norms)

    @property
    def dim(self) -> int:
        return self.W_f.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_gg.shape[1]

    def matrices(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in MATRICES:
            yield name, getattr(self, name)

    @property
    def param_count(self) -> int:
        return sum(W.size for _, W in self.matrices())

    @classmethod
    def zeros(cls, dim: int, hidden: int) -> "LayerWeights":
        z = lambda *s: np.zeros(s, np.int8)  # noqa: E731
        return cls(z(dim, dim), z(dim, dim), z(dim, dim), z(dim, dim), z(dim, hidden), z(dim, hidden), z(hidden, dim))


# -- blocks ---------------------------------------------------------------------


def bitlinear(x: QuantVector, W, norm_w, luts: Luts, engine: Engine = DEFAULT_ENGINE) -> QuantVector:
    n = rmsnorm(x, norm_w, luts.rms, luts.reciprocal)
    acc = engine.matvec(n.values, W)
    return quantize_absmax(acc * n.scale)


def mlgru_step(
    x: QuantVector, h_prev: np.ndarray, lw: LayerWeights, luts: Luts, engine: Engine = DEFAULT_ENGINE
) -> tuple[QuantVector, np.ndarray]:
    if h_prev.shape != (lw.dim,):
        raise ShapeMismatch(f"hidden state has shape {h_prev.shape}, expected ({lw.dim},)")
    nw = lw.norms
    f = sigmoid_lut(luts.sigmoid, bitlinear(x, lw.W_f, nw["W_f"], luts, engine).dequantize())
    c = bitlinear(x, lw.W_c, nw["W_c"], luts, engine).dequantize()
    g = sigmoid_lut(luts.sigmoid, bitlinear(x, lw.W_g, nw["W_g"], luts, engine).dequantize())
    h = mix_gate(f, h_prev, c)
    o = bitlinear(quantize_absmax(g * h), lw.W_o, nw["W_o"], luts, engine)
    return o, h


def mix_gate(f: np.ndarray, h_prev: np.ndarray, c: np.ndarray) -> np.ndarray:
    """f*h_prev + (1-f)*c, written so h_prev == c returns c exactly and rounding never leaves [c, h_prev]."""
    h = c + f * (h_prev - c)
    return np.clip(h, np.minimum(c, h_prev), np.maximum(c, h_prev))


def glu_step(x: QuantVector, lw: LayerWeights, luts: Luts, engine: Engine = DEFAULT_ENGINE) -> QuantVector:
    nw = lw.norms
    g = bitlinear(x, lw.W_gg, nw["W_gg"], luts, engine).dequantize()
    u = bitlinear(x, lw.W_u, nw["W_u"], luts, engine).dequantize()
    p = sigmoid_lut(luts.sigmoid, g) * u
    return bitlinear(quantize_absmax(p), lw.W_d, nw["W_d"], luts, engine)


def layer_forward(
    x: QuantVector, h_prev: np.ndarray, lw: LayerWeights, luts: Luts, engine: Engine = DEFAULT_ENGINE
) -> tuple[QuantVector, np.ndarray]:
    o, h = mlgru_step(x, h_prev, lw, luts, engine)
    x1 = quantize_absmax(x.dequantize() + o.dequantize())
    y = glu_step(x1, lw, luts, engine)
    return quantize_absmax(x1.dequantize() + y.dequantize()), h


# -- decoding ---------------------------------------------------------------------


@dataclass
class DecodeSession:
    """Single-writer decode state; the weights may be shared between sessions."""

    spec: ModelSpec
    layers: Sequence[LayerWeights]
    luts: Luts = field(default_factory=Luts)
    engine: Engine = DEFAULT_ENGINE
    seed: int | None = None
    hidden: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if len(self.layers) != self.spec.layers:
            raise ShapeMismatch(f"spec has {self.spec.layers} layers, got weights for {len(self.layers)}")
        for lw in self.layers:
            if lw.dim != self.spec.padded_dim:
                raise ShapeMismatch(f"layer width {lw.dim} != model width {self.spec.padded_dim}")
        if not self.hidden:
            self.reset()
        elif len(self.hidden) != len(self.layers):
            raise ShapeMismatch("need one hidden state per layer")

    def reset(self) -> None:
        self.hidden = [np.zeros(self.spec.padded_dim) for _ in self.layers]
        self.step_count = 0

    def step(self, x) -> QuantVector:
        q = as_input(x, self.spec.padded_dim)
        for i, lw in enumerate(self.layers):
            q, self.hidden[i] = layer_forward(q, self.hidden[i], lw, self.luts, self.engine)
        self.step_count += 1
        return q


def as_input(x, width: int) -> QuantVector:
    """Quantize a real vector (zero-padded to ``width``) or pass a QuantVector through."""
    if isinstance(x, QuantVector):
        if len(x) != width:
            raise ShapeMismatch(f"input has {len(x)} elements, expected {width}")
        return x
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size > width:
        raise ShapeMismatch(f"input of shape {x.shape} does not fit width {width}")
    return quantize_absmax(np.pad(x, (0, width - x.size)))


def generate(session: DecodeSession, inputs: Sequence, steps: int | None = None) -> list[QuantVector]:
    steps = len(inputs) if steps is None else steps
    if steps < 1:
        raise UsageError("steps must be >= 1")
    if len(inputs) < steps:
        raise UsageError(f"{steps} steps need {steps} input vectors, got {len(inputs)}")
    return [session.step(inputs[t]) for t in range(steps)]


# -- random weights -----------------------------------------------------------------


def random_trits(rng: np.random.Generator, shape, p0: float = 1 / 3) -> np.ndarray:
    if not 0 <= p0 <= 1:
        raise ValueError("p0 must be in [0, 1]")
    p = (1 - p0) / 2
    return rng.choice(np.array([-1, 0, 1], np.int8), size=shape, p=[p, p0, p])


def random_layer(spec: ModelSpec, seed: int, layer: int, p0: float = 1 / 3) -> LayerWeights:
    """Layer ``layer`` of ``random_model(spec, seed, p0)``; independent of the other layers."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, layer]))
    d, dp, e, hidden = spec.dim, spec.padded_dim, spec.glu_hidden_logical, spec.glu_dim
    live = {"W_f": (d, d), "W_c": (d, d), "W_g": (d, d), "W_o": (d, d), "W_gg": (d, e), "W_u": (d, e), "W_d": (e, d)}
    padded = {n: (dp, dp) for n in MIXER} | {"W_gg": (dp, hidden), "W_u": (dp, hidden), "W_d": (hidden, dp)}
    mats, norms = {}, {}
    for name in MATRICES:
        rows, cols = live[name]
        W = np.zeros(padded[name], np.int8)
        W[:rows, :cols] = random_trits(rng, (rows, cols), p0)
        # unit-variance outputs for unit-RMS inputs; padded rows get zero gain.
        # float32-exact so a saved model reloads bit-identically
        gain = 1.0 if p0 >= 1 else float(np.float32(1.0 / np.sqrt(rows * (1 - p0))))
        nw = np.zeros(padded[name][0])
        nw[:rows] = gain
        mats[name], norms[name] = W, nw
    return LayerWeights(**mats, norms=norms)


def iter_random_layers(spec: ModelSpec, seed: int, p0: float = 1 / 3) -> Iterator[LayerWeights]:
    for i in range(spec.layers):
        yield random_layer(spec, seed, i, p0)


def random_model(spec: ModelSpec, seed: int, p0: float = 1 / 3) -> list[LayerWeights]:
    return list(iter_random_layers(spec, seed, p0))


def zero_model(spec: ModelSpec) -> list[LayerWeights]:
    return [LayerWeights.zeros(spec.padded_dim, spec.glu_dim) for _ in range(spec.layers)]


def random_inputs(spec: ModelSpec, seed: int, steps: int, batch: int = 1) -> np.ndarray:
    """Standard-normal input vectors, shape (batch, steps, dim)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A7]))
    return rng.standard_normal((batch, steps, spec.dim))
