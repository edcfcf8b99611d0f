"""Double-precision oracle for the decoder graph.

Same weights and wiring as :mod:`ternsim.model`, with exact division, exact
sigmoid and no quantization anywhere. Used for verification only.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import LayerWeights, mix_gate
from .numerics import RmsParams


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def rmsnorm_exact(x: np.ndarray, w: np.ndarray, params: RmsParams = RmsParams()) -> np.ndarray:
    return x * w / np.sqrt(np.dot(x, x) / x.size + params.epsilon)


def bitlinear_ref(x, W, norm_w, params: RmsParams = RmsParams()) -> np.ndarray:
    return rmsnorm_exact(np.asarray(x, np.float64), norm_w, params) @ W.astype(np.float64)


def mlgru_ref(x, h_prev, lw: LayerWeights, params: RmsParams = RmsParams()):
    nw = lw.norms
    f = sigmoid(bitlinear_ref(x, lw.W_f, nw["W_f"], params))
    c = bitlinear_ref(x, lw.W_c, nw["W_c"], params)
    g = sigmoid(bitlinear_ref(x, lw.W_g, nw["W_g"], params))
    h = mix_gate(f, h_prev, c)
    return bitlinear_ref(g * h, lw.W_o, nw["W_o"], params), h


def glu_ref(x, lw: LayerWeights, params: RmsParams = RmsParams()) -> np.ndarray:
    nw = lw.norms
    p = sigmoid(bitlinear_ref(x, lw.W_gg, nw["W_gg"], params)) * bitlinear_ref(x, lw.W_u, nw["W_u"], params)
    return bitlinear_ref(p, lw.W_d, nw["W_d"], params)


def layer_ref(x, h_prev, lw: LayerWeights, params: RmsParams = RmsParams()):
    o, h = mlgru_ref(x, h_prev, lw, params)
    x1 = x + o
    return x1 + glu_ref(x1, lw, params), h


def float_reference_forward(
    layers: Sequence[LayerWeights],
    inputs: Sequence[np.ndarray],
    params: RmsParams = RmsParams(),
    hidden: Sequence[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Final-layer output for each input step, carrying hidden states across steps."""
    width = layers[0].dim
    hs = [np.zeros(width) if hidden is None else np.array(hidden[i], np.float64) for i in range(len(layers))]
    outs = []
    for x in inputs:
        x = np.asarray(x, np.float64)
        x = np.pad(x, (0, width - x.size))
        for i, lw in enumerate(layers):
            x, hs[i] = layer_ref(x, hs[i], lw, params)
        outs.append(x)
    return outs


def relative_l2(approx, exact) -> float:
    approx, exact = np.asarray(approx, np.float64), np.asarray(exact, np.float64)
    denom = np.linalg.norm(exact)
    if denom == 0:
        return float(np.linalg.norm(approx))
    return float(np.linalg.norm(approx - exact) / denom)
