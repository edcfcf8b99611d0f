import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ternsim.errors import ShapeMismatch, UsageError
from ternsim.model import (
    DecodeSession,
    Engine,
    LayerWeights,
    bitlinear,
    generate,
    glu_step,
    layer_forward,
    mix_gate,
    mlgru_step,
    random_inputs,
    random_layer,
    random_model,
    zero_model,
)
from ternsim.numerics import Luts, quantize_absmax, sigmoid_lut
from ternsim.reference import (
    bitlinear_ref,
    float_reference_forward,
    glu_ref,
    layer_ref,
    mlgru_ref,
    relative_l2,
    sigmoid,
)
from ternsim.specs import MODEL_PRESETS, ModelSpec

LUTS = Luts()
SPEC1 = ModelSpec("t1", 256, 1, 1e6)


def qrand(rng, n=256):
    return quantize_absmax(rng.standard_normal(n))


def layer(seed=0, spec=SPEC1):
    return random_layer(spec, seed, 0)


def test_bitlinear_zero_weights():
    x = qrand(np.random.default_rng(0))
    y = bitlinear(x, np.zeros((256, 256), np.int8), np.ones(256), LUTS)
    assert not y.values.any()


def test_bitlinear_identity_is_normalization():
    rng = np.random.default_rng(1)
    x = qrand(rng)
    y = bitlinear(x, np.eye(256, dtype=np.int8), np.ones(256), LUTS)
    xd = x.dequantize()
    assert relative_l2(y.dequantize(), xd / np.sqrt(np.mean(xd**2))) <= 0.02


@pytest.mark.parametrize("seed", range(10))
def test_bitlinear_vs_oracle(seed):
    lw = layer(seed)
    x = qrand(np.random.default_rng(seed))
    got = bitlinear(x, lw.W_c, lw.norms["W_c"], LUTS).dequantize()
    assert relative_l2(got, bitlinear_ref(x.dequantize(), lw.W_c, lw.norms["W_c"])) <= 0.02


def test_mlgru_fixed_point_is_exact():
    rng = np.random.default_rng(2)
    lw = layer(2)
    x = qrand(rng)
    c = bitlinear(x, lw.W_c, lw.norms["W_c"], LUTS).dequantize()
    _, h = mlgru_step(x, c.copy(), lw, LUTS)
    np.testing.assert_array_equal(h, c)


def test_mlgru_saturated_forget_keeps_state():
    rng = np.random.default_rng(3)
    base = layer(3)
    x = quantize_absmax(np.abs(rng.standard_normal(256)) + 0.1)
    mats = dict(base.matrices()) | {"W_f": np.ones((256, 256), np.int8)}
    lw = LayerWeights(**mats, norms=base.norms | {"W_f": np.full(256, 100.0)})
    h_prev = rng.standard_normal(256)
    _, h = mlgru_step(x, h_prev, lw, LUTS)
    c = bitlinear(x, lw.W_c, lw.norms["W_c"], LUTS).dequantize()
    leak = 1 - sigmoid_lut(LUTS.sigmoid, 1e9)
    assert leak < 1e-3
    assert np.all(np.abs(h - h_prev) <= leak * np.abs(h_prev - c) + 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_mlgru_and_glu_vs_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    lw = layer(seed)
    x = qrand(rng)
    h_prev = rng.standard_normal(256)
    o, h = mlgru_step(x, h_prev, lw, LUTS)
    o_ref, h_ref = mlgru_ref(x.dequantize(), h_prev, lw)
    assert relative_l2(o.dequantize(), o_ref) <= 0.03
    assert relative_l2(h, h_ref) <= 0.03
    assert relative_l2(glu_step(x, lw, LUTS).dequantize(), glu_ref(x.dequantize(), lw)) <= 0.03


def test_glu_zero_paths():
    lw = layer(4)
    x = qrand(np.random.default_rng(4))
    no_u = LayerWeights(**(dict(lw.matrices()) | {"W_u": np.zeros_like(lw.W_u)}), norms=lw.norms)
    assert not glu_step(x, no_u, LUTS).values.any()
    assert not glu_step(x, LayerWeights.zeros(256, 768), LUTS).values.any()


def test_zero_layer_is_residual_identity():
    rng = np.random.default_rng(5)
    lw = LayerWeights.zeros(256, 768)
    for _ in range(20):
        # inputs that are not absmax-tight still come back within one step
        x = quantize_absmax(rng.standard_normal(256))
        x = type(x)(np.clip(x.values, -100, 100).astype(np.int8), x.scale)
        y, h = layer_forward(x, np.zeros(256), lw, LUTS)
        assert np.max(np.abs(y.dequantize() - x.dequantize())) <= y.scale + 1e-12
        assert not h.any()


def test_zero_forget_weights_make_state_a_function_of_c():
    rng = np.random.default_rng(6)
    lw = layer(6)
    mats = dict(lw.matrices()) | {"W_f": np.zeros_like(lw.W_f)}
    lw0 = LayerWeights(**mats, norms=lw.norms)
    # changing the output and GLU weights must not move the state
    other = LayerWeights(**(mats | {"W_g": -lw.W_g, "W_o": -lw.W_o, "W_d": -lw.W_d}), norms=lw.norms)
    x = qrand(rng)
    f = sigmoid_lut(LUTS.sigmoid, np.zeros(256))
    c = bitlinear(x, lw.W_c, lw.norms["W_c"], LUTS).dequantize()
    for weights in (lw0, other):
        _, h1 = mlgru_step(x, np.zeros(256), weights, LUTS)
        _, h2 = mlgru_step(x, h1, weights, LUTS)
        np.testing.assert_array_equal(h2, mix_gate(f, mix_gate(f, np.zeros(256), c), c))


@settings(max_examples=50)
@given(seed=st.integers(0, 2**32 - 1))
def test_convex_combination_elementwise(seed):
    rng = np.random.default_rng(seed)
    n = 10_000
    z = rng.normal(0, 6, n)
    f = sigmoid_lut(LUTS.sigmoid, z)
    h_prev, c = rng.normal(0, 10, n), rng.normal(0, 10, n)
    h = mix_gate(f, h_prev, c)
    assert np.all(h >= np.minimum(h_prev, c)) and np.all(h <= np.maximum(h_prev, c))
    ref = mix_gate(sigmoid(z), h_prev, c)
    assert np.all(ref >= np.minimum(h_prev, c)) and np.all(ref <= np.maximum(h_prev, c))


def test_generate_one_step_is_layer_forward():
    lw = layer(7)
    x = random_inputs(SPEC1, 7, 1)[0]
    out = generate(DecodeSession(SPEC1, [lw]), x)
    y, _ = layer_forward(quantize_absmax(x[0]), np.zeros(256), lw, LUTS)
    assert out == [y]


def test_zero_model_outputs_equal_inputs():
    spec = ModelSpec("z", 256, 3, 1e6)
    xs = random_inputs(spec, 8, 3)[0]
    outs = generate(DecodeSession(spec, zero_model(spec)), xs, steps=3)
    for x, y in zip(xs, outs):
        q = quantize_absmax(x)
        assert np.max(np.abs(y.values.astype(int) - q.values)) <= 1
        assert y == q  # absmax-tight inputs requantize exactly


def test_multi_step_vs_oracle():
    spec = ModelSpec("t4", 256, 4, 1e6)
    for seed in range(3):
        layers = random_model(spec, seed)
        xs = random_inputs(spec, seed, 8)[0]
        q = generate(DecodeSession(spec, layers), xs)
        ref = float_reference_forward(layers, xs)
        assert max(relative_l2(a.dequantize(), b) for a, b in zip(q, ref)) <= 0.05


def test_error_growth_at_most_linear_in_depth():
    errs = {}
    for L in (1, 2, 4, 8):
        spec = ModelSpec("t", 256, L, 1e6)
        e = []
        for seed in range(3):
            layers = random_model(spec, seed)
            xs = random_inputs(spec, seed, 4)[0]
            q = generate(DecodeSession(spec, layers), xs)
            e.append(max(relative_l2(a.dequantize(), b) for a, b in zip(q, float_reference_forward(layers, xs))))
        errs[L] = np.mean(e)
    for L in (2, 4, 8):
        assert errs[L] <= L * errs[1]


def test_threads_do_not_change_generate():
    spec = ModelSpec("t2", 256, 2, 1e6)
    layers = random_model(spec, 9)
    xs = random_inputs(spec, 9, 3)[0]
    a = generate(DecodeSession(spec, layers), xs)
    b = generate(DecodeSession(spec, layers, engine=Engine(threads=3)), xs)
    assert a == b


def test_random_model_reproducible_and_layer_independent():
    spec = ModelSpec("t3", 256, 3, 1e6)
    a, b = random_model(spec, 11), random_model(spec, 11)
    for la, lb in zip(a, b):
        for (_, Wa), (_, Wb) in zip(la.matrices(), lb.matrices()):
            np.testing.assert_array_equal(Wa, Wb)
    # layer i does not depend on how many layers precede it
    np.testing.assert_array_equal(random_layer(spec, 11, 2).W_o, a[2].W_o)
    assert not np.array_equal(random_model(spec, 12)[0].W_f, a[0].W_f)


def test_p0_one_is_zero_model_and_p0_is_respected():
    assert all(not W.any() for lw in random_model(SPEC1, 0, p0=1.0) for _, W in lw.matrices())
    W = random_layer(SPEC1, 0, 0, p0=0.5).W_gg[:, :683]
    assert abs(np.mean(W == 0) - 0.5) < 0.01
    assert abs(np.mean(W == 1) - np.mean(W == -1)) < 0.01


def test_random_layer_shapes_follow_padding():
    lw = layer(0)
    assert (lw.dim, lw.hidden) == (256, 768)
    assert not lw.W_gg[:, 683:].any() and not lw.W_d[683:].any()
    assert not lw.norms["W_d"][683:].any()


def test_parameter_count_of_370m_layout():
    m = MODEL_PRESETS["370m"]
    assert abs(m.logical_params / 290e6 - 1) <= 0.05
    assert m.allocated_params == 24 * (4 * 1024**2 + 3 * 1024 * 2816)


def test_unpadded_width_keeps_padding_zero():
    spec = ModelSpec("odd", 300, 2, 1e6)
    layers = random_model(spec, 1)
    xs = random_inputs(spec, 1, 2)[0]
    s = DecodeSession(spec, layers)
    outs = generate(s, xs)
    assert all(not q.values[300:].any() for q in outs)
    assert all(not h[300:].any() for h in s.hidden)
    ref = float_reference_forward(layers, xs)
    assert max(relative_l2(a.dequantize(), b) for a, b in zip(outs, ref)) <= 0.05


def test_session_validation():
    with pytest.raises(ShapeMismatch):
        DecodeSession(ModelSpec("x", 256, 2, 1e6), [layer(0)])
    with pytest.raises(ShapeMismatch):
        DecodeSession(ModelSpec("x", 512, 1, 1e6), [layer(0)])
    s = DecodeSession(SPEC1, [layer(0)])
    with pytest.raises(ShapeMismatch):
        s.step(np.zeros(257))
    with pytest.raises(UsageError):
        generate(s, [], steps=0)
    with pytest.raises(UsageError):
        generate(s, [np.zeros(256)], steps=2)
    with pytest.raises(ShapeMismatch):
        mlgru_step(quantize_absmax(np.ones(256)), np.zeros(5), layer(0), LUTS)


def test_layer_weights_validation():
    z = LayerWeights.zeros(256, 768)
    with pytest.raises(ShapeMismatch):
        LayerWeights(**(dict(z.matrices()) | {"W_d": np.zeros((768, 512), np.int8)}))
    with pytest.raises(ShapeMismatch):
        LayerWeights(**dict(z.matrices()), norms={"W_f": np.ones(3)})
    with pytest.raises(ShapeMismatch):
        LayerWeights(**(dict(z.matrices()) | {"W_f": np.zeros((256, 256), np.int16)}))


def test_session_reset_restores_start():
    lw = layer(1)
    xs = random_inputs(SPEC1, 1, 2)[0]
    s = DecodeSession(SPEC1, [lw])
    first = generate(s, xs)
    s.reset()
    assert generate(s, xs) == first and s.step_count == 2


def test_layer_oracle_self_consistent():
    # the oracle applied with zero weights is an exact identity
    x = np.random.default_rng(0).standard_normal(256)
    y, h = layer_ref(x, np.zeros(256), LayerWeights.zeros(256, 768))
    np.testing.assert_array_equal(y, x)
    assert not h.any()
