import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ternsim.errors import InvalidBatch, LengthMismatch, ShapeMismatch
from ternsim.tmat import (
    BatchGroupPlan,
    EngineCounters,
    TMatCoreConfig,
    batched_matvec,
    matvec_cycles,
    tdot,
    tiled_matvec,
    tmat_core,
    tmul,
)


def naive_matvec(x, W):
    return np.asarray(x, dtype=np.int64) @ np.asarray(W, dtype=np.int64)


def rand_x(rng, n):
    return rng.integers(-128, 128, size=n, dtype=np.int8)


def rand_w(rng, shape):
    return rng.integers(-1, 2, size=shape, dtype=np.int8)


@pytest.mark.parametrize("w, out", [(1, 57), (-1, -57), (0, 0)])
def test_tmul(w, out):
    assert tmul(57, w) == out


def test_tdot_examples():
    assert tdot(np.ones(256, np.int8), np.ones(256, np.int8)) == 256
    alt = np.tile(np.array([1, -1], np.int8), 128)
    assert tdot(np.ones(256, np.int8), alt) == 0


def test_tdot_random_vs_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, w = rand_x(rng, 256), rand_w(rng, 256)
        assert tdot(x, w) == sum(int(a) * int(b) for a, b in zip(x, w))


def test_tdot_length_mismatch():
    with pytest.raises(LengthMismatch):
        tdot(np.ones(3, np.int8), np.ones(4, np.int8))


def test_core_zero_and_identity():
    rng = np.random.default_rng(1)
    x = rand_x(rng, 256)
    assert not tmat_core(x, np.zeros((256, 256), np.int8)).any()
    out = tmat_core(x, np.eye(256, dtype=np.int8))
    assert out.dtype == np.int32
    np.testing.assert_array_equal(out, x.astype(np.int32))


def test_core_random_vs_naive():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x, W = rand_x(rng, 256), rand_w(rng, (256, 256))
        np.testing.assert_array_equal(tmat_core(x, W), naive_matvec(x, W))


def test_negation_precompute_matches_branch_form():
    rng = np.random.default_rng(3)
    x, W = rand_x(rng, 256), rand_w(rng, (256, 256))
    branch = [sum(tmul(int(x[i]), int(W[i, j])) for i in range(256)) for j in range(256)]
    np.testing.assert_array_equal(tmat_core(x, W), branch)


def test_core_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        tmat_core(np.zeros(128, np.int8), np.zeros((256, 256), np.int8))


def test_tiled_single_tile_is_core():
    rng = np.random.default_rng(4)
    x, W = rand_x(rng, 256), rand_w(rng, (256, 256))
    np.testing.assert_array_equal(tiled_matvec(x, W), tmat_core(x, W))


def test_tiled_1024_vs_naive():
    rng = np.random.default_rng(5)
    x, W = rand_x(rng, 1024), rand_w(rng, (1024, 1024))
    np.testing.assert_array_equal(tiled_matvec(x, W), naive_matvec(x, W))


def test_tiled_stacked_identity_doubles():
    rng = np.random.default_rng(6)
    x = rand_x(rng, 512)
    I = np.eye(256, dtype=np.int8)
    W = np.vstack([I, I])
    np.testing.assert_array_equal(tiled_matvec(x, W), x[:256].astype(np.int32) + x[256:])
    x_same = np.concatenate([x[:256], x[:256]])
    np.testing.assert_array_equal(tiled_matvec(x_same, W), 2 * x[:256].astype(np.int32))


def test_tiled_rejects_unaligned():
    with pytest.raises(ShapeMismatch):
        tiled_matvec(np.zeros(300, np.int8), np.zeros((300, 256), np.int8))


def test_extreme_values_do_not_overflow():
    x = np.full(1024, -128, np.int8)
    W = np.full((1024, 256), -1, np.int8)
    assert (tiled_matvec(x, W) == 128 * 1024).all()


@pytest.mark.parametrize("n", [1, 4, 16])
def test_batched_vs_per_batch_oracle(n):
    rng = np.random.default_rng(7 + n)
    W = rand_w(rng, (512, 768))
    xs = [rand_x(rng, 512) for _ in range(n)]
    outs = batched_matvec(xs, W, BatchGroupPlan(n))
    for x, o in zip(xs, outs):
        np.testing.assert_array_equal(o, naive_matvec(x, W))
    if n == 1:
        np.testing.assert_array_equal(outs[0], tiled_matvec(xs[0], W))


def test_batched_equal_inputs_equal_outputs():
    rng = np.random.default_rng(8)
    W, x = rand_w(rng, (256, 256)), rand_x(rng, 256)
    outs = batched_matvec([x] * 16, W, BatchGroupPlan(16))
    assert all(np.array_equal(o, outs[0]) for o in outs)


def test_weight_fetches_independent_of_batch():
    rng = np.random.default_rng(9)
    W = rand_w(rng, (512, 1024))
    counts = []
    for n in (1, 2, 4, 16):
        c = EngineCounters()
        batched_matvec([rand_x(rng, 512) for _ in range(n)], W, BatchGroupPlan(n), counter=c)
        counts.append(c.tile_fetches)
    assert counts == [8, 8, 8, 8]


def test_invalid_batch():
    with pytest.raises(InvalidBatch):
        BatchGroupPlan(3)
    with pytest.raises(InvalidBatch):
        matvec_cycles(256, 256, 5)


def test_group_plan_partitions_lanes():
    plan = BatchGroupPlan(4)
    lanes = [l for g in plan.groups for l in g]
    assert lanes == list(range(256)) and plan.lanes_per_group == 64


@pytest.mark.parametrize(
    "d, dp, n, cycles", [(1024, 1024, 1, 24), (256, 256, 1, 9), (2048, 2048, 1, 72)]
)
def test_matvec_cycles(d, dp, n, cycles):
    assert matvec_cycles(d, dp, n) == cycles


def test_matvec_cycles_monotone():
    dims = [256, 512, 1024, 2048]
    batches = [1, 2, 4, 8, 16]
    for d, dp, n in itertools.product(dims, dims, batches):
        base = matvec_cycles(d, dp, n)
        assert matvec_cycles(2 * d, dp, n) >= base
        assert matvec_cycles(d, 2 * dp, n) >= base
        if n < 16:
            assert matvec_cycles(d, dp, 2 * n) >= base


def test_counter_records_cycles():
    c = EngineCounters()
    tiled_matvec(np.zeros(1024, np.int8), np.zeros((1024, 1024), np.int8), counter=c)
    assert (c.calls, c.tile_fetches, c.cycles) == (1, 16, 24)


def test_core_config_validation():
    with pytest.raises(ValueError):
        TMatCoreConfig(core_dim=100)
    with pytest.raises(ValueError):
        TMatCoreConfig(reduction_cycles=-1)


def test_small_core_config():
    rng = np.random.default_rng(10)
    cfg = TMatCoreConfig(core_dim=16, reduction_cycles=2)
    x, W = rand_x(rng, 64), rand_w(rng, (64, 32))
    np.testing.assert_array_equal(tiled_matvec(x, W, cfg), naive_matvec(x, W))
    assert matvec_cycles(64, 32, 1, cfg) == 4 * 2 + 2


@settings(max_examples=25, deadline=None)
@given(
    d=st.sampled_from([256, 512]),
    dp=st.sampled_from([256, 512, 768]),
    seed=st.integers(0, 2**31),
    threads=st.sampled_from([1, 2, 4]),
)
def test_threads_do_not_change_results(d, dp, seed, threads):
    rng = np.random.default_rng(seed)
    x, W = rand_x(rng, d), rand_w(rng, (d, dp))
    np.testing.assert_array_equal(tiled_matvec(x, W, threads=threads), tiled_matvec(x, W))
