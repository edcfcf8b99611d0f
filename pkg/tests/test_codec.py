import itertools
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ternsim import codec
from ternsim.codec import (
    PackedTensor,
    decode_block,
    decode_to_2bit,
    encode_block,
    pack_tensor,
    unpack_tensor,
)
from ternsim.errors import BadMagic, InvalidCode, ShapeMismatch, TruncatedPayload, UnsupportedVersion

ALL_BLOCKS = list(itertools.product((-1, 0, 1), repeat=5))


def positional_code(block):
    digit = {0: 0, 1: 1, -1: 2}
    return sum(digit[t] * 3 ** (4 - i) for i, t in enumerate(block))


@pytest.mark.parametrize(
    "block, code",
    [((0, 0, 0, 0, 0), 0), ((1, 1, 1, 1, 1), 121), ((-1, 0, 0, 1, 1), 166)],
)
def test_encode_examples(block, code):
    assert encode_block(block) == code
    assert decode_block(code) == block


def test_decode_rejects_reserved_codes():
    for c in range(243, 256):
        with pytest.raises(InvalidCode):
            decode_block(c)


@pytest.mark.parametrize(
    "code, two_bit",
    [
        (0, (0b00,) * 5),
        (166, (0b11, 0b00, 0b00, 0b01, 0b01)),
        (121, (0b01,) * 5),
    ],
)
def test_decode_to_2bit_examples(code, two_bit):
    assert decode_to_2bit(code) == two_bit


def test_exhaustive_bijection():
    codes = [encode_block(b) for b in ALL_BLOCKS]
    assert sorted(codes) == list(range(243))
    for b in ALL_BLOCKS:
        assert encode_block(b) == positional_code(b)
        assert decode_block(encode_block(b)) == b
    for c in range(243):
        assert encode_block(decode_block(c)) == c


def test_vectorized_matches_scalar_on_all_blocks():
    flat = np.array(ALL_BLOCKS, dtype=np.int8).ravel()
    codes = codec.encode_array(flat)
    assert codes.tolist() == [positional_code(b) for b in ALL_BLOCKS]
    np.testing.assert_array_equal(codec.decode_array(codes), flat)


def test_2bit_never_emits_reserved():
    for c in range(243):
        assert 0b10 not in decode_to_2bit(c)


def test_2bit_roundtrip():
    t = np.array([-1, 0, 1], dtype=np.int8)
    np.testing.assert_array_equal(codec.twobit_to_trit(codec.trit_to_2bit(t)), t)


@pytest.mark.parametrize("n", [20, 40, 1000, 65540])
def test_storage_ratio_is_exactly_point_eight(n):
    assert codec.storage_ratio_vs_2bit(n) == 0.8


def test_pack_examples():
    assert pack_tensor(np.zeros(5, np.int8)).payload == bytes([0])
    assert pack_tensor(np.array([1, 0, 0, 0, 0, 1], np.int8)).payload == bytes([81, 81])


def test_unpack_examples():
    np.testing.assert_array_equal(unpack_tensor(PackedTensor((5,), bytes([0]))), np.zeros(5))
    np.testing.assert_array_equal(
        unpack_tensor(PackedTensor((5,), bytes([166]))), [-1, 0, 0, 1, 1]
    )
    with pytest.raises(ShapeMismatch):
        unpack_tensor(PackedTensor((7,), bytes([166])))


def test_unpack_names_offset_of_bad_byte():
    with pytest.raises(InvalidCode) as e:
        unpack_tensor(PackedTensor((10,), bytes([3, 250])))
    assert e.value.offset == 1


def test_pad_trits_are_zero():
    p = pack_tensor(np.array([1, 1, 1, 1, 1, -1], np.int8))
    assert codec.decode_array(np.frombuffer(p.payload, np.uint8))[6:].tolist() == [0, 0, 0, 0]


def test_roundtrip_256x256():
    rng = np.random.default_rng(0)
    t = rng.integers(-1, 2, size=(256, 256), dtype=np.int8)
    p = pack_tensor(t)
    assert p.nbytes == 256 * 256 // 5 + 1
    np.testing.assert_array_equal(unpack_tensor(p), t)


@settings(max_examples=60, deadline=None)
@given(
    shape=st.lists(st.integers(1, 9), min_size=1, max_size=3),
    seed=st.integers(0, 2**32 - 1),
)
def test_roundtrip_property(shape, seed):
    t = np.random.default_rng(seed).integers(-1, 2, size=shape, dtype=np.int8)
    p = pack_tensor(t)
    assert p.nbytes == codec.packed_nbytes(t.size)
    assert max(p.payload) < 243
    np.testing.assert_array_equal(unpack_tensor(p), t)


# -- weight file --


def test_empty_file_roundtrip(tmp_path):
    path = tmp_path / "w.ter"
    codec.write_weight_file(path, [])
    first = path.read_bytes()
    assert first == b"TER1" + struct.pack("<HI", 1, 0)
    assert codec.read_weight_file(path) == []
    codec.write_weight_file(path, codec.read_weight_file(path))
    assert path.read_bytes() == first


def test_file_roundtrip_random_tensor(tmp_path):
    rng = np.random.default_rng(1)
    t = rng.integers(-1, 2, size=(256, 256), dtype=np.int8)
    path = tmp_path / "w.ter"
    codec.write_weight_file(path, [("layer0.w", pack_tensor(t)), ("tiny", pack_tensor(t[0, :3]))])
    (n0, p0), (n1, p1) = codec.read_weight_file(path)
    assert (n0, n1) == ("layer0.w", "tiny")
    np.testing.assert_array_equal(unpack_tensor(p0), t)
    np.testing.assert_array_equal(unpack_tensor(p1), t[0, :3])


def test_file_layout_bytes():
    data = codec.dumps_weights([("ab", PackedTensor((5,), bytes([166])))])
    expected = (
        b"TER1" + struct.pack("<HI", 1, 1)
        + struct.pack("<H", 2) + b"ab"
        + struct.pack("<B", 1) + struct.pack("<I", 5)
        + struct.pack("<Q", 1) + bytes([166])
    )
    assert data == expected


def test_bad_magic():
    data = bytearray(codec.dumps_weights([]))
    data[0] = ord("X")
    with pytest.raises(BadMagic):
        codec.read_weights(bytes(data))


def test_unsupported_version():
    data = b"TER1" + struct.pack("<HI", 2, 0)
    with pytest.raises(UnsupportedVersion):
        codec.read_weights(data)


def test_truncated():
    data = codec.dumps_weights([("w", pack_tensor(np.ones(50, np.int8)))])
    with pytest.raises(TruncatedPayload):
        codec.read_weights(data[:-3])


def test_invalid_code_in_file_reports_file_offset():
    data = bytearray(codec.dumps_weights([("w", pack_tensor(np.ones(50, np.int8)))]))
    data[-4] = 255
    with pytest.raises(InvalidCode) as e:
        codec.read_weights(bytes(data))
    assert e.value.offset == len(data) - 4


def test_290m_trits_pack_to_58_mb():
    assert codec.packed_nbytes(290_000_000) == 58_000_000
