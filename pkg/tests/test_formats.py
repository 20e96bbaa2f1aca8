import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rosaq.errors import FormatError
from rosaq.harness import formats
from rosaq.harness.store import (
    load_accumulator,
    load_model,
    load_quantized,
    save_accumulator,
    save_model,
    save_quantized,
)
from rosaq.model import block_forward
from rosaq.pipeline import CalibrationAccumulator, LayerQuantPlan, quantize_model, transform_weight
from rosaq.quant import QuantConfig

finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5), elements=finite32))
def test_tensor_round_trip_bitwise(arr):
    out = formats.decode_tensor(formats.encode_tensor(arr))
    assert out.shape == arr.shape
    assert out.tobytes() == arr.tobytes()


def test_tensor_header_layout():
    blob = formats.encode_tensor(np.zeros((2, 3), dtype=np.float32))
    assert blob[:4] == b"RQTF"
    assert struct.unpack_from("<3I2Q", blob, 4) == (1, 0, 2, 2, 3)
    assert len(blob) == 16 + 16 + 24


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XXXX" + b[4:], "bad magic"),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
    (lambda b: b[:4 + 4] + struct.pack("<I", 3) + b[12:], "dtype"),
    (lambda b: b[:-1], "payload"),
])
def test_tensor_corruption_detected(mutate, msg):
    blob = formats.encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(FormatError, match=msg):
        formats.decode_tensor(mutate(blob))


def test_tensor_rejects_nan():
    with pytest.raises(ValueError):
        formats.encode_tensor(np.array([np.nan]))


@pytest.mark.parametrize("bits,k,n_in", [(4, 32, 160), (3, 0, 96), (4, 64, 64), (3, 32, 100)])
def test_quant_round_trip(rng, bits, k, n_in):
    w = rng.standard_normal((n_in, 5))
    mpw = transform_weight(w, None, np.arange(k), QuantConfig(bits, 64)).to_storage()
    blob = formats.encode_quant(mpw)
    assert len(blob) == formats.quantfile_size(n_in, 5, k, bits, 64)
    back = formats.decode_quant(blob)
    assert formats.encode_quant(back) == blob
    assert back.groups == mpw.groups
    assert np.array_equal(back.permutation, mpw.permutation)
    assert np.array_equal(back.reconstruct_rotated(), mpw.reconstruct_rotated())


def test_quantfile_size_by_hand():
    # header 32 + perm 4*256 + salient 4*32*8 + 2 blocks * 8 cols * (8 + 64 | 8 + 48)
    assert formats.quantfile_size(256, 8, 32, 4, 128) == 32 + 1024 + 1024 + 8 * 72 + 8 * 56


def test_quant_corruption(rng):
    mpw = transform_weight(rng.standard_normal((64, 2)), None, [], QuantConfig(4, 32))
    blob = formats.encode_quant(mpw)
    with pytest.raises(FormatError, match="bad magic"):
        formats.decode_quant(b"RQTF" + blob[4:])
    with pytest.raises(FormatError, match="bytes, expected"):
        formats.decode_quant(blob + b"\x00")
    bad_bits = blob[:8] + struct.pack("<I", 5) + blob[12:]
    with pytest.raises(FormatError):
        formats.decode_quant(bad_bits)


def test_atomic_write_leaves_no_temp(tmp_path):
    formats.write_tensor(tmp_path / "a.rqtf", np.ones(3))
    assert [p.name for p in tmp_path.iterdir()] == ["a.rqtf"]


def test_model_round_trip(tmp_path, small_block):
    weights, _, held = small_block
    save_model(weights, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for name, arr in weights.tensors().items():
        assert np.array_equal(getattr(back, name), arr.astype(np.float32))


def test_model_manifest_errors(tmp_path):
    (tmp_path / "m.json").write_text('{"format": "other"}')
    with pytest.raises(FormatError):
        load_model(tmp_path / "m.json")
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(FormatError, match="invalid JSON"):
        load_model(tmp_path / "m.json")


def test_accumulator_round_trip(tmp_path, rng):
    acc = CalibrationAccumulator(keep_samples=True)
    acc.accumulate("a/b", rng.standard_normal((5, 3))).accumulate("c", rng.standard_normal((4, 2)))
    save_accumulator(acc, tmp_path / "acc.npz")
    back = load_accumulator(tmp_path / "acc.npz")
    for site, st_ in acc.sites.items():
        assert np.array_equal(back[site].gram, st_.gram)
        assert back[site].count == st_.count
        assert np.array_equal(back[site].sample_matrix(), st_.sample_matrix())


def test_accumulator_bad_file(tmp_path):
    (tmp_path / "x.npz").write_bytes(b"nope")
    with pytest.raises(FormatError):
        load_accumulator(tmp_path / "x.npz")


def test_quantized_round_trip_equals_storage(tmp_path, small_block):
    weights, acc, held = small_block
    block = quantize_model(weights, acc, LayerQuantPlan.default(weights.cfg))
    save_quantized(block, tmp_path / "q")
    back = load_quantized(tmp_path / "q")
    assert np.array_equal(block_forward(held, back), block_forward(held, block.to_storage()))
    # shared input rotations stay shared after loading
    assert back.layers["W_Q"].rotation is back.layers["W_K"].rotation
    assert back.down_scales.alpha == 0.5
