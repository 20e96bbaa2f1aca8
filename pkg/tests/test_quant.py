import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rosaq.quant import (
    QuantConfig,
    QuantizedGroup,
    awq_channel_scales,
    awq_layer_error,
    awq_scales_from_means,
    awq_search,
    dequantize_group,
    dequantize_rows,
    pack_codes,
    packed_size,
    quantize_group,
    quantize_rows,
    rtn_quantize,
    unpack_codes,
)


def oracle_rtn(values, bits):
    """Scalar min-max round-to-nearest, one element at a time."""
    lo = min(values)
    hi = max(values)
    qmax = 2**bits - 1
    scale = (hi - lo) / qmax
    codes = []
    for v in values:
        if scale == 0.0:
            codes.append(0)
            continue
        c = int(np.floor((v - lo) / scale + 0.5))
        codes.append(min(max(c, 0), qmax))
    return codes, scale, lo


def oracle_pack(codes, bits):
    out = bytearray(packed_size(len(codes), bits))
    for i, c in enumerate(codes):
        for b in range(bits):
            if (c >> b) & 1:
                pos = i * bits + b
                out[pos // 8] |= 1 << (pos % 8)
    return bytes(out)


def test_pack_examples():
    assert pack_codes([1, 2], 4) == b"\x21"
    assert pack_codes([7, 7, 7], 3) == b"\xff\x01"
    assert pack_codes([], 4) == b""


def test_bits2_example():
    g = quantize_group([0.0, 1.0, 2.0, 3.0], 2)
    assert g.scale == 1.0 and g.offset == 0.0
    np.testing.assert_array_equal(unpack_codes(g.codes, 2, 4), [0, 1, 2, 3])


def test_constant_group():
    g = quantize_group(np.full(128, 0.7), QuantConfig(4, 128))
    assert g.scale == 0.0
    assert not any(g.codes)
    np.testing.assert_array_equal(dequantize_group(g), np.full(128, 0.7))


def test_extremes_round_trip_exactly(rng):
    v = rng.standard_normal(128)
    deq = dequantize_group(quantize_group(v, 4))
    assert deq[np.argmin(v)] == v.min()


@pytest.mark.parametrize("bits", [3, 4])
def test_matches_oracle(kernels, rng, bits):
    for _ in range(50):
        v = rng.standard_normal(128) * rng.uniform(0.01, 10)
        g = quantize_group(v, bits)
        codes, scale, lo = oracle_rtn(list(v), bits)
        assert g.codes == oracle_pack(codes, bits)
        assert g.scale == scale and g.offset == lo
        np.testing.assert_allclose(dequantize_group(g), scale * np.array(codes) + lo, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(bits=st.integers(1, 8), data=st.data())
def test_pack_round_trip(bits, data):
    codes = data.draw(hnp.arrays(np.uint8, st.integers(0, 200), elements=st.integers(0, 2**bits - 1)))
    packed = pack_codes(codes, bits)
    assert packed == oracle_pack(codes.tolist(), bits)
    np.testing.assert_array_equal(unpack_codes(packed, bits, len(codes)), codes)


@settings(max_examples=60, deadline=None)
@given(v=hnp.arrays(np.float64, st.integers(1, 256),
                    elements=st.floats(-1e6, 1e6, allow_nan=False)),
       bits=st.sampled_from([3, 4]))
def test_error_within_half_step(v, bits):
    g = quantize_group(v, bits)
    err = np.abs(dequantize_group(g) - v)
    assert np.all(err <= 0.5 * g.scale * (1 + 1e-9) + 1e-9 * np.max(np.abs(v)))


def test_pack_rejects_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        pack_codes([16], 4)


def test_unpack_truncated():
    with pytest.raises(ValueError, match="truncated"):
        unpack_codes(b"\x00", 4, 3)


def test_group_byte_length_checked():
    with pytest.raises(ValueError, match="bytes"):
        QuantizedGroup(4, 1.0, 0.0, 4, b"\x00")


@pytest.mark.parametrize("kw", [{"bits": 2}, {"bits": 5}, {"group_size": 100}, {"group_size": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        QuantConfig(**kw)


def test_quantize_group_rejects_bad_input():
    with pytest.raises(ValueError):
        quantize_group([], 4)
    with pytest.raises(ValueError):
        quantize_group([1.0, np.nan], 4)
    with pytest.raises(ValueError, match="group size"):
        quantize_group(np.ones(130), QuantConfig(4, 128))


def test_zero_scale_with_codes_rejected():
    g = QuantizedGroup(4, 0.0, 1.0, 2, b"\x11")
    with pytest.raises(ValueError, match="zero-scale"):
        dequantize_group(g)


def test_rows_round_trip_with_partial_block(kernels, rng):
    w = rng.standard_normal((200, 6))
    cfg = QuantConfig(3, 64)
    groups, deq = quantize_rows(w, cfg)
    assert len(groups) == 4 * 6 and groups[-1].count == 8
    assert np.array_equal(dequantize_rows(groups, 200, 6, 64), deq)
    # each column slice equals the single-group quantizer
    g = quantize_group(w[64:128, 2], 3)
    assert groups[6 + 2] == g


def test_rtn_quantize_is_idempotent(rng):
    cfg = QuantConfig(4, 32)
    once = rtn_quantize(rng.standard_normal((64, 8)), cfg)
    np.testing.assert_allclose(rtn_quantize(once, cfg), once, atol=1e-12)


def test_awq_scales(rng):
    x = rng.standard_normal((100, 5))
    x[:, 3] = 0.0
    s = awq_channel_scales(x, 0.5)
    np.testing.assert_allclose(s.per_channel_scale[:3], np.mean(np.abs(x[:, :3]), axis=0) ** 0.5)
    assert s.per_channel_scale[3] == 1e-8
    assert np.all(awq_channel_scales(x, 0.0).per_channel_scale == 1.0)
    with pytest.raises(ValueError):
        awq_scales_from_means(np.ones(3), 1.5)


def test_awq_error_matches_explicit(rng):
    x = rng.standard_normal((64, 32)) * np.linspace(0.1, 3, 32)
    w = rng.standard_normal((32, 8))
    cfg = QuantConfig(4, 32)
    sv = awq_channel_scales(x, 0.5)
    s = sv.per_channel_scale
    explicit = np.linalg.norm(x @ w - (x / s) @ rtn_quantize(s[:, None] * w, cfg)) ** 2
    assert awq_layer_error(w, x.T @ x, sv, cfg) == pytest.approx(explicit, rel=1e-10)


def test_awq_search_picks_minimum(rng):
    x = rng.standard_normal((64, 32)) * np.linspace(0.1, 3, 32)
    w = rng.standard_normal((32, 8))
    best, errs = awq_search(w, x.T @ x, np.mean(np.abs(x), axis=0), QuantConfig(4, 32))
    assert errs[best.alpha] == min(errs.values())
    assert set(errs) == {0.0, 0.25, 0.5, 0.75, 1.0}
