import os
import subprocess
import sys

import numpy as np
import pytest

from rosaq import _backend, _fallback


def _compiled():
    try:
        return _backend.get("cython")
    except ImportError:
        pytest.skip("compiled extension not built")


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.get("fortran")


def test_env_forces_fallback():
    env = {**os.environ, "ROSAQ_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "import rosaq; print(rosaq.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("n", [1, 2, 17, 64])
def test_jacobi_parity(rng, n):
    k = _compiled()
    x = rng.standard_normal((n + 5, n))
    a = x.T @ x
    va, sa, ca = k.jacobi_sweeps(a.copy(), 100, 1e-15)
    a2 = a.copy()
    vb, sb, cb = _fallback.jacobi_sweeps(a2, 100, 1e-15)
    assert (sa, ca) == (sb, cb)
    assert np.array_equal(np.asarray(va), np.asarray(vb))


@pytest.mark.parametrize("bits", [3, 4])
def test_quantize_and_pack_parity(rng, bits):
    k = _compiled()
    w = rng.standard_normal((77, 9))
    w[:, 3] = 1.5
    for x, y in zip(k.quantize_columns(w, bits), _fallback.quantize_columns(w, bits)):
        assert np.array_equal(np.asarray(x), np.asarray(y))
    codes = rng.integers(0, 2**bits, size=(5, 77), dtype=np.uint8)
    pk = np.asarray(k.pack_rows(codes, bits))
    assert np.array_equal(pk, _fallback.pack_rows(codes, bits))
    assert np.array_equal(np.asarray(k.unpack_rows(pk, bits, 77)), codes)
