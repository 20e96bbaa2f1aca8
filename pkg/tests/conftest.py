import numpy as np
import pytest

from rosaq import _backend
from rosaq.model import BlockConfig, BlockWeights, capture_calibration
from rosaq.harness.synthetic import Anisotropic

BACKENDS = ["python"] + (["cython"] if _backend.NAME == "cython" else [])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=BACKENDS)
def kernels(request, monkeypatch):
    """Run a test once per available kernel backend."""
    mod = _backend.get(request.param)
    monkeypatch.setattr(_backend, "kernels", mod)
    return mod


@pytest.fixture(scope="session")
def small_cfg():
    return BlockConfig(d=128, n_heads=2, d_ff=256)


@pytest.fixture(scope="session")
def small_block(small_cfg):
    """Toy weights plus a calibration accumulator and held-out input."""
    rng = np.random.default_rng(7)
    weights = BlockWeights.random(small_cfg, rng)
    src = Anisotropic(small_cfg.d, rng)
    acc = capture_calibration(weights, src.sample(rng, 4, 64))
    held = src.sample(rng, 2, 32)
    return weights, acc, held


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test asserts on the same outcome."""

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
