import numpy as np
import pytest

from rosaq.harness.metrics import magnitude_stats, rank_of, reconstruction_error, spearman, top_ratio
from rosaq.pipeline import CalibrationAccumulator


def test_reconstruction_error_cases():
    a = np.array([[3.0, 4.0]])
    assert reconstruction_error(a, a.copy()) == 0.0
    assert reconstruction_error(a, np.zeros((1, 2))) == 1.0
    assert reconstruction_error(np.zeros(2), np.ones(2)) == float("inf")
    assert reconstruction_error(np.zeros(2), np.zeros(2)) == 0.0
    with pytest.raises(ValueError, match="shape"):
        reconstruction_error(np.zeros(2), np.zeros(3))


def test_ranks_and_ties():
    np.testing.assert_array_equal(rank_of([10, 30, 20, 20]), [1, 4, 2.5, 2.5])
    assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_magnitude_tables(rng):
    acc = CalibrationAccumulator(keep_samples=True)
    acc.accumulate("x", rng.standard_normal((500, 6)) * np.array([1, 5, 2, 1, 1, 1]))
    rows = magnitude_stats(acc, "x", top=3)
    assert [r["rank"] for r in rows] == [1, 2, 3]
    assert rows[0]["channel"] == 1
    rot = acc.rotation("x")
    rrows = magnitude_stats(acc, "x", rot, top=None)
    assert len(rrows) == 6 and "eigenvalue" in rrows[0]
    assert top_ratio(rows) == rows[0]["magnitude"] / rows[1]["magnitude"]


def test_rotated_stats_need_samples(rng):
    acc = CalibrationAccumulator().accumulate("x", rng.standard_normal((10, 3)))
    with pytest.raises(ValueError, match="samples"):
        magnitude_stats(acc, "x", acc.rotation("x"))
