import json

import numpy as np
import pytest

from rosaq.harness.ablation import (
    HeadwiseAblationConfig,
    paired_t,
    run_ablation_headwise,
    run_ablation_salient,
    run_magnitude_study,
)
from rosaq.harness.bench import BenchConfig, plan_storage, run_bench, storage_report
from rosaq.harness.formats import quantfile_size
from rosaq.model import BlockConfig
from rosaq.pipeline import LayerQuantPlan

SMALL_SALIENT = {"seeds": 2, "d": 128, "n_heads": 2, "d_ff": 256, "calib_seqs": 2,
                 "calib_len": 64, "eval_seqs": 1, "eval_len": 32}


def test_salient_report_shape_and_reproducible():
    a = run_ablation_salient(SMALL_SALIENT)
    b = run_ablation_salient(SMALL_SALIENT)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert len(a["per_seed"]) == 2
    assert set(a["per_seed"][0]["errors"]) == {"top", "bottom", "random", "top_and_bottom"}
    assert a["config"]["base_seed"] == 0


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv("ROSAQ_SEED", "11")
    r = run_ablation_salient({**SMALL_SALIENT, "seeds": 1, "modes": ["top"]})
    assert r["per_seed"][0]["seed"] == 11
    monkeypatch.setenv("ROSAQ_SEED", "eleven")
    with pytest.raises(ValueError, match="ROSAQ_SEED"):
        run_ablation_salient({**SMALL_SALIENT, "seeds": 1})


def test_config_validation():
    with pytest.raises(ValueError, match="unknown"):
        run_ablation_salient({"colour": 1})
    with pytest.raises(ValueError, match="modes"):
        run_ablation_salient({"modes": ["middle"]})
    with pytest.raises(ValueError, match="ensemble"):
        HeadwiseAblationConfig.from_dict({"ensemble": "other"})


def test_single_head_exactly_equal():
    r = run_ablation_headwise({"seeds": 3, "n_heads": 1, "d_out": 64, "n_calib": 256, "n_eval": 64})
    for row in r["per_seed"]:
        assert row["errors"]["head_wise"] == row["errors"]["global"]


def test_identical_heads_gap_shrinks_with_calibration():
    # with matched groups the remaining gap is PCA estimation noise
    base = {"seeds": 6, "n_eval": 256, "match_groups": True, "ensemble": "identical"}
    gaps = []
    for n in (1024, 16384):
        m = run_ablation_headwise({**base, "n_calib": n})["summary"]["mean"]
        gaps.append(m["global"] / m["head_wise"] - 1)
    assert abs(gaps[0]) < 0.1
    assert abs(gaps[1]) < abs(gaps[0])


@pytest.mark.xfail(strict=True, reason="head-wise keeps a small edge from lower-dimensional "
                                       "PCA estimates; see the decisions ledger")
def test_identical_heads_no_significant_difference():
    r = run_ablation_headwise({"seeds": 20, "ensemble": "identical", "match_groups": True})
    assert abs(r["summary"]["paired_t_head_wise_minus"]["global"]) < 2.0


def test_toy_source_runs():
    r = run_ablation_headwise({"seeds": 1, "source": "toy", "n_calib": 512, "n_eval": 64})
    assert np.isfinite(r["per_seed"][0]["errors"]["global"])


def test_magnitude_isotropic_control_shows_no_dominance():
    r = run_magnitude_study({"seeds": 3, "d": 64, "n_rows": 512, "isotropic": True, "df": None})
    assert r["summary"]["mean_rotated_ratio"] < 1.2


def test_paired_t():
    assert paired_t([1, 2, 3], [1, 2, 3]) == 0.0
    assert paired_t([1, 2, 3.5], [2, 3, 4]) < 0


def test_bench_identities():
    r = run_bench(BenchConfig.from_dict({"tokens": 4, "warmup": 1, "batch": 3,
                                         "d": 128, "n_heads": 2, "d_ff": 256,
                                         "calib_seqs": 1, "calib_len": 64}))
    assert abs(r.decode_speed * r.median_time_per_token - 1) <= 1e-9
    assert r.throughput == r.decode_speed * 3
    assert isinstance(r.coarse_timer, bool)
    json.dumps(r.to_dict())


def test_bench_rejects_bad_config():
    with pytest.raises(ValueError):
        BenchConfig.from_dict({"batch": 0})


def test_plan_storage_matches_encoded_files(small_block):
    from rosaq.harness.formats import encode_quant
    from rosaq.pipeline import quantize_model

    weights, acc, _ = small_block
    plan = LayerQuantPlan.default(weights.cfg)
    q = quantize_model(weights, acc, plan)
    report = plan_storage(weights.cfg, plan)
    for name, layer in q.layers.items():
        layers = layer if isinstance(layer, list) else [layer]
        assert sum(len(encode_quant(x)) for x in layers) == report["layers"][name]["bytes"]


def test_storage_report_large_class():
    rep = storage_report({"d": 4096, "n_heads": 32, "d_ff": 11008})
    q = rep["layers"]["W_Q"]
    assert q["bytes"] == quantfile_size(4096, 4096, 128, 4, 128)
    assert q["fp16_bytes"] == 2 * 4096 * 4096
    assert rep["compression"] == rep["fp16_bytes"] / rep["bytes"]
    assert rep["config"] == {"d": 4096, "n_heads": 32, "d_ff": 11008}
    assert BlockConfig(4096, 32, 11008).d_head == 128
