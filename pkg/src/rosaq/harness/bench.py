"""Decode-loop latency and exact weight-storage accounting.

Latency is measured for this artifact's own numpy kernels only; no claim is
made about GPU kernels. Storage is computed from the RQQF layout, so it is
exact for any block shape, including 4096-class configs that are never
materialized.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..model import BlockConfig, BlockWeights, block_forward, capture_calibration
from ..pipeline.plan import AWQ, GLOBAL, HEAD_WISE, LayerQuantPlan, quantize_model
from .formats import quantfile_size
from .synthetic import Anisotropic, default_seed

# 4096-class block used for storage accounting
LARGE_CLASS = {"d": 4096, "n_heads": 32, "d_ff": 11008}


@dataclass
class BenchConfig:
    seed: int | None = None
    d: int = 256
    n_heads: int = 4
    d_ff: int = 704
    batch: int = 1
    tokens: int = 64
    warmup: int = 4
    calib_seqs: int = 4
    calib_len: int = 256
    bits: int = 4
    group_size: int = 128
    storage_configs: list = field(default_factory=lambda: [dict(LARGE_CLASS)])

    @classmethod
    def from_dict(cls, doc=None) -> "BenchConfig":
        doc = dict(doc or {})
        extra = set(doc) - {f.name for f in fields(cls)}
        if extra:
            raise ValueError(f"unknown bench fields: {sorted(extra)}")
        if doc.get("seed") is None:
            doc["seed"] = default_seed()
        cfg = cls(**doc)
        if cfg.batch < 1 or cfg.tokens < 1:
            raise ValueError("batch and tokens must be positive")
        return cfg


@dataclass
class BenchResult:
    """Latency and storage report.

    Invariants: ``decode_speed * median_time_per_token == 1`` (to rounding)
    and ``throughput == decode_speed * batch`` exactly.
    """

    config: dict
    median_time_per_token: float
    decode_speed: float
    throughput: float
    fp_median_time_per_token: float
    timer_resolution: float
    coarse_timer: bool
    storage: list

    @classmethod
    def from_timing(cls, config: dict, median: float, fp_median: float, resolution: float,
                    storage: list) -> "BenchResult":
        speed = 1.0 / median
        return cls(config, median, speed, speed * config["batch"], fp_median, resolution,
                   median < 100 * resolution, storage)

    def to_dict(self) -> dict:
        return asdict(self)


def _layer_dims(cfg: BlockConfig) -> dict:
    return {n: (s[0], s[1]) for n, s in cfg.shapes().items() if n.startswith("W_")}


def plan_storage(cfg: BlockConfig, plan: LayerQuantPlan) -> dict:
    """Exact RQQF bytes per layer for ``plan`` against 16-bit dense storage.

    Disabled layers are counted at 16 bits on both sides. Rotations and AWQ
    scales are reported separately since they are activation-side state.
    """
    layers = {}
    quant_total = fp16_total = 0
    for name, (n_in, n_out) in _layer_dims(cfg).items():
        p = plan.layers[name]
        fp16 = 2 * n_in * n_out
        if not p.enabled:
            size = fp16
        elif name == "W_O" and p.rotation == HEAD_WISE:
            size = cfg.n_heads * quantfile_size(cfg.d_head, n_out, p.salient, p.bits, p.group_size)
        elif name == "W_O" and p.rotation == GLOBAL:
            size = quantfile_size(n_in, n_out, p.salient * cfg.n_heads, p.bits, p.group_size)
        else:
            size = quantfile_size(n_in, n_out, p.salient, p.bits, p.group_size)
        layers[name] = {"bytes": size, "fp16_bytes": fp16, "ratio": fp16 / size}
        quant_total += size
        fp16_total += fp16
    extras = 4 * cfg.d_ff if plan.layers["W_D"].enabled and plan.layers["W_D"].rotation == AWQ else 0
    return {"config": {"d": cfg.d, "n_heads": cfg.n_heads, "d_ff": cfg.d_ff},
            "layers": layers, "bytes": quant_total, "fp16_bytes": fp16_total,
            "compression": fp16_total / quant_total, "awq_scale_bytes": extras}


def storage_report(block: dict, bits: int = 4, group_size: int = 128) -> dict:
    cfg = BlockConfig(**block)
    return plan_storage(cfg, LayerQuantPlan.default(cfg, bits, group_size))


def _timer_resolution() -> float:
    info = time.get_clock_info("perf_counter").resolution
    best = float("inf")
    for _ in range(20):
        t0 = time.perf_counter()
        t1 = time.perf_counter()
        while t1 == t0:
            t1 = time.perf_counter()
        best = min(best, t1 - t0)
    return max(info, best)


def _decode_times(weights, steps, batch, d, rng, warmup):
    x = rng.standard_normal((warmup + steps, batch, 1, d))
    out = []
    for i in range(warmup + steps):
        t0 = time.perf_counter()
        block_forward(x[i], weights)
        dt = time.perf_counter() - t0
        if i >= warmup:
            out.append(dt)
    return np.array(out)


def run_bench(config=None) -> BenchResult:
    """Median per-token decode latency of the quantized toy block, plus storage."""
    cfg = config if isinstance(config, BenchConfig) else BenchConfig.from_dict(config)
    rng = np.random.default_rng(cfg.seed)
    block = BlockConfig(cfg.d, cfg.n_heads, cfg.d_ff)
    weights = BlockWeights.random(block, rng)
    src = Anisotropic(cfg.d, rng)
    acc = capture_calibration(weights, src.sample(rng, cfg.calib_seqs, cfg.calib_len))
    plan = LayerQuantPlan.default(block, cfg.bits, cfg.group_size)
    quantized = quantize_model(weights, acc, plan)
    q_times = _decode_times(quantized, cfg.tokens, cfg.batch, cfg.d, rng, cfg.warmup)
    fp_times = _decode_times(weights, cfg.tokens, cfg.batch, cfg.d, rng, cfg.warmup)
    storage = [plan_storage(block, plan)]
    storage += [storage_report(s, cfg.bits, cfg.group_size) for s in cfg.storage_configs]
    return BenchResult.from_timing(asdict(cfg), float(np.median(q_times)),
                                   float(np.median(fp_times)), _timer_resolution(), storage)
