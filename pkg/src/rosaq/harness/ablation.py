"""Seeded ablation ensembles: salient-channel selection, head-wise vs global
PCA for the attention output, and rotated-vs-original channel magnitudes.

Every runner returns a JSON-ready dict carrying the echoed config, per-seed
raw values and aggregates. Re-running with the same config reproduces it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..model import BlockConfig, BlockWeights, block_forward, capture_calibration, head_site
from ..pipeline.calibration import CalibrationAccumulator, global_mhsa_rotation, headwise_rotations
from ..pipeline.mixed import SELECTION_MODES, SalientSelection, select_salient, transform_weight
from ..pipeline.plan import LayerQuantPlan, quantize_model
from ..quant import QuantConfig
from .metrics import magnitude_stats, reconstruction_error, spearman, top_ratio
from .synthetic import Anisotropic, default_seed, head_representations


def _from_dict(cls, doc: dict | None):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls)}
    extra = set(doc) - known
    if extra:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(extra)}")
    if doc.get("base_seed") is None:
        doc["base_seed"] = default_seed()
    return cls(**doc)


def paired_t(a, b) -> float:
    """t statistic of the paired differences ``a - b`` (0 when identical)."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    sd = diff.std(ddof=1) if diff.size > 1 else 0.0
    if sd == 0.0:
        return 0.0
    return float(diff.mean() / (sd / np.sqrt(diff.size)))


@dataclass
class SalientAblationConfig:
    seeds: int = 100
    base_seed: int | None = None
    d: int = 256
    n_heads: int = 4
    d_ff: int = 704
    calib_seqs: int = 8
    calib_len: int = 256
    eval_seqs: int = 4
    eval_len: int = 128
    bits: int = 4
    group_size: int = 128
    salient: int = 32
    exponent: float = 2.0
    isotropic: bool = False
    modes: list = field(default_factory=lambda: list(SELECTION_MODES))

    @classmethod
    def from_dict(cls, doc=None) -> "SalientAblationConfig":
        cfg = _from_dict(cls, doc)
        bad = set(cfg.modes) - set(SELECTION_MODES)
        if bad:
            raise ValueError(f"unknown selection modes {sorted(bad)}")
        if cfg.seeds < 1:
            raise ValueError("seeds must be positive")
        return cfg


def salient_trial(cfg: SalientAblationConfig, seed: int) -> dict:
    """Block output error on held-out inputs for each selection mode."""
    rng = np.random.default_rng(seed)
    block = BlockConfig(cfg.d, cfg.n_heads, cfg.d_ff)
    weights = BlockWeights.random(block, rng)
    src = Anisotropic(cfg.d, rng, cfg.exponent, cfg.isotropic)
    calib = src.sample(rng, cfg.calib_seqs, cfg.calib_len)
    held_out = src.sample(rng, cfg.eval_seqs, cfg.eval_len)
    acc = capture_calibration(weights, calib)
    ref = block_forward(held_out, weights)
    base = LayerQuantPlan.default(block, cfg.bits, cfg.group_size)
    for name in ("W_Q", "W_K", "W_V", "W_U", "W_G"):
        base.layers[name] = replace(base.layers[name], salient=cfg.salient)
    errors = {}
    for mode in cfg.modes:
        q = quantize_model(weights, acc, base.with_selection(mode, seed=seed))
        errors[mode] = reconstruction_error(ref, block_forward(held_out, q))
    return errors


def _summarize(per_seed: list, modes: list, reference: str) -> dict:
    table = {m: np.array([r["errors"][m] for r in per_seed]) for m in modes}
    out = {"mean": {m: float(v.mean()) for m, v in table.items()},
           "std": {m: float(v.std(ddof=1)) if len(v) > 1 else 0.0 for m, v in table.items()}}
    if reference in table:
        ref = table[reference]
        out[f"win_rate_{reference}_vs"] = {m: float(np.mean(ref < v)) for m, v in table.items()
                                           if m != reference}
        out[f"paired_t_{reference}_minus"] = {m: paired_t(ref, v) for m, v in table.items()
                                             if m != reference}
    return out


def run_ablation_salient(config=None) -> dict:
    cfg = config if isinstance(config, SalientAblationConfig) else SalientAblationConfig.from_dict(config)
    per_seed = []
    for i in range(cfg.seeds):
        seed = cfg.base_seed + i
        per_seed.append({"seed": seed, "errors": salient_trial(cfg, seed)})
    return {"ablation": "salient", "config": asdict(cfg), "per_seed": per_seed,
            "summary": _summarize(per_seed, cfg.modes, "top")}


@dataclass
class HeadwiseAblationConfig:
    seeds: int = 100
    base_seed: int | None = None
    n_heads: int = 4
    d_head: int = 64
    d_out: int = 256
    n_calib: int = 2048
    n_eval: int = 512
    salient_per_head: int = 32
    bits: int = 4
    group_size: int = 128
    exponent: float = 2.0
    ensemble: str = "distinct"
    match_groups: bool = False
    source: str = "synthetic"

    @classmethod
    def from_dict(cls, doc=None) -> "HeadwiseAblationConfig":
        cfg = _from_dict(cls, doc)
        if cfg.ensemble not in ("distinct", "identical"):
            raise ValueError("ensemble must be 'distinct' or 'identical'")
        if cfg.source not in ("synthetic", "toy"):
            raise ValueError("source must be 'synthetic' or 'toy'")
        if cfg.seeds < 1:
            raise ValueError("seeds must be positive")
        return cfg


def _head_data(cfg: HeadwiseAblationConfig, rng):
    """Calibration / held-out head outputs and an output projection."""
    d = cfg.n_heads * cfg.d_head
    if cfg.source == "toy":
        block = BlockConfig(d, cfg.n_heads, 4 * d)
        weights = BlockWeights.random(block, rng)
        src = Anisotropic(d, rng, cfg.exponent)
        seq = max(1, cfg.n_calib // 256)
        rec_c: dict = {}
        rec_e: dict = {}
        block_forward(src.sample(rng, seq, cfg.n_calib // seq), weights, rec_c)
        block_forward(src.sample(rng, 1, cfg.n_eval), weights, rec_e)
        calib = [h.reshape(-1, cfg.d_head) for h in rec_c["heads"]]
        held = [h.reshape(-1, cfg.d_head) for h in rec_e["heads"]]
        return calib, held, weights.W_O[:, :cfg.d_out]
    sources, calib = head_representations(rng, cfg.n_heads, cfg.d_head, cfg.n_calib,
                                          exponent=cfg.exponent,
                                          identical=cfg.ensemble == "identical")
    _, held = head_representations(rng, cfg.n_heads, cfg.d_head, cfg.n_eval, sources=sources)
    w_o = rng.standard_normal((d, cfg.d_out)) / np.sqrt(d)
    return calib, held, w_o


def headwise_trial(cfg: HeadwiseAblationConfig, seed: int) -> dict:
    """Output-projection error with head-wise vs global PCA rotations."""
    rng = np.random.default_rng(seed)
    calib, held, w_o = _head_data(cfg, rng)
    dh, H = cfg.d_head, cfg.n_heads
    acc = CalibrationAccumulator()
    sites = [head_site(h) for h in range(H)]
    for s, x in zip(sites, calib):
        acc.accumulate(s, x)
    acc.accumulate("heads_concat", np.concatenate(calib, axis=1))
    qcfg = QuantConfig(cfg.bits, cfg.group_size)
    ref = np.concatenate(held, axis=1) @ w_o

    k_h = cfg.salient_per_head
    out_hw = None
    for h, rot in enumerate(headwise_rotations(acc, sites)):
        sel = select_salient(rot.eigenvalues, SalientSelection("top", k_h))
        mpw = transform_weight(w_o[h * dh:(h + 1) * dh], rot, sel, qcfg)
        part = mpw.forward(held[h])
        out_hw = part if out_hw is None else out_hw + part

    g_rot = global_mhsa_rotation(acc, "heads_concat")
    g_cfg = qcfg
    if cfg.match_groups and dh > k_h:
        g_cfg = QuantConfig(cfg.bits, min(cfg.group_size, dh - k_h))
    sel = select_salient(g_rot.eigenvalues, SalientSelection("top", k_h * H))
    mpw = transform_weight(w_o, g_rot, sel, g_cfg)
    out_gl = mpw.forward(np.concatenate(held, axis=1))
    return {"head_wise": reconstruction_error(ref, out_hw),
            "global": reconstruction_error(ref, out_gl)}


def run_ablation_headwise(config=None) -> dict:
    cfg = config if isinstance(config, HeadwiseAblationConfig) else HeadwiseAblationConfig.from_dict(config)
    per_seed = []
    for i in range(cfg.seeds):
        seed = cfg.base_seed + i
        per_seed.append({"seed": seed, "errors": headwise_trial(cfg, seed)})
    hw = np.array([r["errors"]["head_wise"] for r in per_seed])
    gl = np.array([r["errors"]["global"] for r in per_seed])
    summary = _summarize(per_seed, ["head_wise", "global"], "head_wise")
    summary["head_wise_le_global_rate"] = float(np.mean(hw <= gl))
    return {"ablation": "headwise", "config": asdict(cfg), "per_seed": per_seed, "summary": summary}


@dataclass
class MagnitudeStudyConfig:
    seeds: int = 100
    base_seed: int | None = None
    d: int = 256
    n_rows: int = 2048
    exponent: float = 2.0
    df: float | None = 4.0
    isotropic: bool = False
    top: int = 10

    @classmethod
    def from_dict(cls, doc=None) -> "MagnitudeStudyConfig":
        return _from_dict(cls, doc)


def magnitude_trial(cfg: MagnitudeStudyConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    src = Anisotropic(cfg.d, rng, cfg.exponent, cfg.isotropic, df=cfg.df)
    acc = CalibrationAccumulator(keep_samples=True)
    acc.accumulate("x", src.sample(rng, cfg.n_rows))
    rot = acc.rotation("x")
    original = magnitude_stats(acc, "x", None, cfg.top)
    rotated_all = magnitude_stats(acc, "x", rot, None)
    mags = np.zeros(cfg.d)
    for row in rotated_all:
        mags[row["channel"]] = row["magnitude"]
    return {"rotated_ratio": top_ratio(rotated_all), "original_ratio": top_ratio(original),
            "spearman_magnitude_eigenvalue": spearman(mags, rot.eigenvalues),
            "rotated_top": rotated_all[:cfg.top], "original_top": original}


def run_magnitude_study(config=None) -> dict:
    cfg = config if isinstance(config, MagnitudeStudyConfig) else MagnitudeStudyConfig.from_dict(config)
    per_seed = [{"seed": cfg.base_seed + i, **magnitude_trial(cfg, cfg.base_seed + i)}
                for i in range(cfg.seeds)]
    rr = np.array([r["rotated_ratio"] for r in per_seed])
    orr = np.array([r["original_ratio"] for r in per_seed])
    rho = np.array([r["spearman_magnitude_eigenvalue"] for r in per_seed])
    return {"ablation": "magnitude", "config": asdict(cfg), "per_seed": per_seed,
            "summary": {"rotated_dominates_rate": float(np.mean(rr > orr)),
                        "mean_rotated_ratio": float(rr.mean()),
                        "mean_original_ratio": float(orr.mean()),
                        "min_spearman": float(rho.min()), "mean_spearman": float(rho.mean())}}
