"""A single pre-norm transformer block: causal multi-head attention + SiLU-gated FFN.

Every linear layer is either a dense matrix or a
:class:`~rosaq.pipeline.mixed.MixedPrecisionWeight`; the forward code is the
same for both, which is what makes the FP and all-salient paths bit-identical.
No positional encoding is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .linalg import as_matrix
from .pipeline.calibration import CalibrationAccumulator
from .pipeline.mixed import MixedPrecisionWeight
from .quant import ScalingVector

SITE_ATTN = "attn_in"
SITE_HEADS = "heads_concat"
SITE_FFN = "ffn_in"
SITE_DOWN = "down_in"
LINEAR_NAMES = ("W_Q", "W_K", "W_V", "W_O", "W_U", "W_G", "W_D")


def head_site(h: int) -> str:
    return f"head_{h}"


@dataclass(frozen=True)
class BlockConfig:
    d: int = 256
    n_heads: int = 4
    d_ff: int = 704
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.d <= 0 or self.n_heads <= 0 or self.d_ff <= 0:
            raise ValueError("block dimensions must be positive")
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by {self.n_heads} heads")
        if self.d_head % 32:
            raise ValueError(f"head width {self.d_head} is not a multiple of 32")

    @property
    def d_head(self) -> int:
        return self.d // self.n_heads

    def shapes(self) -> dict:
        d, f = self.d, self.d_ff
        return {"W_Q": (d, d), "W_K": (d, d), "W_V": (d, d), "W_O": (d, d),
                "W_U": (d, f), "W_G": (d, f), "W_D": (f, d),
                "norm_attn": (d,), "norm_ffn": (d,)}

    def site_dims(self) -> dict:
        dims = {SITE_ATTN: self.d, SITE_HEADS: self.d, SITE_FFN: self.d, SITE_DOWN: self.d_ff}
        dims.update({head_site(h): self.d_head for h in range(self.n_heads)})
        return dims


@dataclass
class BlockWeights:
    cfg: BlockConfig
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    W_U: np.ndarray
    W_G: np.ndarray
    W_D: np.ndarray
    norm_attn: np.ndarray
    norm_ffn: np.ndarray

    def __post_init__(self):
        for name, shape in self.cfg.shapes().items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains NaN or Inf")
            setattr(self, name, arr)

    def tensors(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "cfg"}

    @classmethod
    def random(cls, cfg: BlockConfig, rng: np.random.Generator) -> "BlockWeights":
        """Gaussian weights with variance ``1 / fan_in`` and unit norm gains."""
        t = {}
        for name, shape in cfg.shapes().items():
            if name.startswith("norm"):
                t[name] = np.ones(shape)
            else:
                t[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
        return cls(cfg, **t)

    @classmethod
    def zeros(cls, cfg: BlockConfig) -> "BlockWeights":
        return cls(cfg, **{n: np.zeros(s) for n, s in cfg.shapes().items()})


@dataclass
class QuantizedBlock:
    """A block whose linear layers may be mixed-precision.

    ``W_O`` is a dense matrix, one :class:`MixedPrecisionWeight`, or a list of
    per-head weights whose rotations are absorbed into ``W_V``. ``down_scales``
    holds the AWQ scales divided out of the ``W_D`` input.
    """

    cfg: BlockConfig
    layers: dict
    norm_attn: np.ndarray
    norm_ffn: np.ndarray
    down_scales: ScalingVector | None = None
    meta: dict = field(default_factory=dict)

    def to_storage(self) -> "QuantizedBlock":
        def rnd(x):
            return np.asarray(x, dtype=np.float32).astype(np.float64)

        def conv(layer):
            if isinstance(layer, MixedPrecisionWeight):
                return layer.to_storage()
            if isinstance(layer, list):
                return [conv(x) for x in layer]
            return rnd(layer)

        # layers sharing a rotation keep sharing the rounded copy
        layers = {name: conv(layer) for name, layer in self.layers.items()}
        _reshare_rotations(self.layers, layers)
        scales = None
        if self.down_scales is not None:
            scales = ScalingVector(rnd(self.down_scales.per_channel_scale), self.down_scales.alpha)
        return QuantizedBlock(self.cfg, layers, rnd(self.norm_attn), rnd(self.norm_ffn),
                              scales, dict(self.meta))


def _reshare_rotations(old: dict, new: dict):
    seen = {}
    for name in old:
        a, b = old[name], new[name]
        pairs = zip(a, b) if isinstance(a, list) else [(a, b)]
        for x, y in pairs:
            if isinstance(x, MixedPrecisionWeight) and x.rotation is not None:
                key = id(x.rotation)
                if key in seen:
                    object.__setattr__(y, "rotation", seen[key])
                else:
                    seen[key] = y.rotation


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps) * gain


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def causal_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, n_heads: int) -> list:
    """Per-head causal softmax attention; returns one ``(..., T, d_h)`` array per head."""
    t = q.shape[-2]
    dh = q.shape[-1] // n_heads
    mask = np.triu(np.ones((t, t), dtype=bool), 1)
    out = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (q[..., sl] @ np.swapaxes(k[..., sl], -1, -2)) / np.sqrt(dh)
        scores = np.where(mask, -np.inf, scores)
        out.append(softmax(scores) @ v[..., sl])
    return out


class _Rotations:
    """Computes ``x @ R`` once per distinct rotation within one forward pass."""

    def __init__(self, x):
        self.x = x
        self.done = {}

    def apply(self, layer):
        if isinstance(layer, MixedPrecisionWeight):
            if layer.rotation is None or layer.absorbed:
                return layer.forward_rotated(self.x)
            key = id(layer.rotation)
            if key not in self.done:
                self.done[key] = self.x @ layer.rotation.eigenvectors
            return layer.forward_rotated(self.done[key])
        return self.x @ layer


def _layers_of(weights) -> tuple:
    if isinstance(weights, QuantizedBlock):
        return weights.layers, weights.norm_attn, weights.norm_ffn, weights.down_scales
    layers = {n: getattr(weights, n) for n in LINEAR_NAMES}
    return layers, weights.norm_attn, weights.norm_ffn, None


def _check_input(z, d: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim < 2 or z.shape[-1] != d:
        raise ValueError(f"input must have shape (..., T, {d}), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("input contains NaN or Inf")
    return z


def mhsa_forward(x, weights, record: dict | None = None) -> np.ndarray:
    """Attention sub-layer on an already-normalized input ``x``."""
    layers, _, _, _ = _layers_of(weights)
    cfg = weights.cfg
    x = _check_input(x, cfg.d)
    rot = _Rotations(x)
    q = rot.apply(layers["W_Q"])
    k = rot.apply(layers["W_K"])
    v = rot.apply(layers["W_V"])
    heads = causal_attention(q, k, v, cfg.n_heads)
    if record is not None:
        record["heads"] = heads
    w_o = layers["W_O"]
    if isinstance(w_o, list):
        out = w_o[0].forward(heads[0])
        for h in range(1, cfg.n_heads):
            out = out + w_o[h].forward(heads[h])
        return out
    return _Rotations(np.concatenate(heads, axis=-1)).apply(w_o)


def ffn_forward(x, weights, record: dict | None = None) -> np.ndarray:
    """Gated FFN ``(silu(x W_G) * (x W_U)) W_D`` on a normalized input."""
    layers, _, _, scales = _layers_of(weights)
    x = _check_input(x, weights.cfg.d)
    rot = _Rotations(x)
    a = silu(rot.apply(layers["W_G"])) * rot.apply(layers["W_U"])
    if record is not None:
        record["down_in"] = a
    if scales is not None:
        a = a / scales.per_channel_scale
    return _Rotations(a).apply(layers["W_D"])


def block_forward(z, weights, record: dict | None = None) -> np.ndarray:
    """``h = z + MHSA(norm(z)); out = h + FFN(norm(h))``."""
    cfg = weights.cfg
    _, g_attn, g_ffn, _ = _layers_of(weights)
    z = _check_input(z, cfg.d)
    x = rms_norm(z, g_attn, cfg.epsilon)
    h = z + mhsa_forward(x, weights, record)
    x2 = rms_norm(h, g_ffn, cfg.epsilon)
    if record is not None:
        record["attn_in"] = x
        record["ffn_in"] = x2
    return h + ffn_forward(x2, weights, record)


def stack_forward(z, blocks) -> np.ndarray:
    for b in blocks:
        z = block_forward(z, b)
    return z


def _as_sequences(inputs, d: int) -> list:
    if isinstance(inputs, np.ndarray):
        if inputs.ndim == 2:
            return [inputs]
        if inputs.ndim == 3:
            return list(inputs)
        raise ValueError(f"calibration inputs must be 2-D or 3-D, got {inputs.ndim}-D")
    seqs = [as_matrix(s, "calibration sequence") for s in inputs]
    if not seqs:
        raise ValueError("no calibration inputs")
    return seqs


def capture_calibration(weights: BlockWeights, inputs, keep_samples: bool = False,
                        acc: CalibrationAccumulator | None = None) -> CalibrationAccumulator:
    """Run FP forward passes and record activations at every quantization site."""
    cfg = weights.cfg
    acc = acc if acc is not None else CalibrationAccumulator(keep_samples=keep_samples)
    for site, dim in cfg.site_dims().items():
        acc.register(site, dim)
    seqs = _as_sequences(inputs, cfg.d)
    for seq in seqs:
        rec: dict = {}
        block_forward(seq, weights, rec)
        acc.accumulate(SITE_ATTN, rec["attn_in"])
        for h, hh in enumerate(rec["heads"]):
            acc.accumulate(head_site(h), hh)
        acc.accumulate(SITE_HEADS, np.concatenate(rec["heads"], axis=-1))
        acc.accumulate(SITE_FFN, rec["ffn_in"])
        acc.accumulate(SITE_DOWN, rec["down_in"])
    return acc
