"""Per-weight-class quantization plans and whole-block quantization."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import model as _model
from ..quant import QuantConfig, awq_scales_from_means, awq_search
from .calibration import CalibrationAccumulator, global_mhsa_rotation, headwise_rotations
from .mixed import SALIENT_ALIGN, SalientSelection, select_salient, transform_weight

PER_LAYER = "per_layer_pca"
HEAD_WISE = "head_wise_pca"
GLOBAL = "global_pca"
NONE = "none"
AWQ = "none_with_awq_scale"

ALLOWED_ROTATIONS = {
    "W_Q": (PER_LAYER, NONE), "W_K": (PER_LAYER, NONE), "W_V": (PER_LAYER, NONE),
    "W_U": (PER_LAYER, NONE), "W_G": (PER_LAYER, NONE),
    # a rotation of W_D's input cannot be folded into W_U and W_G
    "W_O": (HEAD_WISE, GLOBAL, NONE), "W_D": (AWQ, NONE),
}
# mirrors the site names in rosaq.model (kept literal: model imports this package)
INPUT_SITE = {"W_Q": "attn_in", "W_K": "attn_in", "W_V": "attn_in",
              "W_U": "ffn_in", "W_G": "ffn_in", "W_O": "heads_concat", "W_D": "down_in"}


@dataclass(frozen=True)
class LayerPlan:
    """Policy for one weight class.

    For ``W_O`` the salient count is per head. ``awq_alpha`` is used only by
    ``none_with_awq_scale`` and may be the string ``"search"``.
    """

    rotation: str = PER_LAYER
    salient: int = 32
    bits: int = 4
    group_size: int = 128
    selection: str = "top"
    seed: int = 0
    enabled: bool = True
    awq_alpha: float | str = 0.5

    @property
    def quant(self) -> QuantConfig:
        return QuantConfig(self.bits, self.group_size)


def scaled_budget(d: int) -> int:
    """Salient budget scaled from 128-of-4096, rounded to a positive multiple of 32."""
    return SALIENT_ALIGN * max(1, round(128 * d / 4096 / SALIENT_ALIGN))


@dataclass
class LayerQuantPlan:
    layers: dict = field(default_factory=dict)

    @classmethod
    def default(cls, cfg: _model.BlockConfig, bits: int = 4, group_size: int = 128,
                selection: str = "top", seed: int = 0) -> "LayerQuantPlan":
        k = scaled_budget(cfg.d)
        base = LayerPlan(PER_LAYER, k, bits, group_size, selection, seed)
        layers = {n: base for n in ("W_Q", "W_K", "W_V", "W_U", "W_G")}
        layers["W_O"] = replace(base, rotation=HEAD_WISE, salient=32)
        layers["W_D"] = replace(base, rotation=AWQ, salient=0, selection="top")
        return cls(layers)

    @classmethod
    def passthrough(cls) -> "LayerQuantPlan":
        return cls({n: LayerPlan(enabled=False) for n in _model.LINEAR_NAMES})

    @classmethod
    def all_salient(cls, cfg: _model.BlockConfig) -> "LayerQuantPlan":
        full = {"W_Q": cfg.d, "W_K": cfg.d, "W_V": cfg.d, "W_U": cfg.d, "W_G": cfg.d,
                "W_O": cfg.d_head, "W_D": cfg.d_ff}
        return cls({n: LayerPlan(NONE, k) for n, k in full.items()})

    def with_selection(self, mode: str, seed: int = 0, names=None) -> "LayerQuantPlan":
        names = names or [n for n, p in self.layers.items() if p.rotation in (PER_LAYER, HEAD_WISE, GLOBAL)]
        out = dict(self.layers)
        for n in names:
            out[n] = replace(out[n], selection=mode, seed=seed)
        return LayerQuantPlan(out)

    def with_rotation(self, name: str, rotation: str) -> "LayerQuantPlan":
        out = dict(self.layers)
        out[name] = replace(out[name], rotation=rotation)
        return LayerQuantPlan(out)

    def to_dict(self) -> dict:
        return {"layers": {n: asdict(p) for n, p in self.layers.items()}}

    @classmethod
    def from_dict(cls, doc: dict) -> "LayerQuantPlan":
        if not isinstance(doc, dict) or not isinstance(doc.get("layers"), dict):
            raise ValueError("plan document needs a 'layers' object")
        defaults = doc.get("defaults", {})
        known = set(LayerPlan.__dataclass_fields__)
        layers = {}
        for name, entry in doc["layers"].items():
            if name not in ALLOWED_ROTATIONS:
                raise ValueError(f"unknown weight class {name!r} in plan")
            merged = {**defaults, **entry}
            extra = set(merged) - known
            if extra:
                raise ValueError(f"{name}: unknown plan fields {sorted(extra)}")
            layers[name] = LayerPlan(**merged)
        return cls(layers)

    def validate(self, cfg: _model.BlockConfig):
        missing = [n for n in _model.LINEAR_NAMES if n not in self.layers]
        if missing:
            raise ValueError(f"plan has no entry for {', '.join(missing)}")
        dims = {"W_Q": cfg.d, "W_K": cfg.d, "W_V": cfg.d, "W_U": cfg.d, "W_G": cfg.d,
                "W_O": cfg.d_head, "W_D": cfg.d_ff}
        for name, p in self.layers.items():
            if not p.enabled:
                continue
            try:
                p.quant
                SalientSelection(p.selection, p.salient, p.seed)
            except ValueError as exc:
                raise ValueError(f"{name}: {exc}") from None
            if p.rotation not in ALLOWED_ROTATIONS[name]:
                raise ValueError(f"{name}: rotation {p.rotation!r} not allowed "
                                 f"(choose from {ALLOWED_ROTATIONS[name]})")
            if p.salient > dims[name]:
                raise ValueError(f"{name}: salient count {p.salient} exceeds input width {dims[name]}")
            if p.salient % SALIENT_ALIGN:
                raise ValueError(f"{name}: salient count {p.salient} is not a multiple of {SALIENT_ALIGN}")
            if p.rotation == AWQ and p.awq_alpha != "search":
                if not isinstance(p.awq_alpha, (int, float)) or not 0 <= p.awq_alpha <= 1:
                    raise ValueError(f"{name}: awq_alpha must be in [0, 1] or 'search'")


def _magnitude_order(acc: CalibrationAccumulator, site: str, name: str) -> np.ndarray:
    if site not in acc.sites or acc[site].count == 0:
        raise ValueError(f"{name}: calibration site {site!r} was not recorded")
    return np.argsort(-acc[site].mean_abs, kind="stable")


def _unrotated(w, p: LayerPlan, acc, site: str, name: str):
    """Mixed precision in the original basis: salient = largest mean |x| channels."""
    d = w.shape[0]
    if p.salient in (0, d):
        sel = np.arange(p.salient)
    else:
        order = _magnitude_order(acc, site, name)
        sel = order[select_salient(order, SalientSelection(p.selection, p.salient, p.seed))]
    return transform_weight(w, None, sel, p.quant)


def _require_site(acc, site, name):
    if site not in acc.sites or acc[site].count == 0:
        raise ValueError(f"{name}: calibration site {site!r} was not recorded")


def quantize_model(weights: _model.BlockWeights, acc: CalibrationAccumulator,
                   plan: LayerQuantPlan) -> _model.QuantizedBlock:
    """Replace every linear layer of ``weights`` according to ``plan``."""
    cfg = weights.cfg
    plan.validate(cfg)
    layers: dict = {}
    meta: dict = {"plan": plan.to_dict()}
    dh = cfg.d_head

    w_v = weights.W_V
    p_o = plan.layers["W_O"]
    head_rots = None
    if p_o.enabled and p_o.rotation == HEAD_WISE:
        sites = [_model.head_site(h) for h in range(cfg.n_heads)]
        for s in sites:
            _require_site(acc, s, "W_O")
        head_rots = headwise_rotations(acc, sites)
        w_v = w_v.copy()
        for h, r in enumerate(head_rots):
            sl = slice(h * dh, (h + 1) * dh)
            w_v[:, sl] = weights.W_V[:, sl] @ r.eigenvectors

    sources = {"W_Q": weights.W_Q, "W_K": weights.W_K, "W_V": w_v,
               "W_U": weights.W_U, "W_G": weights.W_G}
    for name, w in sources.items():
        p = plan.layers[name]
        site = INPUT_SITE[name]
        if not p.enabled:
            layers[name] = w
        elif p.rotation == PER_LAYER:
            _require_site(acc, site, name)
            rot = acc.rotation(site)
            sel = select_salient(rot.eigenvalues, SalientSelection(p.selection, p.salient, p.seed))
            layers[name] = transform_weight(w, rot, sel, p.quant)
        else:
            layers[name] = _unrotated(w, p, acc, site, name)

    if not p_o.enabled:
        layers["W_O"] = weights.W_O
    elif p_o.rotation == HEAD_WISE:
        heads = []
        for h, r in enumerate(head_rots):
            sel = select_salient(r.eigenvalues, SalientSelection(p_o.selection, p_o.salient, p_o.seed + h))
            heads.append(transform_weight(weights.W_O[h * dh:(h + 1) * dh], r, sel, p_o.quant,
                                          absorbed=True))
        layers["W_O"] = heads
    elif p_o.rotation == GLOBAL:
        _require_site(acc, _model.SITE_HEADS, "W_O")
        rot = global_mhsa_rotation(acc, _model.SITE_HEADS)
        k = p_o.salient * cfg.n_heads
        sel = select_salient(rot.eigenvalues, SalientSelection(p_o.selection, k, p_o.seed))
        layers["W_O"] = transform_weight(weights.W_O, rot, sel, p_o.quant)
    else:
        layers["W_O"] = _unrotated(weights.W_O, replace(p_o, salient=p_o.salient * cfg.n_heads),
                                   acc, _model.SITE_HEADS, "W_O")

    p_d = plan.layers["W_D"]
    scales = None
    if not p_d.enabled:
        layers["W_D"] = weights.W_D
    elif p_d.rotation == AWQ:
        _require_site(acc, _model.SITE_DOWN, "W_D")
        st = acc[_model.SITE_DOWN]
        if p_d.awq_alpha == "search":
            scales, errs = awq_search(weights.W_D, st.gram, st.mean_abs, p_d.quant)
            meta["awq_search"] = {str(a): e for a, e in errs.items()}
        else:
            scales = awq_scales_from_means(st.mean_abs, float(p_d.awq_alpha))
        s = scales.per_channel_scale
        layers["W_D"] = _unrotated(s[:, None] * weights.W_D, p_d, acc, _model.SITE_DOWN, "W_D")
    else:
        layers["W_D"] = _unrotated(weights.W_D, p_d, acc, _model.SITE_DOWN, "W_D")

    return _model.QuantizedBlock(cfg, layers, weights.norm_attn.copy(), weights.norm_ffn.copy(),
                                 scales, meta)
