"""On-disk layouts for models, quantized blocks and calibration accumulators.

A model is a JSON manifest next to one RQTF file per tensor. A quantized
block is a directory holding ``manifest.json``, one RQQF file per
mixed-precision layer, RQTF files for dense layers, norm gains, AWQ scales
and the rotations (eigenvectors and eigenvalues) of every input site.
Accumulators are ``.npz`` archives in float64.
"""

from __future__ import annotations

import io
import json
import os

import numpy as np

from ..errors import FormatError
from ..linalg import EigenDecomposition
from ..model import LINEAR_NAMES, BlockConfig, BlockWeights, QuantizedBlock
from ..pipeline.calibration import CalibrationAccumulator, SiteStats
from ..pipeline.mixed import MixedPrecisionWeight
from ..quant import ScalingVector
from .formats import atomic_write, read_quant, read_tensor, write_quant, write_tensor

MODEL_FORMAT = "rosaq-model/1"
QUANT_FORMAT = "rosaq-quantized/1"


def write_json(path, doc: dict):
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def _config_doc(cfg: BlockConfig) -> dict:
    return {"d": cfg.d, "n_heads": cfg.n_heads, "d_ff": cfg.d_ff, "epsilon": cfg.epsilon}


def _config_from(doc: dict) -> BlockConfig:
    try:
        return BlockConfig(int(doc["d"]), int(doc["n_heads"]), int(doc["d_ff"]),
                           float(doc.get("epsilon", 1e-6)))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad block config: {exc}") from None


def save_model(weights: BlockWeights, path):
    """Write ``path`` (JSON manifest) plus ``<stem>.<tensor>.rqtf`` siblings."""
    folder = os.path.dirname(os.path.abspath(path))
    stem = os.path.splitext(os.path.basename(path))[0]
    files = {}
    for name, arr in weights.tensors().items():
        fname = f"{stem}.{name}.rqtf"
        write_tensor(os.path.join(folder, fname), arr)
        files[name] = fname
    write_json(path, {"format": MODEL_FORMAT, "config": _config_doc(weights.cfg), "tensors": files})


def load_model(path) -> BlockWeights:
    doc = read_json(path)
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not a {MODEL_FORMAT} manifest")
    cfg = _config_from(doc.get("config", {}))
    folder = os.path.dirname(os.path.abspath(path))
    tensors = {}
    for name in cfg.shapes():
        fname = doc.get("tensors", {}).get(name)
        if fname is None:
            raise FormatError(f"{path}: missing tensor {name}")
        tensors[name] = read_tensor(os.path.join(folder, fname))
    try:
        return BlockWeights(cfg, **tensors)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_accumulator(acc: CalibrationAccumulator, path):
    arrays = {}
    for site, st in acc.sites.items():
        arrays[f"{site}/gram"] = st.gram
        arrays[f"{site}/abs_sum"] = st.abs_sum
        arrays[f"{site}/count"] = np.array(st.count, dtype=np.int64)
        if st.samples:
            arrays[f"{site}/samples"] = np.vstack(st.samples)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(path, buf.getvalue())


def load_accumulator(path) -> CalibrationAccumulator:
    try:
        data = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise FormatError(f"{path}: not an accumulator archive ({exc})") from None
    acc = CalibrationAccumulator()
    sites = sorted({k.rsplit("/", 1)[0] for k in data.files})
    for site in sites:
        try:
            gram = data[f"{site}/gram"]
            st = SiteStats(gram.shape[0], gram.copy(), int(data[f"{site}/count"]),
                           data[f"{site}/abs_sum"].copy())
        except KeyError as exc:
            raise FormatError(f"{path}: incomplete site {site!r} ({exc})") from None
        if f"{site}/samples" in data.files:
            st.samples = [data[f"{site}/samples"]]
            acc.keep_samples = True
        acc.sites[site] = st
    return acc


def _save_rotation(folder, key: str, rot: EigenDecomposition) -> dict:
    vec, val = f"rot.{key}.vectors.rqtf", f"rot.{key}.values.rqtf"
    write_tensor(os.path.join(folder, vec), rot.eigenvectors)
    write_tensor(os.path.join(folder, val), rot.eigenvalues)
    return {"vectors": vec, "values": val}


def _load_rotation(folder, entry: dict) -> EigenDecomposition:
    vectors = read_tensor(os.path.join(folder, entry["vectors"]))
    values = read_tensor(os.path.join(folder, entry["values"]))
    return EigenDecomposition(vectors, values)


def save_quantized(block: QuantizedBlock, folder):
    """Write ``block`` to ``folder``; reading it back gives ``block.to_storage()``."""
    os.makedirs(folder, exist_ok=True)
    rotations: dict = {}
    rot_keys: dict = {}

    def rot_ref(rot):
        if rot is None:
            return None
        key = rot_keys.get(id(rot))
        if key is None:
            key = f"r{len(rot_keys)}"
            rot_keys[id(rot)] = key
            rotations[key] = _save_rotation(folder, key, rot)
        return key

    def layer_entry(name, layer):
        if isinstance(layer, MixedPrecisionWeight):
            fname = f"{name}.rqqf"
            write_quant(os.path.join(folder, fname), layer)
            return {"kind": "mixed", "file": fname, "rotation": rot_ref(layer.rotation)}
        fname = f"{name}.rqtf"
        write_tensor(os.path.join(folder, fname), layer)
        return {"kind": "dense", "file": fname}

    layers = {}
    for name in LINEAR_NAMES:
        layer = block.layers[name]
        if isinstance(layer, list):
            layers[name] = {"kind": "heads",
                            "heads": [layer_entry(f"{name}.h{h}", x) for h, x in enumerate(layer)]}
        else:
            layers[name] = layer_entry(name, layer)
    write_tensor(os.path.join(folder, "norm_attn.rqtf"), block.norm_attn)
    write_tensor(os.path.join(folder, "norm_ffn.rqtf"), block.norm_ffn)
    scales = None
    if block.down_scales is not None:
        write_tensor(os.path.join(folder, "W_D.awq.rqtf"), block.down_scales.per_channel_scale)
        scales = {"file": "W_D.awq.rqtf", "alpha": block.down_scales.alpha}
    write_json(os.path.join(folder, "manifest.json"), {
        "format": QUANT_FORMAT, "config": _config_doc(block.cfg), "layers": layers,
        "rotations": rotations, "down_scales": scales, "meta": block.meta})


def load_quantized(folder) -> QuantizedBlock:
    doc = read_json(os.path.join(folder, "manifest.json"))
    if doc.get("format") != QUANT_FORMAT:
        raise FormatError(f"{folder}: not a {QUANT_FORMAT} directory")
    cfg = _config_from(doc.get("config", {}))
    rots = {k: _load_rotation(folder, e) for k, e in doc.get("rotations", {}).items()}

    def load_entry(entry):
        path = os.path.join(folder, entry["file"])
        if entry["kind"] == "dense":
            return read_tensor(path)
        if entry["kind"] == "mixed":
            key = entry.get("rotation")
            if key is not None and key not in rots:
                raise FormatError(f"unknown rotation {key!r}")
            return read_quant(path, rots.get(key))
        raise FormatError(f"unknown layer kind {entry['kind']!r}")

    layers = {}
    for name in LINEAR_NAMES:
        entry = doc.get("layers", {}).get(name)
        if entry is None:
            raise FormatError(f"{folder}: manifest lacks layer {name}")
        if entry["kind"] == "heads":
            layers[name] = [load_entry(e) for e in entry["heads"]]
        else:
            layers[name] = load_entry(entry)
    scales = None
    if doc.get("down_scales"):
        s = read_tensor(os.path.join(folder, doc["down_scales"]["file"]))
        scales = ScalingVector(s, float(doc["down_scales"]["alpha"]))
    return QuantizedBlock(cfg, layers, read_tensor(os.path.join(folder, "norm_attn.rqtf")),
                          read_tensor(os.path.join(folder, "norm_ffn.rqtf")), scales,
                          doc.get("meta", {}))
