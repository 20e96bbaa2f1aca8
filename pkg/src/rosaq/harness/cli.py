"""``rosaq`` command line.

Exit codes: 0 success, 1 usage error, 2 validation or format error,
3 numerical failure (eigensolver non-convergence).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from ..errors import ConvergenceError, FormatError
from ..model import BlockConfig, BlockWeights, block_forward, capture_calibration
from ..pipeline.plan import LayerQuantPlan, quantize_model
from . import formats
from .ablation import run_ablation_headwise, run_ablation_salient, run_magnitude_study
from .bench import run_bench
from .metrics import reconstruction_error
from .store import (QUANT_FORMAT, load_accumulator, load_model, load_quantized, read_json,
                    save_accumulator, save_model, save_quantized, write_json)
from .synthetic import Anisotropic, default_seed

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

ABLATIONS = {"salient": run_ablation_salient, "headwise": run_ablation_headwise,
             "magnitude": run_magnitude_study}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path) -> dict:
    if path is None:
        return {}
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return doc


def load_plan(path, cfg: BlockConfig) -> LayerQuantPlan:
    """Plan from a JSON file, or the default plan when ``path`` is None."""
    if path is None:
        plan = LayerQuantPlan.default(cfg)
    else:
        plan = LayerQuantPlan.from_dict(_load_config(path))
    plan.validate(cfg)
    return plan


def cmd_synth(args):
    rng = np.random.default_rng(args.seed)
    if args.kind == "model":
        cfg = BlockConfig(args.d, args.n_heads, args.d_ff)
        save_model(BlockWeights.random(cfg, rng), args.out)
        return
    # the data source basis is drawn from the seed, so calibration and
    # held-out files made with one seed and different --draw share it
    src = Anisotropic(args.d, rng, args.exponent)
    draw = np.random.default_rng([args.seed, args.draw])
    formats.write_tensor(args.out, src.sample(draw, args.seqs, args.length))


def cmd_calibrate(args):
    weights = load_model(args.model)
    data = formats.read_tensor(args.data)
    acc = capture_calibration(weights, data, keep_samples=args.keep_samples)
    save_accumulator(acc, args.out)


def cmd_quantize(args):
    weights = load_model(args.model)
    acc = load_accumulator(args.acc)
    plan = load_plan(args.plan, weights.cfg)
    block = quantize_model(weights, acc, plan)
    block.meta["plan"] = plan.to_dict()
    save_quantized(block, args.out)


def cmd_infer(args):
    block = load_quantized(args.model_dir)
    x = formats.read_tensor(args.input)
    y = block_forward(x, block)
    formats.write_tensor(args.out, y)
    if args.report:
        report = {"input": args.input, "model_dir": args.model_dir, "shape": list(y.shape)}
        if args.reference:
            ref = block_forward(x, load_model(args.reference))
            report["reconstruction_error"] = reconstruction_error(ref, y)
        write_json(args.report, report)


def cmd_ablate(args):
    report = ABLATIONS[args.which](_load_config(args.config))
    write_json(args.out, report)


def cmd_bench(args):
    write_json(args.out, run_bench(_load_config(args.config)).to_dict())


def _tensor_stats(arr) -> dict:
    a = np.asarray(arr, dtype=np.float64)
    if a.size == 0:
        return {}
    return {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean()),
            "std": float(a.std())}


def inspect_path(path) -> dict:
    """Header, shape and summary statistics of any artifact this tool writes."""
    if os.path.isdir(path):
        doc = read_json(os.path.join(path, "manifest.json"))
        if doc.get("format") != QUANT_FORMAT:
            raise FormatError(f"{path}: not a quantized-model directory")
        return {"format": QUANT_FORMAT, "config": doc["config"],
                "layers": {n: e["kind"] for n, e in doc["layers"].items()}}
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:4]
    if magic == formats.TENSOR_MAGIC:
        arr = formats.decode_tensor(data)
        return {**formats.tensor_header(data), "stats": _tensor_stats(arr)}
    if magic == formats.QUANT_MAGIC:
        head = formats.quant_header(data)
        w = formats.decode_quant(data)
        return {**head, "groups": len(w.groups), "bytes": len(data),
                "salient_stats": _tensor_stats(w.salient)}
    if magic == b"PK\x03\x04":
        acc = load_accumulator(path)
        return {"format": "accumulator",
                "sites": {s: {"dim": st.dim, "count": st.count} for s, st in acc.sites.items()}}
    if data[:1] == b"{":
        doc = read_json(path)
        return {"format": doc.get("format", "json"),
                **({"config": doc["config"]} if "config" in doc else {})}
    raise FormatError(f"{path}: unrecognized file (magic {magic!r})")


def cmd_inspect(args):
    print(json.dumps(inspect_path(args.file), indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rosaq", description="PCA-rotated mixed-precision quantization toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="write a random toy model or synthetic activations")
    s.add_argument("kind", choices=("model", "data"))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--draw", type=int, default=0, help="data draw index under one seed")
    s.add_argument("--d", type=int, default=256)
    s.add_argument("--n-heads", type=int, default=4)
    s.add_argument("--d-ff", type=int, default=704)
    s.add_argument("--seqs", type=int, default=8)
    s.add_argument("--length", type=int, default=256)
    s.add_argument("--exponent", type=float, default=2.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("calibrate", help="accumulate activation statistics")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--keep-samples", action="store_true")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("quantize", help="apply a quantization plan")
    s.add_argument("--model", required=True)
    s.add_argument("--acc", required=True)
    s.add_argument("--plan", default=None, help="JSON plan (default plan when omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("infer", help="run a quantized block")
    s.add_argument("--model-dir", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--reference", default=None, help="FP model for the error report")
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("ablate", help="run a seeded ablation ensemble")
    s.add_argument("--which", required=True, choices=sorted(ABLATIONS))
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("bench", help="decode latency and storage report")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("inspect", help="print a file's header and stats")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "seed", 0) is None:
            args.seed = default_seed()
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
