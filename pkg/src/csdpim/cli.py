"""Command-line surface tying the pipeline together.

Subcommands: encode, prune, fta, compile, sim, baseline, report, dump,
synth (and an undocumented `oracle` helper for debugging). Failures print a
machine-readable error JSON on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import csd, metrics, oracle, simulator, workload
from .compiler import (
    ArchConfig,
    dump_listing,
    group_filters,
    im2col,
    load_compiled,
    pack_weights,
    save_compiled,
)
from .container import load_tensor, save_tensor
from .errors import ConfigError, CsdPimError
from .sparsify import (
    PruneMask,
    ThresholdVector,
    block_l2_prune,
    compute_thresholds,
    fta_approximate,
    sparsity_report,
    FtaWeights,
)


def _load_arch(path: str | None) -> ArchConfig:
    if path is None:
        return ArchConfig()
    with open(path) as fh:
        return ArchConfig.from_dict(json.load(fh))


def _out_path(path: str) -> str:
    override = os.environ.get("CSDPIM_OUTPUT_DIR")
    if override:
        return os.path.join(override, os.path.basename(path))
    return path


def cmd_encode(args) -> int:
    if args.parse is not None:
        word = csd.CsdWord.parse(args.parse)
    elif args.value is not None:
        word = csd.to_csd(args.value)
    else:
        raise ConfigError("encode needs --value or --parse")
    print(f"value: {word.value}")
    print(f"csd: {word.render()}")
    print(f"nonzero: {word.nonzero_count}")
    return 0


def cmd_prune(args) -> int:
    weights = load_tensor(args.weights)
    mask = block_l2_prune(weights, alpha=args.alpha, sparsity=args.sparsity)
    save_tensor(_out_path(args.out), mask.bits.astype(np.int8), name=f"mask:alpha={args.alpha}")
    return 0


def _read_mask(path, alpha: int) -> PruneMask:
    bits, name = load_tensor(path, with_name=True)
    if name.startswith("mask:alpha="):
        alpha = int(name.split("=", 1)[1])
    return PruneMask(bits=bits.astype(np.uint8), alpha=alpha)


def cmd_fta(args) -> int:
    weights = load_tensor(args.weights)
    mask = _read_mask(args.mask, args.alpha)
    th = compute_thresholds(weights, mask)
    fta = fta_approximate(weights, mask, th)
    save_tensor(_out_path(args.out), fta.data, name="fta-weights")
    save_tensor(_out_path(args.thresholds_out), th.phi_th.astype(np.int8), name="thresholds")
    if args.report:
        with open(_out_path(args.report), "w") as fh:
            json.dump(sparsity_report(weights, mask, fta), fh, indent=2, sort_keys=True)
    return 0


def _conv_geometry(args) -> dict | None:
    if args.ifmap is None:
        return None
    h, w, c = args.ifmap
    return {"ifmap": [h, w, c], "kernel": list(args.kernel), "stride": args.stride, "pad": args.pad}


def cmd_compile(args) -> int:
    arch = _load_arch(args.arch)
    data = load_tensor(args.weights)
    mask = _read_mask(args.mask, arch.alpha)
    th = ThresholdVector(phi_th=load_tensor(args.thresholds).astype(np.int64))
    fta = FtaWeights(data=data.astype(np.int8), thresholds=th, mask=mask)
    conv = _conv_geometry(args)
    if conv is not None:
        h, w, c = conv["ifmap"]
        kh, kw = conv["kernel"]
        ho = (h + 2 * conv["pad"] - kh) // conv["stride"] + 1
        wo = (w + 2 * conv["pad"] - kw) // conv["stride"] + 1
        m = ho * wo
    else:
        m = args.m
    placement = group_filters(th, arch)
    compiled = pack_weights(
        fta, placement, arch, m=m, kind=args.kind, conv=conv, layer_id=args.layer_id
    )
    save_compiled(_out_path(args.out), compiled)
    return 0


def _load_inputs(path):
    return load_tensor(path)


def cmd_sim(args) -> int:
    compiled = load_compiled(args.layer)
    inputs = _load_inputs(args.inputs)
    trace = open(_out_path(args.trace), "w") if args.trace else None
    try:
        out, stats = simulator.run_layer(
            compiled, inputs, skip_input_bits=not args.no_skip, trace=trace
        )
    finally:
        if trace:
            trace.close()
    save_tensor(_out_path(args.out), out.astype(np.int32), name="outputs")
    with open(_out_path(args.stats), "w") as fh:
        fh.write(stats.to_json())
    return 0


def cmd_baseline(args) -> int:
    weights = load_tensor(args.weights)
    inputs = _load_inputs(args.inputs)
    conv = _conv_geometry(args)
    out, stats = simulator.run_dense_baseline(weights, inputs, _load_arch(args.arch), conv=conv)
    save_tensor(_out_path(args.out), out.astype(np.int32), name="outputs")
    with open(_out_path(args.stats), "w") as fh:
        fh.write(stats.to_json())
    return 0


def cmd_report(args) -> int:
    with open(args.db) as fh:
        db = simulator.SimStats.from_dict(json.load(fh))
    with open(args.base) as fh:
        base = simulator.SimStats.from_dict(json.load(fh))
    costs = metrics.DEFAULT_COSTS
    if args.costs:
        with open(args.costs) as fh:
            costs = metrics.CostTable.from_dict(json.load(fh))
    report = metrics.build_report(db, base, costs)
    print(report.render_table())
    if args.out:
        with open(_out_path(args.out), "w") as fh:
            fh.write(report.to_json())
    if args.csv:
        with open(_out_path(args.csv), "w") as fh:
            fh.write(report.to_csv())
    return 0


def cmd_dump(args) -> int:
    print(dump_listing(load_compiled(args.layer)))
    return 0


def cmd_synth(args) -> int:
    config = workload.ExperimentConfig.from_file(args.config)
    tensors = workload.generate_synthetic(config.workload, config.seed)
    out_dir = os.environ.get("CSDPIM_OUTPUT_DIR") or config.output_dir or args.out_dir
    if out_dir is None:
        raise ConfigError("no output directory: pass --out-dir or set output_dir")
    os.makedirs(out_dir, exist_ok=True)
    save_tensor(os.path.join(out_dir, "weights.tns"), tensors["weights"], name="weights")
    save_tensor(os.path.join(out_dir, "inputs.tns"), tensors["inputs"], name="inputs")
    return 0


def cmd_oracle(args) -> int:
    weights = load_tensor(args.weights)
    inputs = _load_inputs(args.inputs)
    if args.ifmap is not None:
        geom = _conv_geometry(args)
        inputs = im2col(inputs, tuple(geom["kernel"]), geom["stride"], geom["pad"])
    out = oracle.mvm_ref(inputs, weights)
    save_tensor(_out_path(args.out), out.astype(np.int32), name="oracle")
    return 0


def _add_conv_flags(p):
    p.add_argument("--ifmap", type=int, nargs=3, metavar=("H", "W", "C"), default=None)
    p.add_argument("--kernel", type=int, nargs=2, metavar=("KH", "KW"), default=(1, 1))
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--pad", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csdpim",
        description="Sparsity-aware PIM compiler and cycle-level simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode an INT8 value as a signed-digit string")
    p.add_argument("--value", type=int, default=None)
    p.add_argument("--parse", type=str, default=None, help="parse a digit string instead")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("prune", help="block-wise L2 pruning mask")
    p.add_argument("--weights", required=True)
    p.add_argument("--alpha", type=int, default=8)
    p.add_argument("--sparsity", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("fta", help="fixed-threshold approximation of pruned weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--alpha", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds-out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_fta)

    p = sub.add_parser("compile", help="pack approximated weights into a layer container")
    p.add_argument("--weights", required=True, help="approximated weights (K x N)")
    p.add_argument("--mask", required=True)
    p.add_argument("--thresholds", required=True)
    p.add_argument("--arch", default=None, help="arch config JSON")
    p.add_argument("--kind", choices=("fc", "std-conv", "pw-conv"), default="fc")
    p.add_argument("--m", type=int, default=1, help="input rows (fc layers)")
    p.add_argument("--layer-id", default="")
    _add_conv_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("sim", help="run a compiled layer")
    p.add_argument("--layer", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--trace", default=None)
    p.add_argument("--no-skip", action="store_true", help="disable input bit skipping")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("baseline", help="run the dense bit-serial baseline")
    p.add_argument("--weights", required=True, help="raw weights (K x N)")
    p.add_argument("--inputs", required=True)
    p.add_argument("--arch", default=None)
    _add_conv_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="join sparse and baseline stats into a report")
    p.add_argument("--db", required=True, help="sparse-run stats JSON")
    p.add_argument("--base", required=True, help="baseline stats JSON")
    p.add_argument("--costs", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("dump", help="human-readable listing of a layer container")
    p.add_argument("--layer", required=True)
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("synth", help="generate a seeded synthetic workload")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle")  # undocumented debugging helper
    p.add_argument("--weights", required=True)
    p.add_argument("--inputs", required=True)
    _add_conv_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CsdPimError as exc:
        print(json.dumps({"error": exc.payload()}), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": {"code": "io", "message": str(exc)}}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
