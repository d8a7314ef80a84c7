"""Command-line entry point: ``gradestc {run,ablate,baselines,analyze}``."""
from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .flsim.codecs import CodecSpec
from .flsim.config import load_config
from .flsim.sim import Simulation
from .metrics import GradientTrace, adjacent_vs_distant, cosine_heatmap

ABLATION_MODES = ("full", "first_only", "replace_all", "fixed_d")


def _csv_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _row(name: str, sim: Simulation, layers=None) -> dict:
    """Summary line; ``layers`` fixes which layers the byte column covers."""
    s = sim.summary()
    layer_bytes = s["compressed_layer_bytes"] if layers is None else sim.ledger.total_bytes(layers=layers)
    return {
        "name": name,
        "final_accuracy": s["final_accuracy"],
        "best_accuracy": s["best_accuracy"],
        "total_bytes": s["total_bytes"],
        "layer_bytes": layer_bytes,
        "bytes_at_threshold": s["bytes_at_threshold"],
        "sum_d": s["sum_d"],
    }


def _print_table(rows: list[dict]) -> None:
    cols = list(rows[0])
    widths = {c: max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(_fmt(r[c]).ljust(widths[c]) for c in cols))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return "-" if v is None else str(v)


def _simulate(cfg, out: Path | None, name: str, **sim_kwargs) -> Simulation:
    sim = Simulation(cfg, **sim_kwargs)
    sim.run()
    if out is not None:
        sim.write_outputs(out / name)
    return sim


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    trace = _csv_list(args.trace_layers) if args.trace_layers else ()
    sim = Simulation(cfg, trace_layers=trace, trace_window=args.trace_window, collect_errors=args.errors)
    for rep in sim.run():
        if args.verbose:
            print(f"round {rep.round:4d}  acc {rep.test_accuracy:.4f}  loss {rep.test_loss:.4f}  bytes {rep.cum_bytes}")
    out = sim.write_outputs(args.out)
    print(json.dumps({k: v for k, v in sim.summary().items() if k != "layers"}, indent=2))
    print(f"outputs written to {out}")
    return 0


def cmd_ablate(args) -> int:
    base = load_config(args.config)
    compressed = [name for name, spec in base.codecs.items() if spec.kind == "gradestc"]
    if base.default_codec.kind == "gradestc":
        compressed.append("default")
    if not compressed:
        print("config assigns no gradestc codec; nothing to ablate", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else None
    rows = []
    for mode in _csv_list(args.modes):
        if mode not in ABLATION_MODES:
            print(f"unknown mode {mode!r}; choose from {', '.join(ABLATION_MODES)}", file=sys.stderr)
            return 2
        cfg = copy.deepcopy(base)
        for spec in [*cfg.codecs.values(), cfg.default_codec]:
            if spec.kind == "gradestc":
                spec.mode = mode
        rows.append(_row(mode, _simulate(cfg, out, mode)))
    _print_table(rows)
    if out is not None:
        (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    return 0


def cmd_baselines(args) -> int:
    """Uncompressed, the configured codecs, Top-k and 8-bit quantization on the same layers."""
    base = load_config(args.config)
    targets = [name for name, spec in base.codecs.items() if spec.kind != "none"]
    out = Path(args.out) if args.out else None
    variants = {"fedavg": {}}
    if targets:
        variants["configured"] = dict(base.codecs)
    else:
        targets = None  # apply baselines to every layer through the default codec
    variants[f"topk{args.topk_fraction:g}"] = CodecSpec(kind="topk", fraction=args.topk_fraction)
    variants[f"quant{args.quant_bits}"] = CodecSpec(kind="quant", bits=args.quant_bits)
    rows = []
    for name, codecs in variants.items():
        cfg = copy.deepcopy(base)
        if isinstance(codecs, CodecSpec):
            if targets is None:
                cfg.codecs, cfg.default_codec = {}, codecs
            else:
                cfg.codecs = {layer: copy.deepcopy(codecs) for layer in targets}
        else:
            cfg.codecs = copy.deepcopy(codecs)
            if name == "fedavg":
                cfg.default_codec = CodecSpec()
        sim = _simulate(cfg, out, name)
        rows.append(_row(name, sim, layers=targets or list(sim.params)))
    _print_table(rows)
    if out is not None:
        (out / "baselines.json").write_text(json.dumps(rows, indent=2))
    return 0


def cmd_analyze(args) -> int:
    trace_dir = Path(args.trace)
    if (trace_dir / "trace").is_dir():
        trace_dir = trace_dir / "trace"
    trace = GradientTrace.load(trace_dir)
    anchors = [int(a) for a in _csv_list(args.anchors)]
    layers = _csv_list(args.layers) if args.layers else None
    heat = cosine_heatmap(trace, anchors, client=args.client, layers=layers)
    out = Path(args.out) if args.out else trace_dir / f"heatmap_client{args.client}.csv"
    heat.to_csv(out)
    print(f"heatmap written to {out}")
    for layer in heat.values:
        rounds = trace.rounds(args.client, layer)
        adj, dist = adjacent_vs_distant(trace, args.client, layer, rounds[0], rounds[-1], args.gap)
        print(f"{layer}: adjacent-round cosine {adj:.4f}, >= {args.gap} rounds apart {dist:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradestc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulation and write rounds.csv, ledger.csv, summary.json")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--trace-layers", help="comma-separated layers whose pseudo-gradients are stored")
    run.add_argument("--trace-window", type=int, default=64)
    run.add_argument("--errors", action="store_true", help="write per-round error statistics")
    run.add_argument("-v", "--verbose", action="store_true")
    run.set_defaults(func=cmd_run)

    ablate = sub.add_parser("ablate", help="rerun the config under several basis-update modes")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--modes", default=",".join(ABLATION_MODES))
    ablate.add_argument("--out")
    ablate.set_defaults(func=cmd_ablate)

    base = sub.add_parser("baselines", help="compare against FedAvg, Top-k and quantization")
    base.add_argument("--config", required=True)
    base.add_argument("--out")
    base.add_argument("--topk-fraction", type=float, default=0.1)
    base.add_argument("--quant-bits", type=int, default=8)
    base.set_defaults(func=cmd_baselines)

    analyze = sub.add_parser("analyze", help="cosine-similarity heatmap from a stored gradient trace")
    analyze.add_argument("--trace", required=True, help="trace directory or a run output directory")
    analyze.add_argument("--anchors", required=True, help="comma-separated anchor rounds")
    analyze.add_argument("--client", type=int, default=0)
    analyze.add_argument("--layers")
    analyze.add_argument("--gap", type=int, default=20)
    analyze.add_argument("--out")
    analyze.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
