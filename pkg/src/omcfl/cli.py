"""Command-line entry points: run, ablate, codec, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .accounting import memory_ratio, model_inventory
from .config import (
    ExperimentConfig,
    apply_overrides,
    build_state,
    experiment_from_resolved,
    load_experiment,
    parse_config_file,
    render_config,
    resolve_config,
)
from .errors import OmcError
from .federated import run_experiment
from .minifloat import FloatFormat, decode, encode, quantize
from .reporting import MetricsCsvWriter, make_summary, report_runs, write_summary

__all__ = ["main", "run_to_directory", "ABLATION_ROWS"]

# Table-style ablation ladder: each row switches on one more method.
# The last row uses the base config's policy.fraction (default 0.9).
ABLATION_ROWS = (
    ("fp32", {"policy.fraction": "0.0"}),
    (
        "quant",
        {
            "policy.fraction": "1.0",
            "policy.weights_only": "false",
            "policy.pvt": "false",
        },
    ),
    (
        "quant_pvt",
        {
            "policy.fraction": "1.0",
            "policy.weights_only": "false",
            "policy.pvt": "true",
        },
    ),
    (
        "weights_only",
        {
            "policy.fraction": "1.0",
            "policy.weights_only": "true",
            "policy.pvt": "true",
        },
    ),
    ("partial", {"policy.weights_only": "true", "policy.pvt": "true"}),
)


def run_to_directory(cfg: ExperimentConfig, out_dir) -> dict:
    """Execute one experiment; write config echo, metrics CSV, summary, checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(render_config(cfg.resolved))
    state = build_state(cfg)
    ratio = memory_ratio(model_inventory(state.params), cfg.fl.policy)
    with MetricsCsvWriter(out / "metrics.csv") as sink:
        series, _ = run_experiment(
            state, cfg.fl, metrics_sink=sink, checkpoint_path=out / "checkpoint.omc"
        )
    summary = make_summary(series, ratio)
    write_summary(out / "summary.json", summary)
    return summary


def _cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    cfg = load_experiment(args.config, overrides)
    out_dir = args.out or Path("runs") / cfg.label
    summary = run_to_directory(cfg, out_dir)
    print(f"wrote {out_dir}")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    raw = parse_config_file(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, policy_overrides in ABLATION_ROWS:
        row_raw = apply_overrides(raw, [f"{k}={v}" for k, v in policy_overrides.items()])
        row_raw["run.label"] = label
        row = {"label": label, "final_loss": "", "final_accuracy": "",
               "memory_ratio": "", "error": ""}
        try:
            cfg = experiment_from_resolved(resolve_config(row_raw))
            summary = run_to_directory(cfg, out / label)
            row.update(
                final_loss=repr(summary["final_loss"]),
                final_accuracy=repr(summary["final_accuracy"]),
                memory_ratio=repr(summary["memory_ratio"]),
            )
        except Exception as exc:  # keep remaining rows running
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["label", "final_loss", "final_accuracy",
                            "memory_ratio", "error"]
        )
        writer.writeheader()
        writer.writerows(rows)

    print(f"{'label':<14} {'final_loss':>12} {'final_acc':>10} {'mem_ratio':>10}  error")
    for row in rows:
        loss = row["final_loss"][:12] if row["final_loss"] else "-"
        acc = row["final_accuracy"][:10] if row["final_accuracy"] else "-"
        ratio = row["memory_ratio"][:10] if row["memory_ratio"] else "-"
        print(f"{row['label']:<14} {loss:>12} {acc:>10} {ratio:>10}  {row['error']}")
    return 0


def _codec_category(pattern: int, fmt: FloatFormat) -> str:
    e_field = (pattern >> fmt.mantissa_bits) & ((1 << fmt.exponent_bits) - 1)
    m = pattern & ((1 << fmt.mantissa_bits) - 1)
    if e_field == 0:
        return "zero" if m == 0 else "subnormal"
    return "normal"


def _cmd_codec(args) -> int:
    fmt = FloatFormat.parse(args.format)
    w = fmt.total_bits
    print(f"format {fmt}: {w} bits, bias {fmt.bias}")
    print(f"  max finite    {fmt.max_value!r}")
    print(f"  min normal    {fmt.min_normal!r}")
    print(f"  min subnormal {fmt.min_subnormal!r}")
    for text in args.values:
        x = float(text)
        q = quantize(x, fmt)
        bits = encode(x, fmt)
        print(f"{text} -> {q!r}  pattern 0b{bits:0{w}b} (0x{bits:x})")
    if w <= 12 and not args.values:
        print(f"all {1 << w} representable values:")
        for pattern in range(1 << w):
            value = decode(pattern, fmt)
            print(f"  0b{pattern:0{w}b}  {value!r:>24}  {_codec_category(pattern, fmt)}")
    return 0


def _cmd_report(args) -> int:
    merged = report_runs(args.files, args.out)
    print(json.dumps(merged, indent=2, sort_keys=True))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omcfl",
        description="Federated-learning simulation with reduced-precision "
        "parameter storage.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("--config", required=True, help="config file path")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
    p_run.add_argument("--seed", type=int, help="override run.seed")
    p_run.add_argument("--out", help="output directory (default runs/<label>)")
    p_run.set_defaults(func=_cmd_run)

    p_ablate = sub.add_parser("ablate", help="run the five-row method ladder")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--out", required=True)
    p_ablate.set_defaults(func=_cmd_ablate)

    p_codec = sub.add_parser("codec", help="inspect a reduced-precision format")
    p_codec.add_argument("--format", required=True, metavar="S1EyMz")
    p_codec.add_argument("values", nargs="*", help="values to quantize")
    p_codec.set_defaults(func=_cmd_codec)

    p_report = sub.add_parser("report", help="merge metrics CSVs into charts")
    p_report.add_argument("files", nargs="+", help="metrics CSV files")
    p_report.add_argument("--out", required=True)
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
