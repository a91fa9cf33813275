"""Metrics CSV schema, run summaries, and dependency-free SVG line charts."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .errors import InvalidInputError
from .federated import RoundMetrics

__all__ = [
    "CSV_COLUMNS",
    "MetricsCsvWriter",
    "load_metrics_csv",
    "make_summary",
    "write_summary",
    "svg_line_chart",
    "report_runs",
]

CSV_COLUMNS = (
    "round",
    "eval_loss",
    "eval_acc",
    "bytes_down",
    "bytes_up",
    "param_mem_bytes",
    "peak_transient_bytes",
    "seconds",
)


def metrics_row(m: RoundMetrics) -> list[str]:
    return [
        str(m.round_index),
        repr(m.eval_loss),
        repr(m.eval_acc),
        str(m.bytes_down),
        str(m.bytes_up),
        repr(m.param_mem_bytes),
        str(m.peak_transient_bytes),
        repr(m.seconds),
    ]


class MetricsCsvWriter:
    """Streams one row per round; usable as the run_experiment metrics sink."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(CSV_COLUMNS)

    def __call__(self, m: RoundMetrics) -> None:
        self._writer.writerow(metrics_row(m))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise InvalidInputError(f"{path}: unexpected metrics CSV header")
        rows = []
        for row in reader:
            rows.append(
                {
                    "round": int(row["round"]),
                    "eval_loss": float(row["eval_loss"]),
                    "eval_acc": float(row["eval_acc"]),
                    "bytes_down": int(row["bytes_down"]),
                    "bytes_up": int(row["bytes_up"]),
                    "param_mem_bytes": float(row["param_mem_bytes"]),
                    "peak_transient_bytes": int(row["peak_transient_bytes"]),
                    "seconds": float(row["seconds"]),
                }
            )
        return rows


def make_summary(series: list[RoundMetrics], memory_ratio: float) -> dict:
    """Documented summary keys for a finished run."""
    evaluated = [m for m in series if math.isfinite(m.eval_loss)]
    final = evaluated[-1] if evaluated else series[-1]
    return {
        "final_loss": final.eval_loss,
        "final_accuracy": final.eval_acc,
        "memory_ratio": memory_ratio,
        "bytes_down_total": sum(m.bytes_down for m in series),
        "bytes_up_total": sum(m.bytes_up for m in series),
        "rounds": max(m.round_index for m in series),
    }


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_chart(
    series: dict[str, tuple[list[float], list[float]]],
    title: str,
    x_label: str,
    y_label: str,
    path,
    width: int = 640,
    height: int = 400,
) -> None:
    """One polyline per labeled series; linear axes; no plotting dependency."""
    margin_l, margin_r, margin_t, margin_b = 60, 150, 40, 50
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    points = [
        (x, y)
        for xs, ys in series.values()
        for x, y in zip(xs, ys)
        if math.isfinite(x) and math.isfinite(y)
    ]
    if not points:
        raise InvalidInputError("no finite points to chart")
    x_lo = min(p[0] for p in points)
    x_hi = max(p[0] for p in points)
    y_lo = min(p[1] for p in points)
    y_hi = max(p[1] for p in points)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x: float) -> float:
        return margin_l + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return margin_t + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
        f'<rect x="{margin_l}" y="{margin_t}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#999"/>',
    ]
    for tick in _ticks(x_lo, x_hi):
        px = sx(tick)
        parts.append(
            f'<line x1="{px:.1f}" y1="{margin_t + plot_h}" x2="{px:.1f}" '
            f'y2="{margin_t + plot_h + 4}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{px:.1f}" y="{margin_t + plot_h + 18}" '
            f'text-anchor="middle">{tick:.4g}</text>'
        )
    for tick in _ticks(y_lo, y_hi):
        py = sy(tick)
        parts.append(
            f'<line x1="{margin_l - 4}" y1="{py:.1f}" x2="{margin_l}" '
            f'y2="{py:.1f}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{margin_l - 8}" y="{py + 4:.1f}" '
            f'text-anchor="end">{tick:.4g}</text>'
        )
    parts.append(
        f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 10}" '
        f'text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="18" y="{margin_t + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {margin_t + plot_h / 2:.1f})">{y_label}</text>'
    )

    for idx, (label, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[idx % len(_COLORS)]
        coords = " ".join(
            f"{sx(x):.1f},{sy(y):.1f}"
            for x, y in zip(xs, ys)
            if math.isfinite(x) and math.isfinite(y)
        )
        if coords:
            parts.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" '
                f'stroke-width="1.5"/>'
            )
        ly = margin_t + 14 + idx * 16
        parts.append(
            f'<line x1="{width - margin_r + 10}" y1="{ly - 4}" '
            f'x2="{width - margin_r + 30}" y2="{ly - 4}" stroke="{color}" '
            f'stroke-width="1.5"/>'
        )
        parts.append(f'<text x="{width - margin_r + 34}" y="{ly}">{label}</text>')

    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def report_runs(metric_files: list, out_dir) -> dict:
    """Merge metrics CSVs into a summary JSON plus loss/accuracy charts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    merged: dict[str, dict] = {}
    loss_series: dict[str, tuple[list[float], list[float]]] = {}
    acc_series: dict[str, tuple[list[float], list[float]]] = {}
    for file in metric_files:
        label = Path(file).stem
        rows = [r for r in load_metrics_csv(file) if math.isfinite(r["eval_loss"])]
        if not rows:
            continue
        merged[label] = {
            "final_loss": rows[-1]["eval_loss"],
            "final_accuracy": rows[-1]["eval_acc"],
            "rounds": rows[-1]["round"],
            "bytes_down_total": sum(r["bytes_down"] for r in rows),
            "bytes_up_total": sum(r["bytes_up"] for r in rows),
        }
        loss_series[label] = (
            [r["round"] for r in rows],
            [r["eval_loss"] for r in rows],
        )
        acc_series[label] = (
            [r["round"] for r in rows],
            [r["eval_acc"] for r in rows],
        )
    if not merged:
        raise InvalidInputError("no evaluated rounds found in the given files")
    write_summary(out / "report.json", merged)
    svg_line_chart(
        loss_series, "Evaluation loss", "round", "eval loss", out / "eval_loss.svg"
    )
    svg_line_chart(
        acc_series, "Evaluation accuracy", "round", "eval accuracy", out / "eval_acc.svg"
    )
    return merged
