"""Flat-file artifacts: CSV tables, key=value summaries, self-contained SVG
charts.

Every writer is deterministic: floats are rendered with the shortest
round-trip repr, rows are emitted in the order given, summary keys are sorted,
and no timestamps or environment details leak into outputs (identical
config + seed must be byte-identical regardless of thread count).
"""

from __future__ import annotations

import math
import os

import numpy as np


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    try:
        value = float(value)
    except (TypeError, ValueError):
        return str(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def write_csv(path: str, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary(path: str, entries: dict):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = [f"{key}={_fmt(entries[key])}" for key in sorted(entries)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def echo_config(out_dir: str, raw_text: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(raw_text)


def svg_line_chart(path: str, x, series: dict, title: str, xlabel: str,
                   ylabel: str, log_y: bool = False):
    """A minimal static line chart (720x440 viewBox), no external deps."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    width, height = 720.0, 440.0
    left, right, top, bottom = 70.0, 20.0, 40.0, 50.0
    xs = [float(v) for v in x]
    all_y = []
    for ys in series.values():
        all_y.extend(float(v) for v in ys)
    if log_y:
        floor = min((v for v in all_y if v > 0), default=1e-12)
        all_y = [math.log10(max(v, floor * 1e-3)) for v in all_y]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * (width - left - right)

    def sy(v):
        if log_y:
            v = math.log10(max(v, 10.0 ** (y_lo - 3)))
        return height - bottom - (v - y_lo) / (y_hi - y_lo) * (height - top - bottom)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:g} {height:g}">',
        f'<rect width="{width:g}" height="{height:g}" fill="white"/>',
        f'<text x="{width / 2:g}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{left:g}" y1="{height - bottom:g}" x2="{width - right:g}" '
        f'y2="{height - bottom:g}" stroke="black"/>',
        f'<line x1="{left:g}" y1="{top:g}" x2="{left:g}" y2="{height - bottom:g}" '
        f'stroke="black"/>',
        f'<text x="{width / 2:g}" y="{height - 12:g}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="16" y="{height / 2:g}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height / 2:g})">{ylabel}{" (log10)" if log_y else ""}</text>',
    ]
    for idx, (label, ys) in enumerate(series.items()):
        pts = " ".join(f"{sx(a):.3f},{sy(float(b)):.3f}" for a, b in zip(xs, ys))
        color = colors[idx % len(colors)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'
        )
        parts.append(
            f'<text x="{width - right - 6:g}" y="{top + 16 * idx + 12:g}" '
            f'text-anchor="end" font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
