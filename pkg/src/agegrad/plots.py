"""Standalone SVG charts for training logs and metric reports.

Each series is a single <polyline> whose points are raw data coordinates;
a group transform maps data space onto the pixel viewport, so the numbers
in the SVG equal the numbers in the source CSV. The plotted series are
also written as a long-form CSV (series,x,y) next to the SVG.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

from .errors import ManifestError

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 64, 20, 34, 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
TICKS = 5


@dataclass
class Series:
    label: str
    xs: list[float]
    ys: list[float]


def _parse_float(text: str, path: str, lineno: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ManifestError(f"{path} row {lineno}: column {column} is not a number: {text!r}") from None


def read_trainlog_series(path: str) -> Series:
    """Training-loss-vs-epoch series from a TrainLog CSV."""
    if not os.path.isfile(path):
        raise ManifestError(f"training log not found: {path}")
    xs, ys = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "epoch" not in reader.fieldnames or "train_loss" not in reader.fieldnames:
            raise ManifestError(f"{path} is not a TrainLog CSV (needs epoch and train_loss columns)")
        for lineno, row in enumerate(reader, start=2):
            xs.append(_parse_float(row["epoch"], path, lineno, "epoch"))
            ys.append(_parse_float(row["train_loss"], path, lineno, "train_loss"))
    if not xs:
        raise ManifestError(f"training log {path} has no data rows")
    return Series(os.path.splitext(os.path.basename(path))[0], xs, ys)


def read_report_cdf_series(path: str) -> Series:
    """CDF (threshold, fraction) series from a MetricsReport CSV."""
    if not os.path.isfile(path):
        raise ManifestError(f"metrics report not found: {path}")
    xs, ys = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["metric", "value"]:
            raise ManifestError(f"{path} is not a MetricsReport CSV (needs metric,value header)")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ManifestError(f"{path} row {lineno}: expected metric,value")
            if row[0].startswith("cdf@"):
                xs.append(_parse_float(row[0][4:], path, lineno, "threshold"))
                ys.append(_parse_float(row[1], path, lineno, "value"))
    if not xs:
        raise ManifestError(f"metrics report {path} has no cdf rows")
    return Series(os.path.splitext(os.path.basename(path))[0], xs, ys)


def _bounds(series: list[Series]) -> tuple[float, float, float, float]:
    xmin = min(min(s.xs) for s in series)
    xmax = max(max(s.xs) for s in series)
    ymin = min(min(s.ys) for s in series)
    ymax = max(max(s.ys) for s in series)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymax = ymin + 1.0
    return xmin, xmax, ymin, ymax


def render_line_svg(series: list[Series], title: str, xlabel: str, ylabel: str, path: str) -> None:
    """One polyline per series inside a data-to-pixel transform group."""
    if not series:
        raise ManifestError("nothing to plot")
    xmin, xmax, ymin, ymax = _bounds(series)
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    sx = plot_w / (xmax - xmin)
    sy = -plot_h / (ymax - ymin)
    tx = MARGIN_LEFT - xmin * sx
    ty = MARGIN_TOP + plot_h - ymin * sy

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    # axes and ticks in pixel space
    x_axis_y = MARGIN_TOP + plot_h
    lines.append(
        f'<line x1="{MARGIN_LEFT}" y1="{x_axis_y}" x2="{MARGIN_LEFT + plot_w}" y2="{x_axis_y}" stroke="black"/>'
    )
    lines.append(
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{x_axis_y}" stroke="black"/>'
    )
    for i in range(TICKS + 1):
        frac = i / TICKS
        xv = xmin + frac * (xmax - xmin)
        px = MARGIN_LEFT + frac * plot_w
        lines.append(f'<line x1="{px:.1f}" y1="{x_axis_y}" x2="{px:.1f}" y2="{x_axis_y + 4}" stroke="black"/>')
        lines.append(f'<text x="{px:.1f}" y="{x_axis_y + 17}" text-anchor="middle">{xv:.4g}</text>')
        yv = ymin + frac * (ymax - ymin)
        py = x_axis_y - frac * plot_h
        lines.append(f'<line x1="{MARGIN_LEFT - 4}" y1="{py:.1f}" x2="{MARGIN_LEFT}" y2="{py:.1f}" stroke="black"/>')
        lines.append(f'<text x="{MARGIN_LEFT - 7}" y="{py + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
    lines.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{xlabel}</text>'
    )
    lines.append(
        f'<text x="16" y="{MARGIN_TOP + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN_TOP + plot_h / 2:.1f})">{ylabel}</text>'
    )

    lines.append(f'<g transform="translate({tx:.8g} {ty:.8g}) scale({sx:.8g} {sy:.8g})">')
    for idx, s in enumerate(series):
        color = COLORS[idx % len(COLORS)]
        points = " ".join(f"{x:.6f},{y:.6f}" for x, y in zip(s.xs, s.ys))
        lines.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'vector-effect="non-scaling-stroke" points="{points}"/>'
        )
    lines.append("</g>")
    for idx, s in enumerate(series):
        color = COLORS[idx % len(COLORS)]
        ly = MARGIN_TOP + 14 * idx + 6
        lines.append(f'<rect x="{MARGIN_LEFT + plot_w - 150}" y="{ly - 8}" width="12" height="3" fill="{color}"/>')
        lines.append(f'<text x="{MARGIN_LEFT + plot_w - 133}" y="{ly - 2}">{s.label}</text>')
    lines.append("</svg>")

    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
    _write_series_csv(os.path.splitext(path)[0] + ".csv", series)


def _write_series_csv(path: str, series: list[Series]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["series", "x", "y"])
        for s in series:
            for x, y in zip(s.xs, s.ys):
                writer.writerow([s.label, f"{x:.6f}", f"{y:.6f}"])
    os.replace(tmp, path)


def plot_train_logs(log_paths: list[str], out_svg: str) -> None:
    series = [read_trainlog_series(p) for p in log_paths]
    render_line_svg(series, "Training loss vs. epochs", "epoch", "training loss", out_svg)


def plot_reports(report_paths: list[str], out_svg: str) -> None:
    series = [read_report_cdf_series(p) for p in report_paths]
    render_line_svg(series, "Cumulative distribution of absolute error", "error threshold (years)", "fraction within threshold", out_svg)
