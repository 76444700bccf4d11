"""Render experiment CSVs as standalone SVG charts.

Pure post-processing with no dependency beyond the standard library: the
chart type is chosen from the CSV's column set, and coordinates are printed
with fixed precision so output is byte-stable for golden-file tests.
"""

from __future__ import annotations

import math
import os
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

from metastep.csvio import CsvParseError, CsvTable, read_csv

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 150, 40, 50
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]

Series = Dict[str, List[Tuple[float, float]]]


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Axis:
    def __init__(self, values: Sequence[float], log: bool, lo_px: float, hi_px: float):
        vals = [v for v in values if math.isfinite(v) and (v > 0 or not log)]
        self.log = log and bool(vals)
        if self.log:
            vals = [math.log10(v) for v in vals]
        if not vals:
            lo, hi = 0.0, 1.0
        else:
            lo, hi = min(vals), max(vals)
            if lo == hi:
                pad = abs(lo) * 0.05 or 0.5
                lo, hi = lo - pad, hi + pad
        self.lo, self.hi = lo, hi
        self.lo_px, self.hi_px = lo_px, hi_px

    def ok(self, v: float) -> bool:
        return math.isfinite(v) and (v > 0 or not self.log)

    def px(self, v: float) -> float:
        u = math.log10(v) if self.log else v
        return self.lo_px + (u - self.lo) / (self.hi - self.lo) * (self.hi_px - self.lo_px)

    def ticks(self, count: int = 5) -> List[Tuple[float, str]]:
        out = []
        for i in range(count):
            u = self.lo + (self.hi - self.lo) * i / (count - 1)
            v = 10**u if self.log else u
            out.append((self.lo_px + (self.hi_px - self.lo_px) * i / (count - 1), f"{v:.3g}"))
        return out


def _frame(title: str, xlabel: str, ylabel: str, xa: _Axis, ya: _Axis, x_ticks: bool = True) -> List[str]:
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="22.00" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for px, label in xa.ticks() if x_ticks else []:
        parts.append(f'<line x1="{_f(px)}" y1="{y0}" x2="{_f(px)}" y2="{y0 + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{_f(px)}" y="{y0 + 18}" text-anchor="middle" font-family="sans-serif" font-size="10">{escape(label)}</text>'
        )
    for py, label in ya.ticks():
        parts.append(f'<line x1="{x0 - 5}" y1="{_f(py)}" x2="{x0}" y2="{_f(py)}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 8}" y="{_f(py + 3)}" text-anchor="end" font-family="sans-serif" font-size="10">{escape(label)}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>'
    )
    parts.append(
        f'<text x="16" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.2f})">{escape(ylabel)}</text>'
    )
    return parts


def _legend(names: Sequence[str]) -> List[str]:
    parts = []
    x = WIDTH - MARGIN_R + 10
    for i, name in enumerate(names):
        y = MARGIN_T + 14 * i + 6
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<line x1="{x}" y1="{y}" x2="{x + 16}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{x + 20}" y="{y + 4}" font-family="sans-serif" font-size="10">{escape(name)}</text>')
    return parts


def line_chart(series: Series, title: str, xlabel: str, ylabel: str, xlog=False, ylog=False) -> str:
    """One polyline per series; an empty mapping yields a bare set of axes."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    xa = _Axis(xs, xlog, MARGIN_L, WIDTH - MARGIN_R)
    ya = _Axis(ys, ylog, HEIGHT - MARGIN_B, MARGIN_T)
    parts = _frame(title, xlabel, ylabel, xa, ya)
    for i, (_name, pts) in enumerate(series.items()):
        coords = [f"{_f(xa.px(x))},{_f(ya.px(y))}" for x, y in pts if xa.ok(x) and ya.ok(y)]
        if coords:
            color = PALETTE[i % len(PALETTE)]
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(coords)}"/>')
    parts += _legend(list(series))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_chart(labels: Sequence[str], values: Sequence[float], errors: Sequence[float], title: str, ylabel: str) -> str:
    """Bars from zero with +/- error whiskers."""
    tops = [v + (e if math.isfinite(e) else 0.0) for v, e in zip(values, errors)]
    xa = _Axis([0.0, float(max(len(labels), 1))], False, MARGIN_L, WIDTH - MARGIN_R)
    ya = _Axis([0.0, *tops], False, HEIGHT - MARGIN_B, MARGIN_T)
    parts = _frame(title, "", ylabel, xa, ya, x_ticks=False)
    base = ya.px(0.0)
    for i, (label, v, e) in enumerate(zip(labels, values, errors)):
        if not math.isfinite(v):
            continue
        left, right = xa.px(i + 0.15), xa.px(i + 0.85)
        top = ya.px(v)
        color = PALETTE[i % len(PALETTE)]
        parts.append(
            f'<rect x="{_f(left)}" y="{_f(min(top, base))}" width="{_f(right - left)}" '
            f'height="{_f(abs(base - top))}" fill="{color}"/>'
        )
        if math.isfinite(e) and e > 0:
            mid = (left + right) / 2
            parts.append(
                f'<line x1="{_f(mid)}" y1="{_f(ya.px(v - e))}" x2="{_f(mid)}" y2="{_f(ya.px(v + e))}" stroke="black"/>'
            )
        parts.append(
            f'<text x="{_f((left + right) / 2)}" y="{HEIGHT - MARGIN_B + 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="9">{escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _records(table: CsvTable, kind: str):
    if "record" not in table.columns:
        return list(zip(table.rows, table.line_numbers))
    return [(r, ln) for r, ln in zip(table.rows, table.line_numbers) if r["record"] == kind]


def _num(row: dict, col: str, line: int) -> float:
    s = row[col]
    if s == "":
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise CsvParseError(f"column {col!r}: not a number: {s!r}", line) from None


def _setting(row: dict) -> str:
    return f"{row['objective']} n={row['n']} sigma={row['sigma']}"


def charts_for(table: CsvTable, stem: str) -> Dict[str, str]:
    """Map output file names to SVG documents for a parsed experiment CSV."""
    cols = set(table.columns)
    out: Dict[str, str] = {}
    if {"k", "eta", "grad"} <= cols:
        pts = [(_num(r, "k", ln), _num(r, "eta", ln)) for r, ln in _records(table, "trace")]
        series: Series = {"eta_k": pts} if pts else {}
        out[f"{stem}_eta_trace.svg"] = line_chart(series, "meta-GD step size", "meta-step k", "eta")
    elif {"unroll", "eta_grid", "in_bracket"} <= cols:
        pts = [(_num(r, "unroll", ln), _num(r, "eta_grid", ln)) for r, ln in zip(table.rows, table.line_numbers)]
        series = {"grid argmin": pts} if pts else {}
        out[f"{stem}_eta_vs_t.svg"] = line_chart(series, "optimal step size vs unroll length", "t", "eta*", xlog=True)
    elif {"objective", "eta", "meta_value", "test_rmse"} <= cols:
        curves: Series = {}
        for r, ln in _records(table, "curve"):
            curves.setdefault(_setting(r), []).append((_num(r, "eta", ln), _num(r, "meta_value", ln)))
        out[f"{stem}_objective.svg"] = line_chart(
            curves, "meta-objective vs step size", "eta", "meta-objective", xlog=True, ylog=True
        )
        summ = _records(table, "summary")
        labels = [_setting(r) for r, _ in summ]
        vals = [_num(r, "test_rmse", ln) for r, ln in summ]
        errs = [_num(r, "test_rmse_se", ln) for r, ln in summ]
        out[f"{stem}_test_rmse.svg"] = bar_chart(labels, vals, errs, "test RMSE at the selected step size", "RMSE")
    else:
        raise CsvParseError(f"unrecognized column set: {', '.join(table.columns)}", 2)
    return out


def emit_plot_files(csv_path, out_dir, stem: Optional[str] = None) -> List[str]:
    """Write one SVG per chart derived from ``csv_path``; returns the paths."""
    table = read_csv(csv_path)
    stem = stem or os.path.splitext(os.path.basename(csv_path))[0]
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, svg in charts_for(table, stem).items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(svg)
        paths.append(path)
    return paths
