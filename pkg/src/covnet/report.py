"""Merge metrics CSVs and render a result table plus static SVG plots.

The plots are written by hand as SVG text so no plotting package or display
is needed, and the same input always yields byte-identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from .errors import FormatError
from .train import METRICS_COLUMNS

_INT_COLS = ("cr", "epoch", "flops_total")
_FLOAT_COLS = ("cov_snr_db", "train_mse", "eval_nmse_db", "wallclock_s")


@dataclass(frozen=True)
class Row:
    run_id: str
    variant: str
    cr: int
    cov_snr_db: float
    epoch: int
    train_mse: float
    eval_nmse_db: float
    flops_total: int
    wallclock_s: float


def _parse_row(raw: dict, where: str) -> Row:
    missing = [c for c in METRICS_COLUMNS if raw.get(c) in (None, "")]
    if missing:
        raise FormatError(f"{where}: missing value for {', '.join(missing)}")
    vals = {"run_id": raw["run_id"], "variant": raw["variant"]}
    try:
        for c in _INT_COLS:
            vals[c] = int(raw[c])
        for c in _FLOAT_COLS:
            vals[c] = float(raw[c])
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None
    if math.isnan(vals["eval_nmse_db"]) or vals["eval_nmse_db"] == math.inf:
        raise FormatError(f"{where}: eval_nmse_db must be finite or -inf")
    return Row(**vals)


def read_metrics(path) -> list[Row]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        if list(reader.fieldnames) != METRICS_COLUMNS:
            raise FormatError(f"{path}: header {reader.fieldnames} does not match {METRICS_COLUMNS}")
        rows = []
        for line_no, raw in enumerate(reader, start=2):
            if None in raw:
                raise FormatError(f"{path} line {line_no}: too many fields")
            rows.append(_parse_row(raw, f"{path} line {line_no}"))
    return rows


def merge(paths: Iterable) -> list[Row]:
    """Concatenate metrics files; a repeated (run_id, epoch) keeps its last occurrence."""
    merged: dict[tuple[str, int], Row] = {}
    for p in paths:
        for row in read_metrics(p):
            merged.pop((row.run_id, row.epoch), None)
            merged[(row.run_id, row.epoch)] = row
    return sorted(merged.values(), key=lambda r: (r.variant, r.cr, r.cov_snr_db, r.run_id, r.epoch))


def write_rows(path, rows: Sequence[Row]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([_cell(getattr(r, c)) for c in METRICS_COLUMNS])
    return path


def _cell(x) -> str:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def final_rows(rows: Sequence[Row]) -> list[Row]:
    """Last-epoch row of each training run (evaluation-only rows, epoch -1, included)."""
    last: dict[str, Row] = {}
    for r in rows:
        if r.run_id not in last or r.epoch >= last[r.run_id].epoch:
            last[r.run_id] = r
    return list(last.values())


def cr_table(rows: Sequence[Row]) -> tuple[list[int], dict[str, dict[int, tuple[float, int]]]]:
    """Variant x CR grid of (final NMSE dB, FLOPs) over clean-covariance training runs."""
    table: dict[str, dict[int, tuple[float, int]]] = {}
    for r in final_rows(rows):
        if r.epoch < 0 or r.cov_snr_db != math.inf:
            continue
        table.setdefault(r.variant, {})[r.cr] = (r.eval_nmse_db, r.flops_total)
    crs = sorted({cr for cells in table.values() for cr in cells})
    return crs, table


def write_table(path, rows: Sequence[Row]) -> Path:
    crs, table = cr_table(rows)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant"] + [f"nmse_db_cr{cr}" for cr in crs] + [f"flops_cr{cr}" for cr in crs])
        for variant in sorted(table):
            cells = table[variant]
            nmse = [_cell(cells[cr][0]) if cr in cells else "" for cr in crs]
            flops = [str(cells[cr][1]) if cr in cells else "" for cr in crs]
            w.writerow([variant] + nmse + flops)
    return path


def snr_curves(rows: Sequence[Row]) -> dict[str, list[tuple[float, float]]]:
    """Evaluation-only rows (epoch -1) grouped into one NMSE-vs-SNR curve per (variant, CR)."""
    curves: dict[str, dict[float, float]] = {}
    for r in rows:
        if r.epoch != -1:
            continue
        curves.setdefault(f"{r.variant} CR={r.cr}", {})[r.cov_snr_db] = r.eval_nmse_db
    return {k: sorted(v.items()) for k, v in sorted(curves.items())}


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_W, _H = 480, 320
_LEFT, _RIGHT, _TOP, _BOTTOM = 64, 150, 24, 48
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _finite_range(values: Sequence[float]) -> tuple[float, float]:
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return -1.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def svg_plot(
    series: dict[str, list[tuple[float, float]]],
    x_ticks: Sequence[tuple[float, str]],
    x_label: str,
    y_label: str,
    title: str,
) -> str:
    """Line plot with markers. ``x`` values are plot coordinates already (e.g. log2 CR).

    Non-finite ``y`` values (the -inf NMSE sentinel) are drawn at the bottom edge.
    """
    xs = [x for x, _ in x_ticks] + [x for pts in series.values() for x, _ in pts] or [0.0]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi - x_lo < 1e-9:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    y_lo, y_hi = _finite_range([y for pts in series.values() for _, y in pts])
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(x):
        return _LEFT + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        if not math.isfinite(y):
            y = y_lo
        return _TOP + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" '
        'font-family="DejaVu Sans, sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_LEFT + pw / 2:.1f}" y="15" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for x, label in x_ticks:
        out.append(f'<line x1="{px(x):.1f}" y1="{_TOP + ph}" x2="{px(x):.1f}" y2="{_TOP + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(x):.1f}" y="{_TOP + ph + 16}" text-anchor="middle">{escape(label)}</text>')
    for i in range(5):
        y = y_lo + (y_hi - y_lo) * i / 4
        out.append(f'<line x1="{_LEFT - 4}" y1="{py(y):.1f}" x2="{_LEFT}" y2="{py(y):.1f}" stroke="black"/>')
        out.append(f'<text x="{_LEFT - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{_num(y)}</text>')
    out.append(f'<text x="{_LEFT + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="14" y="{_TOP + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_TOP + ph / 2:.1f})">{escape(y_label)}</text>'
    )
    for k, (name, pts) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        if len(pts) > 1:
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = _TOP + 12 + 16 * k
        lx = _LEFT + pw + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 16}" y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{lx + 20}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_cr(rows: Sequence[Row]) -> str:
    crs, table = cr_table(rows)
    series = {
        v: [(math.log2(cr), cells[cr][0]) for cr in crs if cr in cells] for v, cells in sorted(table.items())
    }
    ticks = [(math.log2(cr), str(cr)) for cr in crs]
    return svg_plot(series, ticks, "compression ratio", "NMSE (dB)", "NMSE vs compression ratio")


def plot_snr(rows: Sequence[Row]) -> str:
    """The clean point (SNR = inf) is placed one grid step right of the largest finite SNR."""
    curves = snr_curves(rows)
    finite = sorted({s for pts in curves.values() for s, _ in pts if math.isfinite(s)})
    step = finite[-1] - finite[-2] if len(finite) > 1 else 5.0
    inf_x = (finite[-1] + step) if finite else 0.0

    def x_of(s):
        return inf_x if math.isinf(s) else s

    series = {k: [(x_of(s), y) for s, y in pts] for k, pts in curves.items()}
    ticks = [(s, _num(s)) for s in finite]
    if any(math.isinf(s) for pts in curves.values() for s, _ in pts):
        ticks.append((inf_x, "inf"))
    return svg_plot(series, ticks, "covariance SNR (dB)", "NMSE (dB)", "NMSE vs covariance noise")


def build_report(metrics: Sequence, out_dir) -> dict[str, Path]:
    """Merge ``metrics`` files into ``out_dir``: merged CSV, result table, two SVG plots."""
    rows = merge(metrics)
    if not rows:
        raise FormatError("no rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "merged": write_rows(out_dir / "metrics_merged.csv", rows),
        "table": write_table(out_dir / "nmse_table.csv", rows),
        "nmse_vs_cr": out_dir / "nmse_vs_cr.svg",
        "nmse_vs_snr": out_dir / "nmse_vs_snr.svg",
    }
    paths["nmse_vs_cr"].write_text(plot_cr(rows))
    paths["nmse_vs_snr"].write_text(plot_snr(rows))
    return paths
