"""Deterministic JSON / CSV / SVG emission for sweep reports."""
from __future__ import annotations

import csv
import io
from pathlib import Path

from ..io import dumps
from .experiments import SweepReport

FORMATS = ("json", "csv", "svg")
METRIC_COLUMNS = ("mean_mAP", "std_mAP", "AP_div", "AP_ped", "AP_bnd")
SERIES = ("mean_mAP", "AP_div", "AP_ped", "AP_bnd")
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _PAD = 480, 320, 48


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def report_columns(report: SweepReport) -> list:
    extra = ["retention"] if report.kind == "noise_robustness" else []
    return list(report.key_columns) + list(METRIC_COLUMNS) + extra + ["n_scenes"]


def report_csv(report: SweepReport) -> str:
    cols = report_columns(report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in report.rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def report_json(report: SweepReport) -> str:
    return dumps(report.to_dict())


def _sx(x, lo, hi):
    return _PAD + (0.5 if hi == lo else (x - lo) / (hi - lo)) * (_W - 2 * _PAD)


def _sy(y):
    return _H - _PAD - min(max(y, 0.0), 1.0) * (_H - 2 * _PAD)


def _frame(title: str, body: list, xlabel: str) -> str:
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">',
            f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
            f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
            f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
            f'<text x="{_W / 2:.1f}" y="{_H - 10}" text-anchor="middle" font-size="12">'
            f'{xlabel}</text>']
    for t in (0.0, 0.5, 1.0):
        head.append(f'<text x="{_PAD - 6}" y="{_sy(t) + 4:.1f}" text-anchor="end" '
                    f'font-size="10">{t:.1f}</text>')
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _polyline(name, pts, color, legend_i) -> list:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    ly = _PAD + 14 * legend_i
    return [f'<polyline data-series="{name}" fill="none" stroke="{color}" stroke-width="2" '
            f'points="{coords}"/>',
            f'<text x="{_W - _PAD + 4}" y="{ly}" font-size="10" fill="{color}">{name}</text>']


def _line_chart(title, xlabel, series: dict) -> str:
    xs = [x for pts in series.values() for x, _ in pts]
    lo, hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    body = []
    for i, (name, pts) in enumerate(series.items()):
        body += _polyline(name, [(_sx(x, lo, hi), _sy(y)) for x, y in pts],
                          _COLORS[i % len(_COLORS)], i)
    for x in sorted(set(xs)):
        body.append(f'<text x="{_sx(x, lo, hi):.1f}" y="{_H - _PAD + 14}" text-anchor="middle" '
                    f'font-size="10">{x:g}</text>')
    return _frame(title, body, xlabel)


def _bar_chart(title, labels, values) -> str:
    n = max(len(labels), 1)
    slot = (_W - 2 * _PAD) / n
    body = []
    for i, (lab, v) in enumerate(zip(labels, values)):
        x = _PAD + i * slot + 0.15 * slot
        y = _sy(v)
        body.append(f'<rect data-bar="{lab}" x="{x:.2f}" y="{y:.2f}" width="{0.7 * slot:.2f}" '
                    f'height="{_H - _PAD - y:.2f}" fill="{_COLORS[0]}"/>')
        body.append(f'<text x="{x + 0.35 * slot:.2f}" y="{_H - _PAD + 14}" text-anchor="middle" '
                    f'font-size="10">{lab}</text>')
        body.append(f'<text x="{x + 0.35 * slot:.2f}" y="{y - 4:.2f}" text-anchor="middle" '
                    f'font-size="10">{v:.3f}</text>')
    return _frame(title, body, "policy")


def report_svg(report: SweepReport) -> str:
    """Bar chart for policy comparisons, line charts for K and noise sweeps."""
    if report.kind == "policy_comparison":
        return _bar_chart("mean mAP by selection policy", [r["policy"] for r in report.rows],
                          [r["mean_mAP"] for r in report.rows])
    if report.kind == "k_sweep":
        series = {s: [(float(r["K"]), r[s]) for r in report.rows] for s in SERIES}
        return _line_chart("mAP vs helper budget K", "K", series)
    if report.kind == "noise_robustness":
        series = {}
        for r in report.rows:
            series.setdefault(f'{r["axis"]}:{r["variant"]}', []).append(
                (float(r["level"]), r["mean_mAP"]))
        return _line_chart("mAP vs pose noise std", "noise std", series)
    series = {s: [(float(i), r[s]) for i, r in enumerate(report.rows)] for s in SERIES}
    return _line_chart(report.kind, "row", series)


_RENDER = {"json": (report_json, ".json"), "csv": (report_csv, ".csv"),
           "svg": (report_svg, ".svg")}


def emit_report(report: SweepReport, out_dir, formats=FORMATS, name: str | None = None) -> list:
    """Write the report in each format; returns the written paths.

    Wall times are left out of these files so reruns stay byte-identical;
    ``<name>_timing.json`` carries them separately.
    """
    out = Path(out_dir)
    name = name or report.kind
    paths = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            if fmt not in _RENDER:
                raise ValueError(f"unknown report format {fmt!r}")
            fn, ext = _RENDER[fmt]
            p = out / f"{name}{ext}"
            p.write_text(fn(report))
            paths.append(p)
    except OSError as e:
        raise OSError(f"cannot write report under {out}: {e}") from e
    return paths


def emit_timing(report: SweepReport, out_dir, name: str | None = None) -> Path:
    p = Path(out_dir) / f"{name or report.kind}_timing.json"
    try:
        p.write_text(dumps(report.wall_time))
    except OSError as e:
        raise OSError(f"cannot write {p}: {e}") from e
    return p


def report_from_dict(d: dict) -> SweepReport:
    return SweepReport(d["kind"], tuple(d["key_columns"]), list(d["rows"]),
                       dict(d.get("per_scene", {})), dict(d.get("wall_time", {})),
                       dict(d.get("config", {})))
