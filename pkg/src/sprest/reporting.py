"""CSV, JSON and SVG output."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def format_value(v) -> str:
    """Stable text for a CSV cell; floats round-trip exactly."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_csv(path, rows: list[dict], columns) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def format_table(rows: list[dict], columns, width: int = 12) -> str:
    """Fixed-width text table for terminal output."""
    def cell(v):
        if isinstance(v, float):
            return f"{v:.{width - 7}g}"
        return "" if v is None else str(v)

    head = " ".join(c[:width].rjust(width) for c in columns)
    body = [" ".join(cell(r.get(c)).rjust(width) for c in columns) for r in rows]
    return "\n".join([head] + body)


@dataclass
class Series:
    label: str
    x: list
    y: list
    dashed: bool = False
    markers: bool = True


def _nice_log_ticks(lo: float, hi: float):
    return [10.0 ** k for k in range(math.floor(lo), math.ceil(hi) + 1)]


def _nice_lin_ticks(lo: float, hi: float, n: int = 5):
    span = hi - lo if hi > lo else 1.0
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.floor(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def plot_svg(path, series: list[Series], title: str = "", xlabel: str = "", ylabel: str = "",
             logy: bool = True, hlines: tuple = (), width: int = 640, height: int = 440) -> Path:
    """Log-x plot (log or linear y) written as standalone SVG."""
    ml, mr, mt, mb = 70, 170, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def ok(x, y):
        return (x is not None and y is not None and x > 0 and math.isfinite(y)
                and (y > 0 or not logy))

    pts = [(x, y) for s in series for x, y in zip(s.x, s.y) if ok(x, y)]
    ys = [y for _, y in pts] + [y for _, y in hlines if (y > 0 or not logy)]
    if not pts:
        raise ValueError("nothing to plot")
    fx = [math.log10(x) for x, _ in pts]
    x0, x1 = min(fx), max(fx)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    fy = [ty(y) for y in ys]
    y0, y1 = min(fy), max(fy)
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (math.log10(x) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1 - (ty(y) - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{ml + pw / 2:.1f}" y="{mt - 14}" text-anchor="middle" '
           f'font-size="14">{escape(title)}</text>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
           f'{escape(xlabel)}</text>',
           f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>']
    for t in _nice_log_ticks(x0, x1):
        lt = math.log10(t)
        if x0 - 1e-9 <= lt <= x1 + 1e-9:
            X = px(t)
            out.append(f'<line x1="{X:.1f}" y1="{mt}" x2="{X:.1f}" y2="{mt + ph}" '
                       'stroke="#ddd"/>')
            out.append(f'<text x="{X:.1f}" y="{mt + ph + 16}" text-anchor="middle">'
                       f'{t:g}</text>')
    yt = _nice_log_ticks(y0, y1) if logy else _nice_lin_ticks(y0, y1)
    for t in yt:
        if y0 - 1e-9 <= ty(t) <= y1 + 1e-9:
            Y = py(t)
            out.append(f'<line x1="{ml}" y1="{Y:.1f}" x2="{ml + pw}" y2="{Y:.1f}" '
                       'stroke="#ddd"/>')
            out.append(f'<text x="{ml - 6}" y="{Y + 4:.1f}" text-anchor="end">{t:g}</text>')
    for label, y in hlines:
        if y > 0 or not logy:
            Y = py(y)
            out.append(f'<line x1="{ml}" y1="{Y:.1f}" x2="{ml + pw}" y2="{Y:.1f}" '
                       'stroke="black" stroke-width="1.5"/>')
            out.append(f'<text x="{ml + pw - 4}" y="{Y - 4:.1f}" text-anchor="end">'
                       f'{escape(label)}</text>')
    for i, s in enumerate(series):
        c = COLORS[i % len(COLORS)]
        p = [(px(x), py(y)) for x, y in zip(s.x, s.y) if ok(x, y)]
        if not p:
            continue
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        coords = " ".join(f"{a:.1f},{b:.1f}" for a, b in p)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{c}" '
                   f'stroke-width="1.5"{dash}/>')
        if s.markers:
            out += [f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{c}"/>' for a, b in p]
        ly = mt + 10 + 18 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 34}" y2="{ly}" '
                   f'stroke="{c}" stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{ml + pw + 40}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def effectivity_plot(path, rows: list[dict], title: str = "") -> Path:
    """Effectivities of E1, E2 and E3 against dofs."""
    x = [r["ndof"] for r in rows]
    series = [Series(lbl, x, [r.get(k) for r in rows])
              for lbl, k in (("theta E1", "theta_E1"), ("theta E2", "theta_E2"),
                             ("theta E3", "theta_E3"))]
    return plot_svg(path, series, title, "dof", "effectivity", logy=False,
                    hlines=(("1", 1.0),))


def adapt_plot(path, rows: list[dict], target: float, title: str = "") -> Path:
    """Exact and estimated relative errors of the FE and recovered solutions."""
    x = [r["ndof"] for r in rows]
    series = [
        Series("estimated FE", x, [r["rel_fe"] for r in rows]),
        Series("exact FE", x, [r["exact_rel_fe"] for r in rows], dashed=True),
        Series("estimated recovered", x, [r["rel_recovered"] for r in rows]),
        Series("exact recovered", x, [r["exact_rel_recovered"] for r in rows], dashed=True),
    ]
    return plot_svg(path, series, title, "dof", "relative error [%]",
                    hlines=((f"target {target:g}%", target),))
