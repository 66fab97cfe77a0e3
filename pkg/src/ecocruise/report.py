"""Deterministic result files: CSV/JSON tables and hand-rolled SVG plots.

The SVG writer emits fixed-precision coordinates and no timestamps, so a
given evaluation always produces byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .evaluation import interpolate_fuel_at
from .grid import GridConfig
from .simulator import SimTrace, read_trace_csv

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Svg:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" '
            'fill="white"/>',
        ]

    def line(self, x1, y1, x2, y2, color="#444444", width=1.0):
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
            f'y2="{_fmt(y2)}" stroke="{color}" stroke-width="{width}"/>')

    def polyline(self, pts, color, width=1.5, cls="curve"):
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline class="{cls}" points="{coords}" fill="none" '
            f'stroke="{color}" stroke-width="{width}"/>')

    def circle(self, x, y, r, color, cls="marker"):
        self.parts.append(
            f'<circle class="{cls}" cx="{_fmt(x)}" cy="{_fmt(y)}" '
            f'r="{_fmt(r)}" fill="{color}"/>')

    def text(self, x, y, s, size=11, color="#222222", anchor="start"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
            f'font-family="sans-serif" fill="{color}" '
            f'text-anchor="{anchor}">{s}</text>')

    def tostring(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Panel:
    """One axes rectangle with linear data-to-pixel mapping."""

    def __init__(self, svg: _Svg, x0, y0, w, h, xlim, ylim):
        self.svg, self.x0, self.y0, self.w, self.h = svg, x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim
        span_x = xlim[1] - xlim[0] or 1.0
        span_y = ylim[1] - ylim[0] or 1.0
        self._sx = w / span_x
        self._sy = h / span_y
        svg.parts.append(
            f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="none" stroke="#888888"/>')

    def px(self, x):
        return self.x0 + (x - self.xlim[0]) * self._sx

    def py(self, y):
        return self.y0 + self.h - (y - self.ylim[0]) * self._sy

    def plot(self, xs, ys, color, cls="curve", width=1.5):
        pts = [(self.px(x), self.py(y)) for x, y in zip(xs, ys)]
        self.svg.polyline(pts, color, width=width, cls=cls)

    def scatter(self, xs, ys, color, r=3.0, cls="marker"):
        for x, y in zip(xs, ys):
            self.svg.circle(self.px(x), self.py(y), r, color, cls=cls)

    def label(self, title, ylab):
        self.svg.text(self.x0, self.y0 - 6, title, size=12)
        self.svg.text(self.x0 - 44, self.y0 + self.h / 2, ylab, size=10)


def _limits(values, pad=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    return lo - pad * span, hi + pad * span


def fuel_fit_svg(scenario: str, method_points: dict[str, list]) -> str:
    """Fuel vs target speed: one marker set and one fitted curve per method."""
    svg = _Svg(640, 420)
    all_v = [v for pts in method_points.values() for v, _ in pts]
    all_f = [f for pts in method_points.values() for _, f in pts]
    if not all_v:
        raise DataError("no points to plot")
    panel = _Panel(svg, 70, 40, 520, 320, _limits(all_v), _limits(all_f))
    panel.label(f"fuel vs target speed: {scenario}", "L/100km")
    svg.text(330, 400, "target speed [m/s]", anchor="middle")
    for k, (method, pts) in enumerate(sorted(method_points.items())):
        color = _COLORS[k % len(_COLORS)]
        vs = [p[0] for p in pts]
        fs = [p[1] for p in pts]
        panel.scatter(vs, fs, color)
        if len(pts) >= 3:
            grid = np.linspace(min(vs), max(vs), 60)
            fit = [interpolate_fuel_at(pts, v) for v in grid]
            panel.plot(grid, fit, color, cls="fit")
        svg.text(80, 58 + 14 * k, method, color=color)
    return svg.tostring()


def trace_svg(traces: dict[str, SimTrace], title: str) -> str:
    """Stacked altitude / speed / torque panels against distance."""
    svg = _Svg(720, 640)
    if not traces:
        raise DataError("no traces to plot")
    any_trace = next(iter(traces.values()))
    ds = any_trace.delta_s
    alts = {m: np.cumsum(np.tan(t.theta)) * ds for m, t in traces.items()}
    panels = [
        ("altitude [m]", alts, 40),
        ("speed [m/s]", {m: t.v for m, t in traces.items()}, 240),
        ("torque [N*m]", {m: t.torque for m, t in traces.items()}, 440),
    ]
    xlim = _limits(any_trace.s, pad=0.0)
    for ylab, series, y0 in panels:
        ylim = _limits(np.concatenate(list(series.values())))
        panel = _Panel(svg, 70, y0, 600, 160, xlim, ylim)
        panel.label(title if y0 == 40 else "", ylab)
        for k, (method, ys) in enumerate(sorted(series.items())):
            panel.plot(traces[method].s, ys, _COLORS[k % len(_COLORS)])
    for k, method in enumerate(sorted(traces)):
        svg.text(80 + 140 * k, 625, method, color=_COLORS[k % len(_COLORS)])
    svg.text(370, 638, "distance [m]", anchor="middle")
    return svg.tostring()


def write_results_csv(results: dict, path) -> None:
    cols = ["method", "scenario", "fuel_per_100km", "speed_diff", "cost",
            "n_targets"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in results.get("per_scenario", []):
            w.writerow([row["method"], row["scenario"],
                        repr(float(row["fuel_per_100km"])),
                        repr(float(row["speed_diff"])),
                        repr(float(row["cost"])), row["n_targets"]])


def write_summary_csv(results: dict, path) -> None:
    cols = ["method", "fuel_per_100km", "speed_diff", "cost",
            "fuel_saving_pct", "n_scenarios"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in results.get("per_method", []):
            saving = row.get("fuel_saving_pct")
            w.writerow([row["method"], repr(float(row["fuel_per_100km"])),
                        repr(float(row["speed_diff"])),
                        repr(float(row["cost"])),
                        "" if saving is None else repr(float(saving)),
                        row["n_scenarios"]])


def write_results_json(results: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(results, fh, sort_keys=True, indent=2)
        fh.write("\n")


def report(results: dict, out_dir, traces_root=None,
           grid: GridConfig | None = None) -> list[Path]:
    """Emit CSV/JSON tables and the SVG plot set for an evaluation result."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if grid is None:
        grid = GridConfig()
    written = []

    p = out / "results.csv"
    write_results_csv(results, p)
    written.append(p)
    p = out / "summary.csv"
    write_summary_csv(results, p)
    written.append(p)
    p = out / "results.json"
    write_results_json(results, p)
    written.append(p)

    runs = results.get("runs", [])
    by_scenario: dict[str, dict[str, list]] = {}
    for run in runs:
        by_scenario.setdefault(run["scenario"], {}).setdefault(
            run["method"], []).append((run["v_target"],
                                       run["fuel_per_100km"]))
    for scenario, method_points in sorted(by_scenario.items()):
        if max(len(v) for v in method_points.values()) < 3:
            continue
        p = out / f"fuel_fit_{scenario}.svg"
        p.write_text(fuel_fit_svg(scenario, method_points))
        written.append(p)

    if traces_root is not None:
        traces_root = Path(traces_root)
        groups: dict[tuple[str, float], dict[str, SimTrace]] = {}
        for run in runs:
            rel = run.get("trace_path", "")
            if not rel:
                continue
            path = traces_root / rel
            if not path.exists():
                continue
            key = (run["scenario"], run["v_target"])
            groups.setdefault(key, {})[run["method"]] = read_trace_csv(path,
                                                                       grid)
        for (scenario, target), traces in sorted(groups.items()):
            p = out / f"trace_{scenario}_{target:g}.svg"
            p.write_text(trace_svg(traces, f"{scenario} @ {target:g} m/s"))
            written.append(p)
    return written
