"""Report writers: per-position CSV, full JSON, SVG polar plot."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from importlib import resources
from pathlib import Path

from .stats import MetricsReport

FORMATS = ("csv", "json", "svg-polar")
CSV_COLUMNS = ("theta", "phi", "n", "mean_m", "sd_m", "failed")

_SVG_SIZE = 400
_SVG_MARGIN = 20


def report_schema() -> dict:
    return json.loads((resources.files("uwb_rangekit") / "schemas" / "report.schema.json").read_text())


def _num(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for pos, s in report.per_position.items():
        w.writerow([repr(pos.theta_deg), repr(pos.phi_deg), s.n, _num(s.mean), _num(s.sd), int(s.failed)])
    return buf.getvalue()


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n"


def report_svg(report: MetricsReport, phis: list[float] | None = None) -> str:
    """Polar plot of mean distance over theta, one path per arm angle.

    Radius is linear in distance from 0 to the largest mean shown (or twice
    the true distance when nothing was measured).
    """
    chosen = sorted(report.polar_slices) if phis is None else sorted(phis)
    missing = [p for p in chosen if p not in report.polar_slices]
    if missing:
        raise ValueError(f"no slice for phi {missing}")
    means = [m for phi in chosen for _, m in report.polar_slices[phi]]
    r_max = max(means + [report.true_distance_m]) if means else 2 * report.true_distance_m
    r_max = r_max if r_max > 0 else 1.0
    c = _SVG_SIZE / 2
    scale = (c - _SVG_MARGIN) / r_max

    def xy(theta: float, r: float) -> str:
        # theta = 0 points up, angles run clockwise
        a = math.radians(theta)
        return f"{c + r * scale * math.sin(a):.3f},{c - r * scale * math.cos(a):.3f}"

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE}" height="{_SVG_SIZE}" '
        f'viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
        f'<circle cx="{c}" cy="{c}" r="{report.true_distance_m * scale:.3f}" fill="none" stroke="#999" '
        f'stroke-dasharray="4 3"/>',
    ]
    for i, phi in enumerate(chosen):
        pts = report.polar_slices[phi]
        d = " ".join(("M" if k == 0 else "L") + xy(t, m) for k, (t, m) in enumerate(pts))
        if len(pts) > 2:
            d += " Z"
        hue = (i * 47) % 360
        lines.append(f'<path data-phi="{phi:g}" d="{d}" fill="none" stroke="hsl({hue},70%,40%)"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def export_report(
    report: MetricsReport, fmt: str, path: str | os.PathLike, phis: list[float] | None = None
) -> None:
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = report_json(report)
    elif fmt == "svg-polar":
        text = report_svg(report, phis)
    else:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    Path(path).write_text(text)
