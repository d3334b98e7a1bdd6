"""CSV, JSON and SVG emitters for run artifacts.

All numeric CSV output uses 17 significant digits so re-parsing reproduces
the exact doubles; SVG is written directly (text-based and diffable), with
the optional timestamp comment suppressed for deterministic runs.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone

import numpy as np

from .boundary import FlexibilityBoundary, SecureArea
from .economics import CostSurface, SurfaceComparison
from .network import NetworkCase


def fmt(value: float) -> str:
    return "%.17g" % float(value)


# --- CSV -------------------------------------------------------------------


def boundary_csv(boundary: FlexibilityBoundary) -> str:
    rows = ["config_label,theta_or_step_index,P_MW,Q_MVAr,status,binding_tags"]
    for pt in boundary.points:
        rows.append(
            ",".join(
                [
                    boundary.config_label,
                    fmt(pt.sweep_key),
                    fmt(pt.p_mw) if np.isfinite(pt.p_mw) else "",
                    fmt(pt.q_mvar) if np.isfinite(pt.q_mvar) else "",
                    pt.status,
                    "|".join(pt.binding),
                ]
            )
        )
    return "\n".join(rows) + "\n"


def secure_csv(area: SecureArea) -> str:
    rows = ["P_MW,Q_MVAr"]
    for p, q in area.vertices:
        rows.append(f"{fmt(p)},{fmt(q)}")
    return "\n".join(rows) + "\n"


def surface_csv(surface: CostSurface, case: NetworkCase) -> str:
    header = ["P_MW", "Q_MVAr", "feasible", "total_cost"]
    for unit in case.flex_units:
        for quantity in ("p_up", "p_dn", "q_up", "q_dn"):
            header.append(f"{unit.label}_{quantity}")
    rows = [",".join(header)]
    p_values, q_values = surface.grid.p_values, surface.grid.q_values
    for i in range(p_values.size):
        for j in range(q_values.size):
            pt = surface.points.get((i, j))
            if pt is None:
                continue
            row = [
                fmt(p_values[i]),
                fmt(q_values[j]),
                "1" if pt.feasible else "0",
                fmt(pt.total_cost),
            ]
            for u in range(len(case.flex_units)):
                row.extend(fmt(v) for v in pt.unit_row(u))
            rows.append(",".join(row))
    return "\n".join(rows) + "\n"


def comparison_csv(cmp: SurfaceComparison, a: CostSurface, b: CostSurface) -> str:
    rows = [f"P_MW,Q_MVAr,cost_{cmp.label_a},cost_{cmp.label_b},saving,transition"]
    p_values, q_values = a.grid.p_values, a.grid.q_values
    for i in range(p_values.size):
        for j in range(q_values.size):
            pa = a.points.get((i, j))
            pb = b.points.get((i, j))
            if pa is None or pb is None:
                continue
            if pa.feasible and pb.feasible:
                transition = "both"
                saving = fmt(pa.total_cost - pb.total_cost)
            elif pb.feasible:
                transition = "gained"
                saving = ""
            elif pa.feasible:
                transition = "lost"
                saving = ""
            else:
                transition = "neither"
                saving = ""
            rows.append(
                ",".join(
                    [
                        fmt(p_values[i]),
                        fmt(q_values[j]),
                        fmt(pa.total_cost) if pa.feasible else "",
                        fmt(pb.total_cost) if pb.feasible else "",
                        saving,
                        transition,
                    ]
                )
            )
    return "\n".join(rows) + "\n"


# --- JSON ------------------------------------------------------------------


def boundary_json(boundary: FlexibilityBoundary) -> str:
    doc = {
        "config_label": boundary.config_label,
        "mode": boundary.mode,
        "degenerate": boundary.degenerate,
        "gap_count": boundary.gap_count,
        "base_point": list(boundary.base_point),
        "vertices": [list(v) for v in boundary.vertices],
        "points": [
            {
                "sweep_key": pt.sweep_key,
                "p_mw": pt.p_mw if np.isfinite(pt.p_mw) else None,
                "q_mvar": pt.q_mvar if np.isfinite(pt.q_mvar) else None,
                "status": pt.status,
                "binding": list(pt.binding),
                "iterations": pt.iterations,
                "w_p": pt.w_p,
                "w_q": pt.w_q,
                "pin_p": pt.pin_p,
                "x": None if pt.x is None else [float(v) for v in pt.x],
            }
            for pt in boundary.points
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def surface_json(surface: CostSurface, case: NetworkCase) -> str:
    doc = {
        "config_label": surface.config_label,
        "base_point": list(surface.base),
        "grid": {
            "p_min": surface.grid.p_min,
            "p_max": surface.grid.p_max,
            "q_min": surface.grid.q_min,
            "q_max": surface.grid.q_max,
            "step": surface.grid.step,
        },
        "unit_labels": [u.label for u in case.flex_units],
        "errors": list(surface.errors),
        "points": [
            {
                "i": i,
                "j": j,
                "p_mw": pt.target.p_ref,
                "q_mvar": pt.target.q_ref,
                "feasible": pt.feasible,
                "status": pt.status,
                "total_cost": pt.total_cost,
                "regulations": [[float(v) for v in row] for row in pt.regulations],
                "binding": list(pt.binding),
                "x": None if pt.x is None else [float(v) for v in pt.x],
            }
            for (i, j), pt in sorted(surface.points.items())
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


# --- SVG -------------------------------------------------------------------

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"]


class _Canvas:
    """Minimal data-space to pixel-space mapping for hand-written SVG."""

    def __init__(self, xlim, ylim, width=640, height=520, margin=60):
        self.xlim, self.ylim = xlim, ylim
        self.w, self.h, self.m = width, height, margin

    def x(self, v: float) -> float:
        x0, x1 = self.xlim
        return self.m + (v - x0) / (x1 - x0) * (self.w - 2 * self.m)

    def y(self, v: float) -> float:
        y0, y1 = self.ylim
        return self.h - self.m - (v - y0) / (y1 - y0) * (self.h - 2 * self.m)

    def axes(self, xlabel: str, ylabel: str, title: str) -> list[str]:
        parts = [
            f'<rect x="{self.m}" y="{self.m}" width="{self.w - 2 * self.m}" '
            f'height="{self.h - 2 * self.m}" fill="none" stroke="#333" stroke-width="1"/>',
            f'<text x="{self.w / 2:.1f}" y="{self.h - 14}" text-anchor="middle" '
            f'font-size="13">{xlabel}</text>',
            f'<text x="16" y="{self.h / 2:.1f}" text-anchor="middle" font-size="13" '
            f'transform="rotate(-90 16 {self.h / 2:.1f})">{ylabel}</text>',
            f'<text x="{self.w / 2:.1f}" y="24" text-anchor="middle" '
            f'font-size="14" font-weight="bold">{title}</text>',
        ]
        for k in range(5):
            xv = self.xlim[0] + k * (self.xlim[1] - self.xlim[0]) / 4
            yv = self.ylim[0] + k * (self.ylim[1] - self.ylim[0]) / 4
            parts.append(
                f'<text x="{self.x(xv):.1f}" y="{self.h - self.m + 18}" '
                f'text-anchor="middle" font-size="11">{xv:.2f}</text>'
            )
            parts.append(
                f'<text x="{self.m - 6}" y="{self.y(yv) + 4:.1f}" '
                f'text-anchor="end" font-size="11">{yv:.2f}</text>'
            )
        return parts


def _svg_doc(width, height, body: list[str], deterministic: bool) -> str:
    stamp = (
        ""
        if deterministic
        else f"<!-- generated {datetime.now(timezone.utc).isoformat()} -->\n"
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
        + stamp
        + "\n".join(body)
        + "\n</svg>\n"
    )


def boundaries_svg(
    boundaries: list[FlexibilityBoundary],
    secure: SecureArea | None = None,
    deterministic: bool = False,
) -> str:
    pts = [v for b in boundaries for v in b.vertices]
    if secure is not None:
        pts += list(secure.vertices)
    arr = np.asarray(pts)
    dx = max(float(np.ptp(arr[:, 0])), 1e-3) * 0.08
    dy = max(float(np.ptp(arr[:, 1])), 1e-3) * 0.08
    cv = _Canvas(
        (arr[:, 0].min() - dx, arr[:, 0].max() + dx),
        (arr[:, 1].min() - dy, arr[:, 1].max() + dy),
    )
    body = cv.axes("P, MW (network consumption)", "Q, MVAr", "Flexibility areas")
    for k, b in enumerate(boundaries):
        color = _COLORS[k % len(_COLORS)]
        path = " ".join(f"{cv.x(p):.2f},{cv.y(q):.2f}" for p, q in b.vertices)
        body.append(
            f'<polygon points="{path}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        body.append(
            f'<text x="{cv.w - cv.m - 4}" y="{cv.m + 16 + 16 * k}" text-anchor="end" '
            f'font-size="12" fill="{color}">{b.config_label} ({b.mode})</text>'
        )
    if secure is not None and secure.vertices:
        path = " ".join(f"{cv.x(p):.2f},{cv.y(q):.2f}" for p, q in secure.vertices)
        body.append(
            f'<polygon points="{path}" fill="#2ca02c" fill-opacity="0.25" '
            f'stroke="#2ca02c" stroke-width="1.2"/>'
        )
        body.append(
            f'<text x="{cv.w - cv.m - 4}" y="{cv.m + 16 + 16 * len(boundaries)}" '
            f'text-anchor="end" font-size="12" fill="#2ca02c">secure area</text>'
        )
    bp = boundaries[0].base_point
    bx, by = cv.x(bp[0]), cv.y(bp[1])
    body.append(
        f'<path d="M {bx - 6:.1f} {by:.1f} H {bx + 6:.1f} M {bx:.1f} {by - 6:.1f} '
        f'V {by + 6:.1f}" stroke="#000" stroke-width="2"/>'
    )
    body.append(
        f'<text x="{bx + 8:.1f}" y="{by - 8:.1f}" font-size="11">base point</text>'
    )
    return _svg_doc(cv.w, cv.h, body, deterministic)


def _diverging_color(value: float, cap: float) -> str:
    """White at 0, saturating red for +cap (consumption), blue for -cap."""
    if cap <= 0:
        return "#ffffff"
    t = max(-1.0, min(1.0, value / cap))
    if t >= 0:
        r, g, b = 255, int(round(255 * (1 - t))), int(round(255 * (1 - t)))
    else:
        r, g, b = int(round(255 * (1 + t))), int(round(255 * (1 + t))), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def unit_map_svg(
    surface: CostSurface,
    case: NetworkCase,
    unit_index: int,
    deterministic: bool = False,
) -> str:
    """Two P-Q panels for one unit: net active and net reactive regulation.

    Red marks net consumption, blue net production; infeasible nodes stay
    white. Color endpoints are +-(the unit's regulation capacity).
    """
    unit = case.flex_units[unit_index]
    grid = surface.grid
    p_values, q_values = grid.p_values, grid.q_values
    panel_w, panel_h, m, gap = 320, 330, 52, 30
    width = 2 * panel_w + 3 * gap
    height = panel_h + 2 * m
    body = [
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14" '
        f'font-weight="bold">Unit {unit.label} (bus {unit.bus}) optimal regulation</text>'
    ]
    caps = (
        (unit.p_up_max + unit.p_dn_max) / 2 * case.s_base,
        (unit.q_up_max + unit.q_dn_max) / 2 * case.s_base,
    )
    for panel, (title, cap) in enumerate(
        [("net P, MW (red = consume)", caps[0]), ("net Q, MVAr (red = consume)", caps[1])]
    ):
        x0 = gap + panel * (panel_w + gap)
        y0 = m
        cw = panel_w / p_values.size
        ch = panel_h / q_values.size
        body.append(
            f'<text x="{x0 + panel_w / 2:.0f}" y="{y0 - 8}" text-anchor="middle" '
            f'font-size="12">{title}</text>'
        )
        for (i, j), pt in sorted(surface.points.items()):
            if not pt.feasible:
                continue
            p_up, p_dn, q_up, q_dn = pt.unit_row(unit_index)
            value = (p_dn - p_up) if panel == 0 else (q_dn - q_up)
            color = _diverging_color(value, cap)
            x = x0 + i * cw
            y = y0 + (q_values.size - 1 - j) * ch
            body.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                f'fill="{color}"/>'
            )
        body.append(
            f'<rect x="{x0}" y="{y0}" width="{panel_w}" height="{panel_h}" '
            f'fill="none" stroke="#333"/>'
        )
        body.append(
            f'<text x="{x0:.0f}" y="{y0 + panel_h + 16}" font-size="10">'
            f"P {p_values[0]:.2f}..{p_values[-1]:.2f} MW, "
            f"Q {q_values[0]:.2f}..{q_values[-1]:.2f} MVAr</text>"
        )
    return _svg_doc(width, height, body, deterministic)


def cost_surface_svg(
    surfaces: list[CostSurface], deterministic: bool = False
) -> str:
    """Side-by-side total-cost heatmaps on a shared scale; white = infeasible."""
    costs = [
        pt.total_cost
        for s in surfaces
        for pt in s.points.values()
        if pt.feasible
    ]
    cmax = max(costs) if costs else 1.0
    panel_w, panel_h, m, gap = 320, 330, 52, 30
    width = len(surfaces) * (panel_w + gap) + gap
    height = panel_h + 2 * m
    body = [
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14" '
        f'font-weight="bold">Total flexibility cost, $/h (shared scale, max {cmax:.1f})</text>'
    ]
    for k, s in enumerate(surfaces):
        grid = s.grid
        p_values, q_values = grid.p_values, grid.q_values
        x0 = gap + k * (panel_w + gap)
        y0 = m
        cw = panel_w / p_values.size
        ch = panel_h / q_values.size
        body.append(
            f'<text x="{x0 + panel_w / 2:.0f}" y="{y0 - 8}" text-anchor="middle" '
            f'font-size="12">{s.config_label}</text>'
        )
        for (i, j), pt in sorted(s.points.items()):
            if not pt.feasible:
                continue
            t = pt.total_cost / cmax if cmax > 0 else 0.0
            level = int(round(255 * (1 - t)))
            color = f"#{255:02x}{level:02x}{max(0, level - 40):02x}"
            x = x0 + i * cw
            y = y0 + (q_values.size - 1 - j) * ch
            body.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                f'fill="{color}"/>'
            )
        body.append(
            f'<rect x="{x0}" y="{y0}" width="{panel_w}" height="{panel_h}" '
            f'fill="none" stroke="#333"/>'
        )
    return _svg_doc(width, height, body, deterministic)
