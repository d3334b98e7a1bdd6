"""Flexibility-area tracing and polygon operations.

The P-Q area of one configuration is approximated by repeatedly solving the
directional interface objective: either sweeping the direction angle, or
stepping the P axis and solving the min-Q/max-Q envelopes at each pinned P
(the default, since it recovers nonconvex boundary segments an angular sweep
cannot). Areas from different configurations are intersected to obtain the
configuration-secure region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import MultiPolygon, Point, Polygon

from .acropf import ObjectiveSpec, build_problem
from .ipm import OPTIMAL, SolverSettings, solve
from .network import NetworkCase
from .oracle import ac_power_flow
from .topology import Configuration

ANGULAR = "angular"
PERIMETER = "perimeter"

#: Inequality slack below which a constraint is tagged as binding (p.u.).
BINDING_SLACK = 1e-6

#: Vertices closer than this (MVA) are merged.
DEDUPE_TOL = 1e-6


class BoundaryTraceError(RuntimeError):
    """Fewer than 3 usable vertices; carries per-point diagnostics."""

    def __init__(self, message: str, diagnostics: list[str]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class BoundaryVertex:
    """One extreme-point solve: interface coordinates plus solve metadata.

    w_p/w_q/pin_p reconstruct the objective that produced the vertex, and x
    is the primal vector, kept so stored runs can be re-verified offline.
    """

    p_mw: float
    q_mvar: float
    status: str
    sweep_key: float
    binding: tuple[str, ...] = ()
    iterations: int = 0
    w_p: float = 0.0
    w_q: float = 0.0
    pin_p: float | None = None
    x: np.ndarray | None = None


@dataclass
class FlexibilityBoundary:
    """Ordered simple polygon approximating one configuration's P-Q area."""

    config_label: str
    mode: str
    vertices: list[tuple[float, float]]
    base_point: tuple[float, float]
    points: list[BoundaryVertex] = field(default_factory=list)
    gap_count: int = 0
    degenerate: bool = False

    def polygon(self) -> Polygon:
        return Polygon(self.vertices)

    def area(self) -> float:
        return polygon_area(self.vertices)


@dataclass
class SecureArea:
    """Intersection of several configuration areas."""

    vertices: list[tuple[float, float]]
    config_labels: tuple[str, ...]

    def area(self) -> float:
        return polygon_area(self.vertices)


def polygon_area(vertices) -> float:
    """Shoelace area; 0 for degenerate inputs (< 3 vertices)."""
    if len(vertices) < 3:
        return 0.0
    arr = np.asarray(vertices, dtype=float)
    x, y = arr[:, 0], arr[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def point_in_polygon(point, vertices) -> bool:
    """Ray casting; points on the boundary count as inside."""
    if len(vertices) < 3:
        return False
    px, py = float(point[0]), float(point[1])
    inside = False
    n = len(vertices)
    for k in range(n):
        x1, y1 = vertices[k]
        x2, y2 = vertices[(k + 1) % n]
        # On-segment check keeps the test stable under vertex rotation.
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        if (
            abs(cross) <= 1e-12 * max(1.0, abs(x2 - x1) + abs(y2 - y1))
            and min(x1, x2) - 1e-12 <= px <= max(x1, x2) + 1e-12
            and min(y1, y2) - 1e-12 <= py <= max(y1, y2) + 1e-12
        ):
            return True
        if (y1 > py) != (y2 > py):
            x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < x_at:
                inside = not inside
    return inside


def base_point(case: NetworkCase, config: Configuration) -> tuple[float, float]:
    """Interface (P, Q) in MW/MVAr with every flexible unit switched off,
    at nominal interface voltage."""
    p_inj = np.array([-b.p_d for b in case.buses])
    q_inj = np.array([-b.q_d for b in case.buses])
    pf = ac_power_flow(case, config, p_inj, q_inj, v_ref=1.0)
    if not pf.converged:
        raise BoundaryTraceError(
            f"power flow for the base point of {config.label!r} did not converge",
            [f"mismatch {pf.mismatch:.3e}"],
        )
    ref = case.bus_index()[case.ref_bus]
    s = case.s_base
    p0 = -float(np.sum(np.delete(p_inj, ref))) * s + pf.losses_mw
    q_loss = float(np.sum(pf.q_from + pf.q_to))
    q0 = -float(np.sum(np.delete(q_inj, ref))) * s + q_loss
    return p0, q0


def _binding_tags(problem, x) -> tuple[str, ...]:
    c = problem.ineq_values(x)
    return tuple(
        name for name, val in zip(problem.ineq_names, c) if val > -BINDING_SLACK
    )


def _solve_direction(case, config, w_p, w_q, settings, warm, pin_p=None):
    problem = build_problem(
        case, config, ObjectiveSpec.boundary(w_p, w_q, pin_p=pin_p)
    )
    sol = solve(problem, settings, warm_start=warm)
    p, q = problem.interface_pq(sol.x)
    return problem, sol, p * case.s_base, q * case.s_base


def _vertex(problem, sol, p, q, key, w_p, w_q, pin_p=None) -> BoundaryVertex:
    if sol.is_optimal:
        return BoundaryVertex(
            p, q, sol.status, key, _binding_tags(problem, sol.x),
            sol.iterations, w_p, w_q, pin_p, sol.x.copy(),
        )
    return BoundaryVertex(
        np.nan, np.nan, sol.status, key, (), sol.iterations, w_p, w_q, pin_p, None
    )


def _dedupe(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for pt in points:
        if out and np.hypot(pt[0] - out[-1][0], pt[1] - out[-1][1]) <= DEDUPE_TOL:
            continue
        out.append(pt)
    while len(out) > 1 and np.hypot(
        out[0][0] - out[-1][0], out[0][1] - out[-1][1]
    ) <= DEDUPE_TOL:
        out.pop()
    return out


def trace_boundary(
    case: NetworkCase,
    config: Configuration,
    n_points: int = 200,
    mode: str = PERIMETER,
    step_mva: float = 0.08,
    settings: SolverSettings | None = None,
) -> FlexibilityBoundary:
    """Approximate one configuration's P-Q flexibility area.

    mode == ANGULAR: n_points directions uniformly spanning [0, 2pi).
    mode == PERIMETER (default): find [P_min, P_max] with two axis-aligned
    solves, then walk P in steps of step_mva solving the min-Q and max-Q
    envelopes at each pinned P. Failed solves leave gaps bridged by straight
    segments and flagged in the metadata.
    """
    if settings is None:
        settings = SolverSettings()
    if mode not in (ANGULAR, PERIMETER):
        raise ValueError(f"unknown sweep mode {mode!r}")
    if mode == ANGULAR and n_points < 8:
        raise ValueError("angular sweeps need at least 8 points")
    if mode == PERIMETER and step_mva <= 0.0:
        raise ValueError("perimeter sweeps need a positive step")

    base = base_point(case, config)
    caps = np.array(
        [
            [u.p_up_max, u.p_dn_max, u.q_up_max, u.q_dn_max]
            for u in case.flex_units
        ]
    )
    if caps.size == 0 or float(np.max(caps)) == 0.0:
        # No regulation capability: the area degenerates to the base point.
        return FlexibilityBoundary(
            config_label=config.label,
            mode=mode,
            vertices=[base],
            base_point=base,
            degenerate=True,
        )

    points: list[BoundaryVertex] = []
    diagnostics: list[str] = []

    if mode == ANGULAR:
        warm = None
        for k in range(n_points):
            theta = 2.0 * np.pi * k / n_points
            w_p, w_q = float(np.cos(theta)), float(np.sin(theta))
            problem, sol, p, q = _solve_direction(
                case, config, w_p, w_q, settings, warm
            )
            vert = _vertex(problem, sol, p, q, theta, w_p, w_q)
            points.append(vert)
            if sol.is_optimal:
                warm = sol.x
            else:
                diagnostics.append(
                    f"theta={theta:.4f}: {sol.status} ({sol.message})"
                )
        ordered = [pt for pt in points if np.isfinite(pt.p_mw)]
        vertices = _dedupe([(pt.p_mw, pt.q_mvar) for pt in ordered])
    else:
        problem_lo, sol_lo, p_lo, q_lo = _solve_direction(
            case, config, 1.0, 0.0, settings, None
        )
        problem_hi, sol_hi, p_hi, q_hi = _solve_direction(
            case, config, -1.0, 0.0, settings, None
        )
        if not (sol_lo.is_optimal and sol_hi.is_optimal):
            raise BoundaryTraceError(
                f"axis-aligned extreme solves failed for {config.label!r}",
                [f"min-P: {sol_lo.status}", f"max-P: {sol_hi.status}"],
            )
        points.append(_vertex(problem_lo, sol_lo, p_lo, q_lo, p_lo, 1.0, 0.0))
        points.append(_vertex(problem_hi, sol_hi, p_hi, q_hi, p_hi, -1.0, 0.0))
        p_values = np.arange(p_lo + step_mva, p_hi, step_mva)
        lower: list[BoundaryVertex] = []
        upper: list[BoundaryVertex] = []
        warm_lower = sol_lo.x
        warm_upper = sol_lo.x
        for p_pin in p_values:
            prob_dn, sol_dn, p_dn, q_dn = _solve_direction(
                case, config, 0.0, 1.0, settings, warm_lower, pin_p=float(p_pin)
            )
            lower.append(
                _vertex(prob_dn, sol_dn, p_dn, q_dn, float(p_pin), 0.0, 1.0, float(p_pin))
            )
            if sol_dn.is_optimal:
                warm_lower = sol_dn.x
            else:
                diagnostics.append(f"P={p_pin:.4f} min-Q: {sol_dn.status}")
            prob_up, sol_up, p_up, q_up = _solve_direction(
                case, config, 0.0, -1.0, settings, warm_upper, pin_p=float(p_pin)
            )
            upper.append(
                _vertex(prob_up, sol_up, p_up, q_up, float(p_pin), 0.0, -1.0, float(p_pin))
            )
            if sol_up.is_optimal:
                warm_upper = sol_up.x
            else:
                diagnostics.append(f"P={p_pin:.4f} max-Q: {sol_up.status}")
        points.extend(lower)
        points.extend(upper)
        ring = (
            [(p_lo, q_lo)]
            + [(pt.p_mw, pt.q_mvar) for pt in lower if np.isfinite(pt.p_mw)]
            + [(p_hi, q_hi)]
            + [(pt.p_mw, pt.q_mvar) for pt in reversed(upper) if np.isfinite(pt.p_mw)]
        )
        vertices = _dedupe(ring)

    gap_count = sum(1 for pt in points if not np.isfinite(pt.p_mw))
    if len(vertices) < 3:
        raise BoundaryTraceError(
            f"boundary trace for {config.label!r} produced {len(vertices)} usable "
            "vertices (need 3)",
            diagnostics,
        )
    return FlexibilityBoundary(
        config_label=config.label,
        mode=mode,
        vertices=vertices,
        base_point=base,
        points=points,
        gap_count=gap_count,
    )


def _check_simple(vertices) -> None:
    """Reject self-intersecting rings, naming the crossing segment pair."""
    n = len(vertices)
    segs = [(vertices[k], vertices[(k + 1) % n]) for k in range(n)]

    def crosses(a, b, c, d) -> bool:
        def orient(p, q, r):
            return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

        o1, o2 = orient(a, b, c), orient(a, b, d)
        o3, o4 = orient(c, d, a), orient(c, d, b)
        return (o1 * o2 < 0) and (o3 * o4 < 0)

    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent around the ring
            if crosses(*segs[i], *segs[j]):
                raise ValueError(
                    f"self-intersecting polygon: segment {i} "
                    f"({segs[i][0]}->{segs[i][1]}) crosses segment {j} "
                    f"({segs[j][0]}->{segs[j][1]})"
                )


def intersect_areas(boundaries: list[FlexibilityBoundary]) -> SecureArea:
    """Clip the configuration areas against each other.

    General (possibly nonconvex) polygon intersection; an empty result is
    allowed. Vertices are returned in counterclockwise order. When the
    intersection splits into several parts, the largest is kept.
    """
    if not boundaries:
        raise ValueError("need at least one boundary")
    polys = []
    for boundary in boundaries:
        if len(boundary.vertices) < 3:
            raise ValueError(
                f"boundary {boundary.config_label!r} is degenerate "
                f"({len(boundary.vertices)} vertices)"
            )
        _check_simple(boundary.vertices)
        poly = Polygon(boundary.vertices)
        if not poly.is_valid:
            poly = poly.buffer(0.0)
        polys.append(poly)
    clipped = polys[0]
    for poly in polys[1:]:
        clipped = clipped.intersection(poly)
    if clipped.is_empty:
        return SecureArea(
            vertices=[], config_labels=tuple(b.config_label for b in boundaries)
        )
    if isinstance(clipped, MultiPolygon):
        clipped = max(clipped.geoms, key=lambda geometry: geometry.area)
    if not isinstance(clipped, Polygon):
        return SecureArea(
            vertices=[], config_labels=tuple(b.config_label for b in boundaries)
        )
    ring = list(clipped.exterior.coords)[:-1]
    if polygon_signed_area(ring) < 0:
        ring = ring[::-1]
    return SecureArea(
        vertices=[(float(x), float(y)) for x, y in ring],
        config_labels=tuple(b.config_label for b in boundaries),
    )


def polygon_signed_area(vertices) -> float:
    if len(vertices) < 3:
        return 0.0
    arr = np.asarray(vertices, dtype=float)
    x, y = arr[:, 0], arr[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def contains_sampled(outer_vertices, inner_vertices, n_samples: int = 1000, seed: int = 0):
    """Sample points inside the inner polygon; count how many fall outside
    the outer one. Used for containment checks in reports and tests.

    Samples are drawn from a hair-inward-buffered copy of the inner polygon
    so that shared edges do not produce spurious float-noise violations.
    """
    if len(inner_vertices) < 3:
        return 0, 0
    poly = Polygon(inner_vertices)
    shrunk = poly.buffer(-1e-9)
    if not shrunk.is_empty:
        poly = shrunk
    minx, miny, maxx, maxy = poly.bounds
    rng = np.random.default_rng(seed)
    hits = violations = attempts = 0
    while hits < n_samples and attempts < 200:
        attempts += 1
        pts = rng.uniform((minx, miny), (maxx, maxy), size=(2 * n_samples, 2))
        for x, y in pts:
            if poly.covers(Point(x, y)):
                hits += 1
                if not point_in_polygon((x, y), outer_vertices):
                    violations += 1
                if hits >= n_samples:
                    break
    return violations, hits
