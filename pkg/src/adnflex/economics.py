"""Least-cost flexible dispatch for pinned interface targets, P-Q grid
sweeps, and configuration comparison.

Each grid node pins the interface at (P, Q) and minimizes the total
regulation cost; nodes outside the feasible area are classified infeasible
and carry zero regulations so downstream maps can render them blank.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .acropf import ObjectiveSpec, TargetPoint, build_problem
from .boundary import BINDING_SLACK, base_point
from .ipm import INFEASIBLE, OPTIMAL, SolverSettings, solve
from .network import NetworkCase
from .topology import Configuration

#: Regulations smaller than this (p.u.) are reported as exact zeros.
REGULATION_FLOOR = 1e-7


@dataclass
class DispatchPoint:
    """Optimal regulations for one pinned target. Regulation rows are
    p_up, p_dn, q_up, q_dn per flexible unit, physical units."""

    target: TargetPoint
    feasible: bool
    status: str
    total_cost: float
    regulations: np.ndarray
    binding: tuple[str, ...] = ()
    iterations: int = 0
    x: np.ndarray | None = None

    def unit_row(self, unit_index: int) -> tuple[float, float, float, float]:
        return tuple(float(v) for v in self.regulations[:, unit_index])


@dataclass(frozen=True)
class GridSpec:
    """Rectangular P-Q grid: inclusive ranges walked with a fixed step."""

    p_min: float
    p_max: float
    q_min: float
    q_max: float
    step: float

    def __post_init__(self):
        if self.step <= 0.0:
            raise ValueError("grid step must be positive")
        if self.p_max < self.p_min or self.q_max < self.q_min:
            raise ValueError("grid ranges are empty")

    @property
    def p_values(self) -> np.ndarray:
        n = int(np.floor((self.p_max - self.p_min) / self.step + 1e-9)) + 1
        return self.p_min + self.step * np.arange(n)

    @property
    def q_values(self) -> np.ndarray:
        n = int(np.floor((self.q_max - self.q_min) / self.step + 1e-9)) + 1
        return self.q_min + self.step * np.arange(n)


@dataclass
class CostSurface:
    """Grid of dispatch results for one configuration."""

    config_label: str
    grid: GridSpec
    points: dict[tuple[int, int], DispatchPoint]
    base: tuple[float, float]
    errors: list[str] = field(default_factory=list)

    def cost_matrix(self) -> np.ndarray:
        p, q = self.grid.p_values, self.grid.q_values
        out = np.full((p.size, q.size), np.nan)
        for (i, j), pt in self.points.items():
            if pt.feasible:
                out[i, j] = pt.total_cost
        return out

    def feasible_mask(self) -> np.ndarray:
        p, q = self.grid.p_values, self.grid.q_values
        out = np.zeros((p.size, q.size), dtype=bool)
        for (i, j), pt in self.points.items():
            out[i, j] = pt.feasible
        return out


def _clean_regulations(problem, x) -> np.ndarray:
    regs = problem.flex_regulations(x) * problem.case.s_base
    regs[np.abs(regs) < REGULATION_FLOOR * problem.case.s_base] = 0.0
    return np.maximum(regs, 0.0)


def _cost_of(case: NetworkCase, regulations: np.ndarray) -> float:
    prices = np.array(
        [
            [u.cost_p for u in case.flex_units],
            [u.cost_p for u in case.flex_units],
            [u.cost_q for u in case.flex_units],
            [u.cost_q for u in case.flex_units],
        ]
    )
    return float(np.sum(prices * regulations))


def min_cost_dispatch(
    case: NetworkCase,
    config: Configuration,
    target: TargetPoint,
    warm_start: np.ndarray | None = None,
    settings: SolverSettings | None = None,
    keep_x: bool = True,
) -> DispatchPoint:
    """Cheapest regulation mix delivering the pinned interface point."""
    if settings is None:
        settings = SolverSettings()
    problem = build_problem(case, config, ObjectiveSpec.min_cost(target))
    sol = solve(problem, settings, warm_start=warm_start)
    nf = len(case.flex_units)
    if sol.status == OPTIMAL:
        regs = _clean_regulations(problem, sol.x)
        c = problem.ineq_values(sol.x)
        binding = tuple(
            name for name, v in zip(problem.ineq_names, c) if v > -BINDING_SLACK
        )
        return DispatchPoint(
            target=target,
            feasible=True,
            status=sol.status,
            total_cost=_cost_of(case, regs),
            regulations=regs,
            binding=binding,
            iterations=sol.iterations,
            x=sol.x if keep_x else None,
        )
    return DispatchPoint(
        target=target,
        feasible=False,
        status=sol.status,
        total_cost=0.0,
        regulations=np.zeros((4, nf)),
        iterations=sol.iterations,
    )


def default_grid(boundary_vertices, step: float) -> GridSpec:
    """Bounding box of a traced boundary, expanded by one step."""
    arr = np.asarray(boundary_vertices, dtype=float)
    return GridSpec(
        p_min=float(arr[:, 0].min() - step),
        p_max=float(arr[:, 0].max() + step),
        q_min=float(arr[:, 1].min() - step),
        q_max=float(arr[:, 1].max() + step),
        step=step,
    )


def _row_order(values: np.ndarray, center: float) -> list[int]:
    """Indices ordered outward from the entry nearest the center."""
    start = int(np.argmin(np.abs(values - center)))
    order = [start]
    lo, hi = start - 1, start + 1
    while lo >= 0 or hi < values.size:
        if hi < values.size:
            order.append(hi)
            hi += 1
        if lo >= 0:
            order.append(lo)
            lo -= 1
    return order


def _sweep_row(args):
    case, config, grid, j, base, settings, keep_x = args
    p_values = grid.p_values
    q = float(grid.q_values[j])
    results: dict[tuple[int, int], DispatchPoint] = {}
    errors: list[str] = []
    # Walk outward from the base-point column, chaining warm starts within
    # the row; the chain is row-local so results do not depend on scheduling.
    warm_by_dir: dict[int, np.ndarray | None] = {-1: None, 1: None}
    order = _row_order(p_values, base[0])
    start_col = order[0]
    for i in order:
        direction = -1 if i < start_col else 1
        warm = warm_by_dir[direction] if i != start_col else None
        target = TargetPoint(float(p_values[i]), q)
        try:
            point = min_cost_dispatch(
                case, config, target, warm_start=warm, settings=settings,
                keep_x=True,
            )
        except Exception as exc:  # solver plumbing errors, not infeasibility
            errors.append(f"node ({target.p_ref:.4f}, {target.q_ref:.4f}): {exc}")
            point = DispatchPoint(
                target=target,
                feasible=False,
                status="error",
                total_cost=0.0,
                regulations=np.zeros((4, len(case.flex_units))),
            )
        if point.feasible and point.x is not None:
            if i == start_col:
                warm_by_dir[-1] = point.x
                warm_by_dir[1] = point.x
            else:
                warm_by_dir[direction] = point.x
        if not keep_x:
            point.x = None
        results[(i, j)] = point
    return j, results, errors


def cost_map(
    case: NetworkCase,
    config: Configuration,
    grid: GridSpec,
    settings: SolverSettings | None = None,
    jobs: int = 1,
    keep_x: bool = True,
) -> CostSurface:
    """Solve the pinned-dispatch problem at every grid node.

    Rows (fixed Q) are independent work units; within a row, nodes are walked
    outward from the base point with neighbor warm starts. Individual node
    failures are recorded and the sweep continues.
    """
    if settings is None:
        settings = SolverSettings()
    base = base_point(case, config)
    q_values = grid.q_values
    row_indices = _row_order(q_values, base[1])
    tasks = [
        (case, config, grid, j, base, settings, keep_x) for j in row_indices
    ]
    points: dict[tuple[int, int], DispatchPoint] = {}
    errors: list[str] = []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for _, row_points, row_errors in pool.map(_sweep_row, tasks):
                points.update(row_points)
                errors.extend(row_errors)
    else:
        for task in tasks:
            _, row_points, row_errors = _sweep_row(task)
            points.update(row_points)
            errors.extend(row_errors)
    return CostSurface(
        config_label=config.label,
        grid=grid,
        points=points,
        base=base,
        errors=errors,
    )


@dataclass
class SurfaceComparison:
    """Per-node difference between two surfaces on the same grid.

    cost_delta = cost_a - cost_b on nodes feasible under both, so positive
    values are savings achieved by b (e.g. by meshing when a is radial).
    """

    label_a: str
    label_b: str
    both_feasible: int
    cost_delta: dict[tuple[int, int], float]
    gained: list[tuple[int, int]]
    lost: list[tuple[int, int]]
    max_delta: float
    mean_delta: float
    area_gained: float

    def summary(self) -> dict:
        return {
            "a": self.label_a,
            "b": self.label_b,
            "both_feasible_nodes": self.both_feasible,
            "nodes_gained_by_b": len(self.gained),
            "nodes_lost_by_b": len(self.lost),
            "max_saving": self.max_delta,
            "mean_saving": self.mean_delta,
            "area_gained_mva2": self.area_gained,
        }


def compare_surfaces(a: CostSurface, b: CostSurface) -> SurfaceComparison:
    """Node-by-node comparison; grids must match exactly."""
    if a.grid != b.grid:
        raise ValueError("cost surfaces use different grids")
    delta: dict[tuple[int, int], float] = {}
    gained: list[tuple[int, int]] = []
    lost: list[tuple[int, int]] = []
    for key, pa in a.points.items():
        pb = b.points.get(key)
        if pb is None:
            continue
        if pa.feasible and pb.feasible:
            delta[key] = pa.total_cost - pb.total_cost
        elif pb.feasible and not pa.feasible:
            gained.append(key)
        elif pa.feasible and not pb.feasible:
            lost.append(key)
    values = np.array(list(delta.values())) if delta else np.zeros(1)
    return SurfaceComparison(
        label_a=a.config_label,
        label_b=b.config_label,
        both_feasible=len(delta),
        cost_delta=delta,
        gained=sorted(gained),
        lost=sorted(lost),
        max_delta=float(values.max()),
        mean_delta=float(values.mean()),
        area_gained=len(gained) * a.grid.step**2,
    )
