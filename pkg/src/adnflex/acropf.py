"""Rectangular-coordinate AC OPF subproblem construction.

For a fixed switch configuration the model is a smooth QCP: every constraint
is a polynomial of degree <= 2 in the variables, so constraint Hessians are
constant and all derivatives are analytic. Two objective families are
supported: a directional interface objective used to sweep the P-Q
flexibility boundary, and a regulation-cost objective with the interface
operating point pinned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import NetworkCase, line_admittance
from .topology import Configuration, effective_topology, is_connected

BOUNDARY = "boundary"
MIN_COST = "min_cost"


class BuildError(ValueError):
    """Problem construction rejected (bad objective spec or topology)."""


@dataclass(frozen=True)
class TargetPoint:
    """Pinned interface operating point, physical units (MW, MVAr)."""

    p_ref: float
    q_ref: float

    def __post_init__(self):
        if not (math.isfinite(self.p_ref) and math.isfinite(self.q_ref)):
            raise BuildError("target point must be finite")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective selector.

    kind == BOUNDARY: minimize w_p * P_ref + w_q * Q_ref, weights normalized
    to unit length; optionally pin P_ref (in MW) for envelope sweeps.
    kind == MIN_COST: minimize total regulation cost with the interface
    pinned at `target`.
    """

    kind: str
    w_p: float = 0.0
    w_q: float = 0.0
    target: TargetPoint | None = None
    pin_p: float | None = None

    @staticmethod
    def boundary(w_p: float, w_q: float, pin_p: float | None = None) -> "ObjectiveSpec":
        norm = math.hypot(w_p, w_q)
        if norm == 0.0:
            raise BuildError("boundary direction weights must not both be zero")
        return ObjectiveSpec(BOUNDARY, w_p=w_p / norm, w_q=w_q / norm, pin_p=pin_p)

    @staticmethod
    def min_cost(target: TargetPoint) -> "ObjectiveSpec":
        if target is None:
            raise BuildError("min-cost objective requires a target point")
        return ObjectiveSpec(MIN_COST, target=target)

    def describe(self) -> str:
        if self.kind == BOUNDARY:
            tag = f"boundary(w=({self.w_p:.6f},{self.w_q:.6f})"
            if self.pin_p is not None:
                tag += f", pin_p={self.pin_p:.6f}"
            return tag + ")"
        return f"min_cost(target=({self.target.p_ref:.6f},{self.target.q_ref:.6f}))"


@dataclass(frozen=True)
class VariableLayout:
    """Index ranges into the primal vector.

    Order: e (per bus), f (per bus), p-flow (per directed arc), q-flow
    (per directed arc), generator P, generator Q, then flex p_up, p_dn,
    q_up, q_dn (per unit). Arcs come in pairs: arc 2l is line l in its
    from->to direction, arc 2l+1 the reverse.
    """

    n_bus: int
    n_arc: int
    n_gen: int
    n_flex: int

    @property
    def e(self) -> slice:
        return slice(0, self.n_bus)

    @property
    def f(self) -> slice:
        return slice(self.n_bus, 2 * self.n_bus)

    @property
    def p_flow(self) -> slice:
        base = 2 * self.n_bus
        return slice(base, base + self.n_arc)

    @property
    def q_flow(self) -> slice:
        base = 2 * self.n_bus + self.n_arc
        return slice(base, base + self.n_arc)

    @property
    def p_gen(self) -> slice:
        base = 2 * self.n_bus + 2 * self.n_arc
        return slice(base, base + self.n_gen)

    @property
    def q_gen(self) -> slice:
        base = 2 * self.n_bus + 2 * self.n_arc + self.n_gen
        return slice(base, base + self.n_gen)

    def flex(self, block: int) -> slice:
        """block 0..3 -> p_up, p_dn, q_up, q_dn."""
        base = 2 * self.n_bus + 2 * self.n_arc + 2 * self.n_gen + block * self.n_flex
        return slice(base, base + self.n_flex)

    @property
    def n_vars(self) -> int:
        return 2 * self.n_bus + 2 * self.n_arc + 2 * self.n_gen + 4 * self.n_flex


def branch_flow(e_i, f_i, e_j, f_j, g, b):
    """Directed branch power flow (p, q) from the rectangular voltages.

    p = (e_i^2+f_i^2) g - (e_i e_j + f_i f_j) g - (f_i e_j - e_i f_j) b
    q = -(e_i^2+f_i^2) b + (e_i e_j + f_i f_j) b - (f_i e_j - e_i f_j) g
    Accepts scalars or aligned arrays.
    """
    vv = e_i * e_i + f_i * f_i
    dot = e_i * e_j + f_i * f_j
    cross = f_i * e_j - e_i * f_j
    p = vv * g - dot * g - cross * b
    q = -vv * b + dot * b - cross * g
    return p, q


class QcpProblem:
    """One configuration's continuous subproblem with analytic derivatives.

    Immutable after construction; evaluators are pure, so one problem can be
    shared across workers. Equality rows: p-flow definitions (per arc),
    q-flow definitions (per arc), P balances (per bus), Q balances (per bus),
    the angle pin f_ref = 0, then any interface pinning rows. Inequality rows
    (c(x) <= 0): thermal (per arc), voltage upper / lower (per bus), then
    generator and flex-unit box constraints.
    """

    def __init__(self, case: NetworkCase, config: Configuration, objective: ObjectiveSpec):
        if objective.kind not in (BOUNDARY, MIN_COST):
            raise BuildError(f"unknown objective kind {objective.kind!r}")
        if objective.kind == MIN_COST and objective.target is None:
            raise BuildError("min-cost objective requires a target point")
        if not is_connected(case, config):
            raise BuildError(f"configuration {config.label!r} leaves buses unsupplied")

        self.case = case
        self.config = config
        self.objective_spec = objective
        self.lines = effective_topology(case, config)

        nb = len(case.buses)
        nl = len(self.lines)
        ng = len(case.generators)
        nf = len(case.flex_units)
        self.layout = VariableLayout(n_bus=nb, n_arc=2 * nl, n_gen=ng, n_flex=nf)

        index = case.bus_index()
        self.ref_idx = index[case.ref_bus]
        self.ref_gen_idx = next(
            i for i, gen in enumerate(case.generators) if gen.is_reference
        )

        # Per-arc data; arc 2l runs from->to of line l, arc 2l+1 reversed.
        arc_i, arc_j, arc_g, arc_b, arc_smax2 = [], [], [], [], []
        self.arc_names: list[str] = []
        for ln in self.lines:
            g, b = line_admittance(ln)
            i, j = index[ln.from_bus], index[ln.to_bus]
            arc_i += [i, j]
            arc_j += [j, i]
            arc_g += [g, g]
            arc_b += [b, b]
            arc_smax2 += [ln.s_max**2, ln.s_max**2]
            self.arc_names += [f"{ln.from_bus}-{ln.to_bus}", f"{ln.to_bus}-{ln.from_bus}"]
        self.arc_i = np.array(arc_i, dtype=int)
        self.arc_j = np.array(arc_j, dtype=int)
        self.arc_g = np.array(arc_g)
        self.arc_b = np.array(arc_b)
        self.arc_smax2 = np.array(arc_smax2)

        self.p_d = np.array([bus.p_d for bus in case.buses])
        self.q_d = np.array([bus.q_d for bus in case.buses])
        self.v_min2 = np.array([bus.v_min**2 for bus in case.buses])
        self.v_max2 = np.array([bus.v_max**2 for bus in case.buses])
        self.gen_bus = np.array([index[g.bus] for g in case.generators], dtype=int)
        self.gen_pmin = np.array([g.p_min for g in case.generators])
        self.gen_pmax = np.array([g.p_max for g in case.generators])
        self.gen_qmin = np.array([g.q_min for g in case.generators])
        self.gen_qmax = np.array([g.q_max for g in case.generators])
        self.flex_bus = np.array([index[u.bus] for u in case.flex_units], dtype=int)
        self.flex_caps = np.array(
            [
                [u.p_up_max for u in case.flex_units],
                [u.p_dn_max for u in case.flex_units],
                [u.q_up_max for u in case.flex_units],
                [u.q_dn_max for u in case.flex_units],
            ]
        )
        # $/h per p.u. of regulation: prices are quoted per MW / MVAr.
        self.flex_price = np.array(
            [
                [u.cost_p * case.s_base for u in case.flex_units],
                [u.cost_p * case.s_base for u in case.flex_units],
                [u.cost_q * case.s_base for u in case.flex_units],
                [u.cost_q * case.s_base for u in case.flex_units],
            ]
        )

        self.n_pin = 0
        self._pin_values: list[float] = []
        if objective.kind == MIN_COST:
            self.n_pin = 2
            self._pin_values = [
                objective.target.p_ref / case.s_base,
                objective.target.q_ref / case.s_base,
            ]
        elif objective.pin_p is not None:
            self.n_pin = 1
            self._pin_values = [objective.pin_p / case.s_base]

        na = self.layout.n_arc
        self.n_eq = 2 * na + 2 * nb + 1 + self.n_pin
        self.n_ineq = na + 2 * nb + 4 * ng + 8 * nf
        self.eq_names = (
            [f"p_def@{name}" for name in self.arc_names]
            + [f"q_def@{name}" for name in self.arc_names]
            + [f"p_balance@{bus.id}" for bus in case.buses]
            + [f"q_balance@{bus.id}" for bus in case.buses]
            + [f"angle_ref@{case.ref_bus}"]
            + ["pin_p@interface", "pin_q@interface"][: self.n_pin]
        )
        self.ineq_names = (
            [f"thermal@{name}" for name in self.arc_names]
            + [f"v_upper@{bus.id}" for bus in case.buses]
            + [f"v_lower@{bus.id}" for bus in case.buses]
            + [f"gen_p_max@{g.bus}" for g in case.generators]
            + [f"gen_p_min@{g.bus}" for g in case.generators]
            + [f"gen_q_max@{g.bus}" for g in case.generators]
            + [f"gen_q_min@{g.bus}" for g in case.generators]
            + [
                f"flex_{blk}_{side}@{u.label}"
                for blk in ("p_up", "p_dn", "q_up", "q_dn")
                for side in ("max", "min")
                for u in case.flex_units
            ]
        )

        self._grad = np.zeros(self.layout.n_vars)
        if objective.kind == BOUNDARY:
            self._grad[self.layout.p_gen][self.ref_gen_idx] = objective.w_p
            self._grad[self.layout.q_gen][self.ref_gen_idx] = objective.w_q
        else:
            for blk in range(4):
                self._grad[self.layout.flex(blk)] = self.flex_price[blk]

    @property
    def n_vars(self) -> int:
        return self.layout.n_vars

    # -- evaluation ---------------------------------------------------------

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.layout.n_vars,):
            raise ValueError(
                f"variable vector has length {x.shape}, expected {self.layout.n_vars}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("variable vector contains non-finite entries")
        return x

    def objective(self, x: np.ndarray) -> float:
        x = self._check(x)
        return float(self._grad @ x)

    def objective_grad(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return self._grad.copy()

    def eq_residuals(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        lay = self.layout
        e, f = x[lay.e], x[lay.f]
        pf, qf = x[lay.p_flow], x[lay.q_flow]
        pg, qg = x[lay.p_gen], x[lay.q_gen]
        p_expr, q_expr = branch_flow(
            e[self.arc_i], f[self.arc_i], e[self.arc_j], f[self.arc_j],
            self.arc_g, self.arc_b,
        )
        res = np.empty(self.n_eq)
        na, nb = lay.n_arc, lay.n_bus
        res[0:na] = pf - p_expr
        res[na : 2 * na] = qf - q_expr

        p_bal = -self.p_d.copy()
        q_bal = -self.q_d.copy()
        np.add.at(p_bal, self.gen_bus, pg)
        np.add.at(q_bal, self.gen_bus, qg)
        np.add.at(p_bal, self.flex_bus, x[lay.flex(0)] - x[lay.flex(1)])
        np.add.at(q_bal, self.flex_bus, x[lay.flex(2)] - x[lay.flex(3)])
        np.subtract.at(p_bal, self.arc_i, pf)
        np.subtract.at(q_bal, self.arc_i, qf)
        res[2 * na : 2 * na + nb] = p_bal
        res[2 * na + nb : 2 * na + 2 * nb] = q_bal
        res[2 * na + 2 * nb] = f[self.ref_idx]
        if self.n_pin >= 1:
            res[2 * na + 2 * nb + 1] = pg[self.ref_gen_idx] - self._pin_values[0]
        if self.n_pin == 2:
            res[2 * na + 2 * nb + 2] = qg[self.ref_gen_idx] - self._pin_values[1]
        return res

    def ineq_values(self, x: np.ndarray) -> np.ndarray:
        """Inequality constraint values c(x); feasibility is c(x) <= 0."""
        x = self._check(x)
        lay = self.layout
        e, f = x[lay.e], x[lay.f]
        pf, qf = x[lay.p_flow], x[lay.q_flow]
        pg, qg = x[lay.p_gen], x[lay.q_gen]
        v2 = e * e + f * f
        parts = [
            pf * pf + qf * qf - self.arc_smax2,
            v2 - self.v_max2,
            self.v_min2 - v2,
            pg - self.gen_pmax,
            self.gen_pmin - pg,
            qg - self.gen_qmax,
            self.gen_qmin - qg,
        ]
        for blk in range(4):
            v = x[lay.flex(blk)]
            parts.append(v - self.flex_caps[blk])
            parts.append(-v)
        return np.concatenate(parts)

    def eq_jacobian(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        lay = self.layout
        na, nb = lay.n_arc, lay.n_bus
        e, f = x[lay.e], x[lay.f]
        J = np.zeros((self.n_eq, lay.n_vars))
        ei, fi = e[self.arc_i], f[self.arc_i]
        ej, fj = e[self.arc_j], f[self.arc_j]
        g, b = self.arc_g, self.arc_b
        arcs = np.arange(na)

        # p-definition rows: residual = p_var - expr.
        rows = arcs
        J[rows, lay.p_flow.start + arcs] = 1.0
        np.add.at(J, (rows, self.arc_i), -(2 * g * ei - g * ej + b * fj))
        np.add.at(J, (rows, nb + self.arc_i), -(2 * g * fi - g * fj - b * ej))
        np.add.at(J, (rows, self.arc_j), -(-g * ei - b * fi))
        np.add.at(J, (rows, nb + self.arc_j), -(-g * fi + b * ei))

        # q-definition rows.
        rows = na + arcs
        J[rows, lay.q_flow.start + arcs] = 1.0
        np.add.at(J, (rows, self.arc_i), -(-2 * b * ei + b * ej + g * fj))
        np.add.at(J, (rows, nb + self.arc_i), -(-2 * b * fi + b * fj - g * ej))
        np.add.at(J, (rows, self.arc_j), -(b * ei - g * fi))
        np.add.at(J, (rows, nb + self.arc_j), -(b * fi + g * ei))

        # Balances.
        p_rows = 2 * na + self.arc_i
        J[p_rows, lay.p_flow.start + arcs] -= 1.0
        q_rows = 2 * na + nb + self.arc_i
        J[q_rows, lay.q_flow.start + arcs] -= 1.0
        gens = np.arange(lay.n_gen)
        J[2 * na + self.gen_bus, lay.p_gen.start + gens] += 1.0
        J[2 * na + nb + self.gen_bus, lay.q_gen.start + gens] += 1.0
        units = np.arange(lay.n_flex)
        J[2 * na + self.flex_bus, lay.flex(0).start + units] += 1.0
        J[2 * na + self.flex_bus, lay.flex(1).start + units] -= 1.0
        J[2 * na + nb + self.flex_bus, lay.flex(2).start + units] += 1.0
        J[2 * na + nb + self.flex_bus, lay.flex(3).start + units] -= 1.0

        J[2 * na + 2 * nb, nb + self.ref_idx] = 1.0
        if self.n_pin >= 1:
            J[2 * na + 2 * nb + 1, lay.p_gen.start + self.ref_gen_idx] = 1.0
        if self.n_pin == 2:
            J[2 * na + 2 * nb + 2, lay.q_gen.start + self.ref_gen_idx] = 1.0
        return J

    def ineq_jacobian(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        lay = self.layout
        na, nb, ng, nf = lay.n_arc, lay.n_bus, lay.n_gen, lay.n_flex
        e, f = x[lay.e], x[lay.f]
        pf, qf = x[lay.p_flow], x[lay.q_flow]
        J = np.zeros((self.n_ineq, lay.n_vars))
        arcs = np.arange(na)
        J[arcs, lay.p_flow.start + arcs] = 2 * pf
        J[arcs, lay.q_flow.start + arcs] = 2 * qf
        buses = np.arange(nb)
        J[na + buses, buses] = 2 * e
        J[na + buses, nb + buses] = 2 * f
        J[na + nb + buses, buses] = -2 * e
        J[na + nb + buses, nb + buses] = -2 * f
        base = na + 2 * nb
        gens = np.arange(ng)
        J[base + gens, lay.p_gen.start + gens] = 1.0
        J[base + ng + gens, lay.p_gen.start + gens] = -1.0
        J[base + 2 * ng + gens, lay.q_gen.start + gens] = 1.0
        J[base + 3 * ng + gens, lay.q_gen.start + gens] = -1.0
        base += 4 * ng
        units = np.arange(nf)
        for blk in range(4):
            J[base + 2 * blk * nf + units, lay.flex(blk).start + units] = 1.0
            J[base + (2 * blk + 1) * nf + units, lay.flex(blk).start + units] = -1.0
        return J

    def lagrangian_hessian(
        self, x: np.ndarray, eq_mult: np.ndarray, ineq_mult: np.ndarray
    ) -> np.ndarray:
        """Hessian of L = f + eq_mult . c_E + ineq_mult . c_I.

        Constant in x (all constraints are quadratics, both objectives are
        linear); x is accepted for interface symmetry only.
        """
        lay = self.layout
        na, nb = lay.n_arc, lay.n_bus
        eq_mult = np.asarray(eq_mult, dtype=float)
        ineq_mult = np.asarray(ineq_mult, dtype=float)
        H = np.zeros((lay.n_vars, lay.n_vars))
        g, b = self.arc_g, self.arc_b
        lp = eq_mult[0:na]
        lq = eq_mult[na : 2 * na]

        def acc(ii, jj, val):
            np.add.at(H, (ii, jj), val)
            np.add.at(H, (jj, ii), val)

        i, j = self.arc_i, self.arc_j
        # residual_p = p_var - expr_p  ->  Hessian = -Hess(expr_p)
        np.add.at(H, (i, i), lp * (-2 * g))
        np.add.at(H, (nb + i, nb + i), lp * (-2 * g))
        acc(i, j, lp * g)
        acc(nb + i, nb + j, lp * g)
        acc(nb + i, j, lp * b)
        acc(i, nb + j, lp * (-b))
        # residual_q = q_var - expr_q
        np.add.at(H, (i, i), lq * (2 * b))
        np.add.at(H, (nb + i, nb + i), lq * (2 * b))
        acc(i, j, lq * (-b))
        acc(nb + i, nb + j, lq * (-b))
        acc(nb + i, j, lq * g)
        acc(i, nb + j, lq * (-g))

        arcs = np.arange(na)
        zt = ineq_mult[0:na]
        np.add.at(H, (lay.p_flow.start + arcs, lay.p_flow.start + arcs), 2 * zt)
        np.add.at(H, (lay.q_flow.start + arcs, lay.q_flow.start + arcs), 2 * zt)
        buses = np.arange(nb)
        zu = ineq_mult[na : na + nb]
        zl = ineq_mult[na + nb : na + 2 * nb]
        np.add.at(H, (buses, buses), 2 * (zu - zl))
        np.add.at(H, (nb + buses, nb + buses), 2 * (zu - zl))
        return H

    # -- convenience --------------------------------------------------------

    def flat_start(self) -> np.ndarray:
        """Nominal voltages, zero flows and regulation, reference generator
        carrying the total demand."""
        x = np.zeros(self.layout.n_vars)
        x[self.layout.e] = 1.0
        pg = np.zeros(self.layout.n_gen)
        qg = np.zeros(self.layout.n_gen)
        pg[self.ref_gen_idx] = float(np.sum(self.p_d))
        qg[self.ref_gen_idx] = float(np.sum(self.q_d))
        x[self.layout.p_gen] = np.clip(pg, self.gen_pmin, self.gen_pmax)
        x[self.layout.q_gen] = np.clip(qg, self.gen_qmin, self.gen_qmax)
        return x

    def interface_pq(self, x: np.ndarray) -> tuple[float, float]:
        """Interface (P, Q) in p.u.: the reference generator's injection,
        i.e. total network consumption seen from the grid (import positive)."""
        return (
            float(x[self.layout.p_gen][self.ref_gen_idx]),
            float(x[self.layout.q_gen][self.ref_gen_idx]),
        )

    def flex_regulations(self, x: np.ndarray) -> np.ndarray:
        """Per-unit regulation block matrix (4 x n_flex): p_up, p_dn, q_up, q_dn."""
        return np.stack([x[self.layout.flex(blk)] for blk in range(4)])

    def regulation_cost(self, x: np.ndarray) -> float:
        """Total activation cost in $/h (zero for p.u.-zero regulation)."""
        return float(np.sum(self.flex_price * self.flex_regulations(x)))


def build_problem(
    case: NetworkCase, config: Configuration, objective: ObjectiveSpec
) -> QcpProblem:
    """Assemble the continuous subproblem for one configuration."""
    return QcpProblem(case, config, objective)


def eval_residuals(problem: QcpProblem, x: np.ndarray):
    """(equality residuals, inequality slacks, objective value) at x.

    Slacks are -c(x): positive where an inequality is strictly satisfied.
    """
    return (
        problem.eq_residuals(x),
        -problem.ineq_values(x),
        problem.objective(x),
    )


def eval_derivatives(problem: QcpProblem, x: np.ndarray, eq_mult=None, ineq_mult=None):
    """(objective gradient, (equality, inequality) Jacobians, Lagrangian Hessian)."""
    if eq_mult is None:
        eq_mult = np.zeros(problem.n_eq)
    if ineq_mult is None:
        ineq_mult = np.zeros(problem.n_ineq)
    return (
        problem.objective_grad(x),
        (problem.eq_jacobian(x), problem.ineq_jacobian(x)),
        problem.lagrangian_hessian(x, eq_mult, ineq_mult),
    )
