"""Independent verification path for optimizer outputs.

A Newton-Raphson power flow in polar coordinates (plus a backward-forward
sweep for radial topologies) recomputes the network state from a solution's
injections and re-checks every operating limit. The power-flow equations
here are built from the bus admittance matrix and polar voltages, a
deliberately different formulation from the rectangular arc equations of the
optimizer; only the variable-layout bookkeeping is shared, never evaluation
code, so agreement between the two paths is evidence rather than tautology.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acropf import MIN_COST, ObjectiveSpec, VariableLayout
from .network import NetworkCase, line_admittance
from .topology import Configuration, effective_topology


@dataclass
class PowerFlowResult:
    """Converged network state for fixed injections; physical units."""

    converged: bool
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    losses_mw: float
    mismatch: float
    iterations: int


def _ybus(case: NetworkCase, lines) -> np.ndarray:
    n = len(case.buses)
    index = case.bus_index()
    Y = np.zeros((n, n), dtype=complex)
    for ln in lines:
        g, b = line_admittance(ln)
        y = g + 1j * b
        i, j = index[ln.from_bus], index[ln.to_bus]
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


def _line_flows(case: NetworkCase, lines, V: np.ndarray):
    """Series power entering each line at both ends, p.u. complex."""
    index = case.bus_index()
    i = np.array([index[ln.from_bus] for ln in lines], dtype=int)
    j = np.array([index[ln.to_bus] for ln in lines], dtype=int)
    y = np.array([complex(*line_admittance(ln)) for ln in lines])
    s_from = V[i] * np.conj(y * (V[i] - V[j]))
    s_to = V[j] * np.conj(y * (V[j] - V[i]))
    return s_from, s_to


def ac_power_flow(
    case: NetworkCase,
    config: Configuration,
    p_inj: np.ndarray,
    q_inj: np.ndarray,
    v_ref: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> PowerFlowResult:
    """Solve the network state for fixed net injections (p.u., bus order).

    The interface bus is the slack: its injection entries are ignored and its
    voltage held at v_ref /_ 0. Flat start; convergence is max mismatch <= tol.
    """
    lines = effective_topology(case, config)
    Y = _ybus(case, lines)
    n = len(case.buses)
    ref = case.bus_index()[case.ref_bus]
    pq = np.array([k for k in range(n) if k != ref], dtype=int)

    V = np.full(n, 1.0 + 0.0j)
    V[ref] = v_ref
    s_spec = np.asarray(p_inj, dtype=float) + 1j * np.asarray(q_inj, dtype=float)

    mismatch = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        Ibus = Y @ V
        s_calc = V * np.conj(Ibus)
        ds = s_spec[pq] - s_calc[pq]
        mis = np.concatenate([ds.real, ds.imag])
        mismatch = float(np.max(np.abs(mis))) if mis.size else 0.0
        if mismatch <= tol:
            break

        diagV = np.diag(V)
        diagI = np.diag(Ibus)
        diagVn = np.diag(V / np.abs(V))
        dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
        dS_dVm = diagV @ np.conj(Y @ diagVn) + np.conj(diagI) @ diagVn
        J = np.block(
            [
                [dS_dVa[np.ix_(pq, pq)].real, dS_dVm[np.ix_(pq, pq)].real],
                [dS_dVa[np.ix_(pq, pq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
            ]
        )
        try:
            step = np.linalg.solve(J, mis)
        except np.linalg.LinAlgError:
            break
        ang = np.angle(V[pq]) + step[: pq.size]
        mag = np.abs(V[pq]) + step[pq.size :]
        V[pq] = mag * np.exp(1j * ang)
        if not np.all(np.isfinite(V)):
            break
    else:
        iterations = max_iter

    Ibus = Y @ V
    s_calc = V * np.conj(Ibus)
    ds = s_spec[pq] - s_calc[pq]
    mis = np.concatenate([ds.real, ds.imag])
    mismatch = float(np.max(np.abs(mis))) if mis.size else 0.0
    converged = bool(mismatch <= tol and np.all(np.isfinite(V)))

    s_from, s_to = _line_flows(case, lines, V)
    s = case.s_base
    return PowerFlowResult(
        converged=converged,
        v_mag=np.abs(V),
        v_ang=np.angle(V),
        p_from=s_from.real * s,
        q_from=s_from.imag * s,
        p_to=s_to.real * s,
        q_to=s_to.imag * s,
        losses_mw=float(np.sum(s_from.real + s_to.real)) * s,
        mismatch=mismatch,
        iterations=iterations,
    )


def batch_power_flow(
    case: NetworkCase,
    config: Configuration,
    p_inj: np.ndarray,
    q_inj: np.ndarray,
    v_ref: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 50,
):
    """Vectorized Newton power flow over many injection scenarios at once.

    p_inj, q_inj have shape (m, n_bus). Returns (converged mask (m,),
    V complex (m, n_bus), slack injection p.u. complex (m,)). Used by the
    brute-force test oracles, where hundreds of thousands of small power
    flows are needed.
    """
    lines = effective_topology(case, config)
    Y = _ybus(case, lines)
    n = len(case.buses)
    ref = case.bus_index()[case.ref_bus]
    pq = np.array([k for k in range(n) if k != ref], dtype=int)
    m = p_inj.shape[0]

    V = np.full((m, n), 1.0 + 0.0j)
    V[:, ref] = v_ref
    s_spec = np.asarray(p_inj, dtype=float) + 1j * np.asarray(q_inj, dtype=float)

    for _ in range(max_iter):
        Ibus = V @ Y.T
        s_calc = V * np.conj(Ibus)
        ds = s_spec[:, pq] - s_calc[:, pq]
        mis = np.concatenate([ds.real, ds.imag], axis=1)
        worst = np.max(np.abs(mis), axis=1)
        if np.all(worst <= tol):
            break

        npq = pq.size
        Vn = V / np.abs(V)
        # Batched Jacobian blocks:
        #   dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        #   dS/dVm = diag(V) conj(Y diag(Vnorm)) + conj(diag(I)) diag(Vnorm)
        YV = Y[None, :, :] * V[:, None, :]
        dS_dVa = 1j * V[:, :, None] * np.conj(np.diag_embed(Ibus) - YV)
        YVn = Y[None, :, :] * Vn[:, None, :]
        dS_dVm = V[:, :, None] * np.conj(YVn) + np.conj(np.diag_embed(Ibus)) * Vn[:, None, :]

        J = np.empty((m, 2 * npq, 2 * npq))
        J[:, :npq, :npq] = dS_dVa[np.ix_(np.arange(m), pq, pq)].real
        J[:, :npq, npq:] = dS_dVm[np.ix_(np.arange(m), pq, pq)].real
        J[:, npq:, :npq] = dS_dVa[np.ix_(np.arange(m), pq, pq)].imag
        J[:, npq:, npq:] = dS_dVm[np.ix_(np.arange(m), pq, pq)].imag
        try:
            step = np.linalg.solve(J, mis)
        except np.linalg.LinAlgError:
            break
        ang = np.angle(V[:, pq]) + step[:, :npq]
        mag = np.abs(V[:, pq]) + step[:, npq:]
        V[:, pq] = mag * np.exp(1j * ang)

    Ibus = V @ Y.T
    s_calc = V * np.conj(Ibus)
    ds = s_spec[:, pq] - s_calc[:, pq]
    worst = np.max(np.abs(np.concatenate([ds.real, ds.imag], axis=1)), axis=1)
    converged = (worst <= tol) & np.all(np.isfinite(V), axis=1)
    slack_inj = s_calc[:, ref]
    return converged, V, slack_inj


def backward_forward_sweep(
    case: NetworkCase,
    config: Configuration,
    p_inj: np.ndarray,
    q_inj: np.ndarray,
    v_ref: float = 1.0,
    tol: float = 1e-12,
    max_iter: int = 200,
):
    """Power flow by ladder iteration; radial topologies only.

    Returns (converged, V complex array). A third, structurally different
    method used to cross-check the Newton oracle on small radial cases.
    """
    lines = effective_topology(case, config)
    n = len(case.buses)
    index = case.bus_index()
    if len(lines) != n - 1:
        raise ValueError("backward-forward sweep requires a radial topology")
    ref = index[case.ref_bus]

    adj: dict[int, list[tuple[int, complex]]] = {k: [] for k in range(n)}
    for ln in lines:
        i, j = index[ln.from_bus], index[ln.to_bus]
        z = complex(ln.r, ln.x)
        adj[i].append((j, z))
        adj[j].append((i, z))
    parent = {ref: (-1, 0j)}
    order = [ref]
    stack = [ref]
    while stack:
        node = stack.pop()
        for child, z in adj[node]:
            if child not in parent:
                parent[child] = (node, z)
                order.append(child)
                stack.append(child)

    s_load = -(np.asarray(p_inj, dtype=float) + 1j * np.asarray(q_inj, dtype=float))
    V = np.full(n, complex(v_ref), dtype=complex)
    for _ in range(max_iter):
        # Backward: accumulate downstream power, including branch losses.
        s_down = s_load.astype(complex).copy()
        for node in reversed(order[1:]):
            par, z = parent[node]
            flow = s_down[node]
            loss = z * (abs(flow) / abs(V[node])) ** 2
            s_down[par] += flow + loss
        # Forward: voltage drops from the root.
        V_new = V.copy()
        V_new[ref] = v_ref
        for node in order[1:]:
            par, z = parent[node]
            current = np.conj(s_down[node] / V[node])
            V_new[node] = V_new[par] - z * current
        shift = float(np.max(np.abs(V_new - V)))
        V = V_new
        if shift <= tol:
            return True, V
    return False, V


@dataclass
class VerificationReport:
    """Per-constraint-family re-check of an optimizer solution."""

    passed: bool
    checks: dict[str, bool] = field(default_factory=dict)
    worst: dict[str, float] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": dict(self.checks),
            "worst": dict(self.worst),
            "messages": list(self.messages),
        }


def solution_injections(case: NetworkCase, config: Configuration, x: np.ndarray):
    """Net (P, Q) injections per bus implied by a solution's dispatch, p.u.

    Uses only the variable layout (index bookkeeping); the slack bus entry
    carries the non-flex, non-demand remainder and is ignored by the oracle.
    """
    lines = effective_topology(case, config)
    lay = VariableLayout(
        n_bus=len(case.buses),
        n_arc=2 * len(lines),
        n_gen=len(case.generators),
        n_flex=len(case.flex_units),
    )
    index = case.bus_index()
    p = np.array([-b.p_d for b in case.buses])
    q = np.array([-b.q_d for b in case.buses])
    for gi, gen in enumerate(case.generators):
        p[index[gen.bus]] += x[lay.p_gen][gi]
        q[index[gen.bus]] += x[lay.q_gen][gi]
    for ui, unit in enumerate(case.flex_units):
        p[index[unit.bus]] += x[lay.flex(0)][ui] - x[lay.flex(1)][ui]
        q[index[unit.bus]] += x[lay.flex(2)][ui] - x[lay.flex(3)][ui]
    return p, q, lay


def verify_point(
    case: NetworkCase,
    config: Configuration,
    solution,
    objective: ObjectiveSpec | None = None,
    tol: float = 1e-5,
) -> VerificationReport:
    """Re-derive the network state from a solution's injections and re-check
    voltage band, thermal limits, flex bounds, cross-formulation voltage
    agreement and (for pinned objectives) the interface target."""
    x = np.asarray(solution.x, dtype=float)
    p_inj, q_inj, lay = solution_injections(case, config, x)
    e = x[lay.e]
    f = x[lay.f]
    ref_idx = case.bus_index()[case.ref_bus]
    v_ref = float(np.hypot(e[ref_idx], f[ref_idx]))

    report = VerificationReport(passed=True)

    def record(name: str, ok: bool, worst: float, msg: str | None = None):
        report.checks[name] = bool(ok)
        report.worst[name] = float(worst)
        if not ok:
            report.passed = False
            if msg:
                report.messages.append(msg)

    pf = ac_power_flow(case, config, p_inj, q_inj, v_ref=v_ref)
    record(
        "power_flow_converged",
        pf.converged,
        pf.mismatch,
        f"oracle power flow did not converge (mismatch {pf.mismatch:.3e})",
    )
    if not pf.converged:
        return report

    v_min = np.array([b.v_min for b in case.buses])
    v_max = np.array([b.v_max for b in case.buses])
    v_violation = np.maximum(v_min - pf.v_mag, pf.v_mag - v_max)
    worst_bus = case.buses[int(np.argmax(v_violation))].id
    record(
        "voltage_band",
        float(np.max(v_violation)) <= tol,
        float(np.max(v_violation)),
        f"voltage band violated at bus {worst_bus} by {np.max(v_violation):.3e} p.u.",
    )

    lines = effective_topology(case, config)
    s_rating = np.array([ln.s_max for ln in lines]) * case.s_base
    s_from = np.hypot(pf.p_from, pf.q_from)
    s_to = np.hypot(pf.p_to, pf.q_to)
    overload = np.maximum(s_from, s_to) - s_rating
    worst_line = lines[int(np.argmax(overload))].key if lines else "-"
    record(
        "thermal",
        float(np.max(overload)) <= tol * case.s_base if lines else True,
        float(np.max(overload) / case.s_base) if lines else 0.0,
        f"thermal rating exceeded on line {worst_line}",
    )

    regs = np.stack([x[lay.flex(blk)] for blk in range(4)]) if lay.n_flex else np.zeros((4, 0))
    caps = np.array(
        [
            [u.p_up_max for u in case.flex_units],
            [u.p_dn_max for u in case.flex_units],
            [u.q_up_max for u in case.flex_units],
            [u.q_dn_max for u in case.flex_units],
        ]
    )
    flex_violation = float(np.max(np.maximum(regs - caps, -regs), initial=0.0))
    record(
        "flex_bounds",
        flex_violation <= tol,
        flex_violation,
        "flex regulation outside its capacity bounds",
    )

    v_opt = np.hypot(e, f)
    v_gap = float(np.max(np.abs(v_opt - pf.v_mag)))
    record(
        "voltage_match",
        v_gap <= tol,
        v_gap,
        f"optimizer and oracle voltages disagree by {v_gap:.3e} p.u.",
    )

    # Loss agreement: optimizer losses are the sum of both directed flows.
    p_arcs = x[lay.p_flow]
    opt_losses = float(np.sum(p_arcs)) * case.s_base
    loss_gap = abs(opt_losses - pf.losses_mw) / case.s_base
    record(
        "losses",
        loss_gap <= tol,
        loss_gap,
        f"loss mismatch {loss_gap:.3e} p.u. between formulations",
    )

    if objective is not None and objective.kind == MIN_COST:
        # Interface power seen by the oracle: slack injection = -sum of others
        # plus losses; compare against the pinned target.
        p_interface = float(-np.sum(np.delete(p_inj, ref_idx))) * case.s_base + pf.losses_mw
        q_loss = float(np.sum(pf.q_from + pf.q_to))
        q_interface = float(-np.sum(np.delete(q_inj, ref_idx))) * case.s_base + q_loss
        gap = max(
            abs(p_interface - objective.target.p_ref),
            abs(q_interface - objective.target.q_ref),
        )
        record(
            "target_pinning",
            gap <= tol * case.s_base,
            gap / case.s_base,
            f"interface point misses the target by {gap:.3e} MVA",
        )
    return report
