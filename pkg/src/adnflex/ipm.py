"""Primal-dual interior-point solver for the configuration subproblems.

Solves  min f(x)  s.t.  g(x) = 0,  c(x) <= 0  by introducing slacks
(c(x) - relax + s = 0, s >= 0), following the standard barrier/merit
line-search scheme: a monotone barrier parameter, a condensed symmetric
indefinite KKT system factored with LDL^T, inertia correction for
nonconvexity, and an elastic (slack-penalty) restoration phase that doubles
as the infeasibility classifier. Only local optimality is ever claimed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITER_LIMIT = "iter_limit"
NUMERIC_FAILURE = "numeric_failure"


@dataclass(frozen=True)
class SolverSettings:
    """Interior-point controls; defaults chosen for reproducibility."""

    tol_kkt: float = 1e-8
    max_iter: int = 500
    mu_init: float = 0.1
    bound_relax: float = 1e-8
    armijo_eta: float = 1e-4
    tau_min: float = 0.99
    multistart: int = 0
    seed: int = 0
    feas_tol: float = 1e-6

    def __post_init__(self):
        if self.tol_kkt <= 0.0:
            raise ValueError("tol_kkt must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class QcpSolution:
    """Solver outcome. kkt_residual is the optimality error of the
    internally scaled problem (objective scaled to unit gradient norm)."""

    status: str
    x: np.ndarray
    eq_mult: np.ndarray
    ineq_mult: np.ndarray
    slacks: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    wall_time: float
    sigma: float = 1.0
    relax: float = 1e-8
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


# --- symmetric indefinite factorization helpers ------------------------------


def _ldl_factor(K: np.ndarray):
    """LDL^T factorization plus the inertia (n_pos, n_neg, n_zero) of K.

    Pivots are classified by strict sign: near-singularity shows up as
    wrong-signed tiny pivots, and the caller's regularization loop handles
    both that and exact zeros.
    """
    lu, d, perm = scipy.linalg.ldl(K, lower=True)
    n = K.shape[0]
    pos = neg = zero = 0
    k = 0
    while k < n:
        if k + 1 < n and d[k, k + 1] != 0.0:
            a, b, c = d[k, k], d[k, k + 1], d[k + 1, k + 1]
            det = a * c - b * b
            if not np.isfinite(det):
                zero += 2
            elif det < 0.0:
                pos += 1
                neg += 1
            elif det > 0.0:
                if a + c > 0:
                    pos += 2
                else:
                    neg += 2
            else:
                zero += 1
                if a + c > 0.0:
                    pos += 1
                elif a + c < 0.0:
                    neg += 1
                else:
                    zero += 1
            k += 2
        else:
            v = d[k, k]
            if not np.isfinite(v):
                zero += 1
            elif v > 0.0:
                pos += 1
            elif v < 0.0:
                neg += 1
            else:
                zero += 1
            k += 1
    return lu, d, perm, (pos, neg, zero)


def _ldl_solve(lu, d, perm, b: np.ndarray) -> np.ndarray:
    """Solve K y = b given K = lu d lu^T with lu[perm] unit lower triangular."""
    n = b.shape[0]
    T = lu[perm]
    w = scipy.linalg.solve_triangular(T, b[perm], lower=True, unit_diagonal=True)
    # d is block diagonal with 1x1 / 2x2 blocks.
    v = np.empty_like(w)
    k = 0
    while k < n:
        if k + 1 < n and d[k, k + 1] != 0.0:
            a, bb, c = d[k, k], d[k, k + 1], d[k + 1, k + 1]
            det = a * c - bb * bb
            v[k] = (c * w[k] - bb * w[k + 1]) / det
            v[k + 1] = (-bb * w[k] + a * w[k + 1]) / det
            k += 2
        else:
            v[k] = w[k] / d[k, k]
            k += 1
    u = scipy.linalg.solve_triangular(T, v, lower=True, unit_diagonal=True, trans="T")
    y = np.empty_like(u)
    y[perm] = u
    return y


# --- elastic restoration problem ---------------------------------------------


class _ElasticProblem:
    """min sum(t+ + t-) + zeta/2 ||x - x_ref||^2
    s.t. g(x) + t+ - t- = 0,  c(x) <= 0,  t >= 0.

    Measures how far the equality set can be satisfied while honoring every
    inequality; its optimum near zero means the base problem is feasible.
    """

    def __init__(self, base, x_ref: np.ndarray, zeta: float = 1e-6):
        self.base = base
        self.x_ref = x_ref.copy()
        self.zeta = zeta
        self.nx = base.n_vars
        self.me = base.n_eq
        self.n_vars = self.nx + 2 * self.me
        self.n_eq = self.me
        self.n_ineq = base.n_ineq + 2 * self.me

    def split(self, y):
        return y[: self.nx], y[self.nx : self.nx + self.me], y[self.nx + self.me :]

    def start_from(self, x: np.ndarray) -> np.ndarray:
        g = self.base.eq_residuals(x)
        tp = np.maximum(g * 0.0, -g) + 1e-4
        tm = np.maximum(g * 0.0, g) + 1e-4
        return np.concatenate([x, tp, tm])

    def objective(self, y):
        x, tp, tm = self.split(y)
        prox = 0.5 * self.zeta * float(np.sum((x - self.x_ref) ** 2))
        return float(np.sum(tp) + np.sum(tm)) + prox

    def objective_grad(self, y):
        x, _, _ = self.split(y)
        grad = np.ones(self.n_vars)
        grad[: self.nx] = self.zeta * (x - self.x_ref)
        return grad

    def eq_residuals(self, y):
        x, tp, tm = self.split(y)
        return self.base.eq_residuals(x) + tp - tm

    def eq_jacobian(self, y):
        x, _, _ = self.split(y)
        J = np.zeros((self.me, self.n_vars))
        J[:, : self.nx] = self.base.eq_jacobian(x)
        idx = np.arange(self.me)
        J[idx, self.nx + idx] = 1.0
        J[idx, self.nx + self.me + idx] = -1.0
        return J

    def ineq_values(self, y):
        x, tp, tm = self.split(y)
        return np.concatenate([self.base.ineq_values(x), -tp, -tm])

    def ineq_jacobian(self, y):
        x, _, _ = self.split(y)
        J = np.zeros((self.n_ineq, self.n_vars))
        J[: self.base.n_ineq, : self.nx] = self.base.ineq_jacobian(x)
        idx = np.arange(self.me)
        J[self.base.n_ineq + idx, self.nx + idx] = -1.0
        J[self.base.n_ineq + self.me + idx, self.nx + self.me + idx] = -1.0
        return J

    def lagrangian_hessian(self, y, eq_mult, ineq_mult):
        x, _, _ = self.split(y)
        H = np.zeros((self.n_vars, self.n_vars))
        H[: self.nx, : self.nx] = self.base.lagrangian_hessian(
            x, eq_mult, ineq_mult[: self.base.n_ineq]
        )
        H[np.arange(self.nx), np.arange(self.nx)] += self.zeta
        return H


# --- core iteration -----------------------------------------------------------


class _Iterate:
    """Mutable solver state for one barrier solve."""

    def __init__(self, problem, x0, relax, sigma, mu):
        self.problem = problem
        self.relax = relax
        self.sigma = sigma
        self.mu = mu
        self.x = x0.copy()
        c0 = self.cons(self.x)
        self.s = np.maximum(1e-2, -c0)
        self.z = np.minimum(1e4, mu / self.s)
        self.lam = np.zeros(problem.n_eq)

    def cons(self, x):
        """Relaxed inequality values; feasibility is cons <= 0."""
        return self.problem.ineq_values(x) - self.relax

    def theta(self, x, s):
        g = self.problem.eq_residuals(x)
        r = self.cons(x) + s
        return float(np.sum(np.abs(g)) + np.sum(np.abs(r)))

    def barrier_phi(self, x, s):
        val = self.sigma * self.problem.objective(x)
        if s.size:
            val -= self.mu * float(np.sum(np.log(s)))
        return val

    def error(self, mu) -> float:
        p = self.problem
        grad = self.sigma * p.objective_grad(self.x)
        Jg = p.eq_jacobian(self.x)
        Jc = p.ineq_jacobian(self.x)
        r_d = grad + Jg.T @ self.lam + Jc.T @ self.z
        m = max(1, p.n_eq + p.n_ineq)
        s_max = 100.0
        s_d = max(s_max, (np.sum(np.abs(self.lam)) + np.sum(np.abs(self.z))) / m) / s_max
        parts = [float(np.max(np.abs(r_d))) / s_d]
        g = p.eq_residuals(self.x)
        if g.size:
            parts.append(float(np.max(np.abs(g))))
        if p.n_ineq:
            s_c = max(s_max, np.sum(np.abs(self.z)) / p.n_ineq) / s_max
            parts.append(float(np.max(np.abs(self.cons(self.x) + self.s))))
            parts.append(float(np.max(np.abs(self.s * self.z - mu))) / s_c)
        return max(parts)


def _initialize_multipliers(state: _Iterate) -> None:
    """Least-squares equality multipliers from the stationarity condition."""
    p = state.problem
    if p.n_eq == 0:
        return
    grad = state.sigma * p.objective_grad(state.x)
    Jg = p.eq_jacobian(state.x)
    Jc = p.ineq_jacobian(state.x)
    rhs = -(grad + Jc.T @ state.z)
    lam, *_ = np.linalg.lstsq(Jg.T, rhs, rcond=None)
    if np.all(np.isfinite(lam)) and np.max(np.abs(lam)) <= 1e3:
        state.lam = lam


def _barrier_solve(problem, x0, settings: SolverSettings, sigma: float):
    """Run the interior-point iteration; returns (state, status, iters, msg)."""
    mu_min = settings.tol_kkt / 10.0
    state = _Iterate(problem, x0, settings.bound_relax, sigma, settings.mu_init)
    _initialize_multipliers(state)
    tau = max(settings.tau_min, 1.0 - state.mu)
    nu = 1.0
    delta_w_last = 0.0
    kappa_sigma = 1e10

    n = problem.n_vars
    me = problem.n_eq
    tiny_steps = 0
    for it in range(settings.max_iter):
        e0 = state.error(0.0)
        if e0 <= settings.tol_kkt:
            return state, OPTIMAL, it, ""
        while state.mu > mu_min and state.error(state.mu) <= 10.0 * state.mu:
            state.mu = max(mu_min, min(0.2 * state.mu, state.mu**1.5))
            tau = max(settings.tau_min, 1.0 - state.mu)

        p = state.problem
        x, s, z, lam, mu = state.x, state.s, state.z, state.lam, state.mu
        grad = sigma * p.objective_grad(x)
        g = p.eq_residuals(x)
        c = state.cons(x)
        Jg = p.eq_jacobian(x)
        Jc = p.ineq_jacobian(x)
        r_c = c + s
        W = p.lagrangian_hessian(x, lam, z)

        Sigma = z / s if s.size else z
        A = W + (Jc.T * Sigma) @ Jc if s.size else W.copy()
        r_d = grad + Jg.T @ lam + Jc.T @ z
        top = -(r_d + (Jc.T @ (mu / s - z + Sigma * r_c) if s.size else 0.0))
        rhs = np.concatenate([top, -g])

        # Inertia-corrected factorization: want n positive, me negative pivots.
        delta_w = 0.0
        delta_c = 0.0
        factor = None
        for trial in range(40):
            K = np.zeros((n + me, n + me))
            K[:n, :n] = A
            if delta_w:
                K[np.arange(n), np.arange(n)] += delta_w
            if me:
                K[:n, n:] = Jg.T
                K[n:, :n] = Jg
                if delta_c:
                    K[np.arange(n, n + me), np.arange(n, n + me)] -= delta_c
            try:
                lu, d, perm, inertia = _ldl_factor(K)
            except np.linalg.LinAlgError:
                inertia = (0, 0, n + me)
            if inertia[0] == n and inertia[1] == me and inertia[2] == 0:
                factor = (lu, d, perm)
                break
            # Dual regularization guards against rank-deficient active sets
            # (degenerate corners); primal regularization against negative
            # curvature. Apply the first always, escalate the second.
            if not delta_c:
                delta_c = 1e-8 * max(mu, 1e-8) ** 0.25
            if delta_w == 0.0:
                delta_w = 1e-4 if delta_w_last == 0.0 else max(1e-20, delta_w_last / 3.0)
            else:
                delta_w *= 8.0 if delta_w_last else 100.0
            if delta_w > 1e40:
                break
        if factor is None:
            return state, NUMERIC_FAILURE, it, "inertia correction failed"
        delta_w_last = delta_w if delta_w else delta_w_last

        step = _ldl_solve(*factor, rhs)
        dx, dlam = step[:n], step[n:]
        ds = -r_c - Jc @ dx if s.size else s
        dz = (mu / s - z + Sigma * r_c + Sigma * (Jc @ dx)) if s.size else z

        if not np.all(np.isfinite(dx)) or not np.all(np.isfinite(dz)):
            return state, NUMERIC_FAILURE, it, "non-finite search direction"

        # Fraction-to-boundary step limits.
        alpha_max = 1.0
        if s.size:
            neg = ds < 0
            if np.any(neg):
                alpha_max = min(1.0, float(np.min(-tau * s[neg] / ds[neg])))
            neg_z = dz < 0
            alpha_z = 1.0
            if np.any(neg_z):
                alpha_z = min(1.0, float(np.min(-tau * z[neg_z] / dz[neg_z])))
        else:
            alpha_z = 1.0

        # Merit penalty keeping the direction a descent direction.
        theta0 = state.theta(x, s)
        d_obj = float(grad @ dx) - (mu * float(np.sum(ds / s)) if s.size else 0.0)
        if theta0 > 1e-14:
            nu = max(nu, 1.1 * d_obj / (0.9 * theta0)) if d_obj > 0 else nu
        dphi = d_obj - nu * theta0

        phi0 = state.barrier_phi(x, s) + nu * theta0

        def armijo_ok(x_t, s_t, step_size):
            phi_t = state.barrier_phi(x_t, s_t) + nu * state.theta(x_t, s_t)
            return phi_t <= phi0 + settings.armijo_eta * step_size * min(dphi, 0.0)

        def try_soc(alpha_first):
            """Iterative second-order corrections (reusing the factorization)
            to absorb quadratic constraint overshoot at the full step."""
            x_t = x + alpha_first * dx
            s_t = s + alpha_first * ds
            g_acc = alpha_first * g + p.eq_residuals(x_t)
            r_acc = alpha_first * r_c + (state.cons(x_t) + s_t)
            theta_last = state.theta(x_t, s_t)
            for _ in range(4):
                top_c = -(r_d + (Jc.T @ (mu / s - z + Sigma * r_acc) if s.size else 0.0))
                sol_c = _ldl_solve(*factor, np.concatenate([top_c, -g_acc]))
                dx_c, dlam_c = sol_c[:n], sol_c[n:]
                if s.size:
                    ds_c = -r_acc - Jc @ dx_c
                    dz_c = mu / s - z + Sigma * r_acc + Sigma * (Jc @ dx_c)
                else:
                    ds_c, dz_c = s, z
                a_c = az_c = 1.0
                if s.size:
                    neg_c = ds_c < 0
                    if np.any(neg_c):
                        a_c = min(1.0, float(np.min(-tau * s[neg_c] / ds_c[neg_c])))
                    neg_zc = dz_c < 0
                    if np.any(neg_zc):
                        az_c = min(1.0, float(np.min(-tau * z[neg_zc] / dz_c[neg_zc])))
                x_c = x + a_c * dx_c
                s_c = s + a_c * ds_c
                if armijo_ok(x_c, s_c, a_c):
                    return dx_c, ds_c, dlam_c, dz_c, a_c, az_c
                theta_c = state.theta(x_c, s_c)
                if theta_c > 0.99 * theta_last:
                    return None
                theta_last = theta_c
                g_acc = a_c * g_acc + p.eq_residuals(x_c)
                r_acc = a_c * r_acc + (state.cons(x_c) + s_c)
            return None

        alpha = alpha_max
        accepted = False
        step_x, step_s, step_lam, step_z, az = dx, ds, dlam, dz, alpha_z
        for backtrack in range(60):
            x_t = x + alpha * step_x
            s_t = s + alpha * step_s
            try:
                if armijo_ok(x_t, s_t, alpha):
                    accepted = True
                    break
                if backtrack == 0 and theta0 > 0:
                    soc = try_soc(alpha)
                    if soc is not None:
                        step_x, step_s, step_lam, step_z, alpha, az = soc
                        accepted = True
                        break
            except (ValueError, FloatingPointError):
                alpha *= 0.5
                continue
            alpha *= 0.5
        if not accepted or alpha < 1e-14:
            return state, NUMERIC_FAILURE, it, "line search failed"
        # Repeated near-zero accepted steps while infeasible mean the
        # constraints are fighting each other; let restoration decide.
        if alpha * alpha_max < 1e-5 and state.theta(x, s) > settings.feas_tol:
            tiny_steps += 1
            if tiny_steps >= 8:
                return state, NUMERIC_FAILURE, it, "step size collapsed"
        else:
            tiny_steps = 0

        state.x = x + alpha * step_x
        if s.size:
            state.s = s + alpha * step_s
            state.z = z + az * step_z
            # Keep duals within a large multiple of the barrier estimate.
            lo = mu / (kappa_sigma * state.s)
            hi = kappa_sigma * mu / state.s
            state.z = np.minimum(np.maximum(state.z, lo), hi)
        state.lam = lam + alpha * step_lam

    return state, ITER_LIMIT, settings.max_iter, "iteration limit reached"


def _objective_scaling(problem, x0) -> float:
    gmax = float(np.max(np.abs(problem.objective_grad(x0)))) if problem.n_vars else 1.0
    return min(1.0, 100.0 / gmax) if gmax > 100.0 else 1.0


def _finish(problem, state, status, iters, msg, sigma, t0, relax) -> QcpSolution:
    return QcpSolution(
        status=status,
        x=state.x.copy(),
        eq_mult=state.lam.copy(),
        ineq_mult=state.z.copy(),
        slacks=state.s.copy(),
        objective=float(problem.objective(state.x)),
        kkt_residual=float(state.error(0.0)),
        iterations=iters,
        wall_time=time.perf_counter() - t0,
        sigma=sigma,
        relax=relax,
        message=msg,
    )


def _solve_once(problem, settings: SolverSettings, x0, allow_restoration=True):
    t0 = time.perf_counter()
    sigma = _objective_scaling(problem, x0)
    relax = settings.bound_relax
    state, status, iters, msg = _barrier_solve(problem, x0, settings, sigma)

    if status == OPTIMAL:
        return _finish(problem, state, OPTIMAL, iters, msg, sigma, t0, relax)

    feasible_now = (
        float(np.max(np.abs(problem.eq_residuals(state.x)))) <= settings.feas_tol
        if problem.n_eq
        else True
    )
    if not allow_restoration or feasible_now:
        return _finish(problem, state, status, iters, msg, sigma, t0, relax)

    # Elastic restoration: decide infeasibility, or retry from the repaired point.
    elastic = _ElasticProblem(problem, state.x)
    rest_settings = replace(
        settings,
        tol_kkt=max(settings.tol_kkt, 1e-7),
        multistart=0,
    )
    rest_state, rest_status, rest_iters, _ = _barrier_solve(
        elastic, elastic.start_from(state.x), rest_settings, 1.0
    )
    x_rest = rest_state.x[: problem.n_vars]
    violation = (
        float(np.max(np.abs(problem.eq_residuals(x_rest)))) if problem.n_eq else 0.0
    )
    if rest_status in (OPTIMAL, ITER_LIMIT) and violation > settings.feas_tol:
        sol = _finish(problem, state, INFEASIBLE, iters + rest_iters, msg, sigma, t0, relax)
        sol.message = (
            f"restoration finished with equality violation {violation:.3e} "
            f"(> {settings.feas_tol:.1e}); infeasibility is a diagnosis, not a certificate"
        )
        return sol
    state2, status2, iters2, msg2 = _barrier_solve(problem, x_rest, settings, sigma)
    total = iters + rest_iters + iters2
    return _finish(problem, state2, status2, total, msg2, sigma, t0, relax)


def solve(problem, settings: SolverSettings | None = None, warm_start=None) -> QcpSolution:
    """Solve a QcpProblem (or any object with its evaluator surface).

    Deterministic for identical inputs. The default start is the flat start;
    `warm_start` is a primal vector of layout length. With multistart K > 0,
    K additional solves from seeded voltage perturbations (within +-0.05 p.u.)
    are run and the best optimal result is kept.
    """
    if settings is None:
        settings = SolverSettings()
    if warm_start is not None:
        x0 = np.asarray(warm_start, dtype=float)
        if x0.shape != (problem.n_vars,):
            raise ValueError(
                f"warm start has length {x0.shape}, expected {problem.n_vars}"
            )
        if not np.all(np.isfinite(x0)):
            raise ValueError("warm start contains non-finite entries")
    else:
        x0 = problem.flat_start()

    best = _solve_once(problem, settings, x0)
    if settings.multistart > 0:
        rng = np.random.default_rng(settings.seed)
        nb = problem.layout.n_bus
        for _ in range(settings.multistart):
            x_k = x0.copy()
            x_k[:nb] += rng.uniform(-0.05, 0.05, nb)
            x_k[nb : 2 * nb] += rng.uniform(-0.05, 0.05, nb)
            cand = _solve_once(problem, settings, x_k)
            if cand.is_optimal and (
                not best.is_optimal or cand.objective < best.objective - 1e-12
            ):
                best = cand
    return best


def kkt_report(problem, solution: QcpSolution) -> dict[str, float]:
    """Structured residual breakdown at a solution.

    Norms are infinity norms on the internally scaled problem (objective
    scaled by solution.sigma), matching the convergence test.
    """
    x, s, z, lam = solution.x, solution.slacks, solution.ineq_mult, solution.eq_mult
    grad = solution.sigma * problem.objective_grad(x)
    Jg = problem.eq_jacobian(x)
    Jc = problem.ineq_jacobian(x)
    r_d = grad + Jg.T @ lam + Jc.T @ z
    g = problem.eq_residuals(x)
    c = problem.ineq_values(x) - solution.relax
    report = {
        "stationarity": float(np.max(np.abs(r_d))) if r_d.size else 0.0,
        "primal_eq": float(np.max(np.abs(g))) if g.size else 0.0,
        "primal_ineq": float(np.max(np.maximum(c, 0.0))) if c.size else 0.0,
        "complementarity": float(np.max(np.abs(s * z))) if s.size else 0.0,
    }
    return report
