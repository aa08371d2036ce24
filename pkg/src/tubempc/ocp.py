"""Tracking optimal control problem and its SQP solver.

Decision vector z = (v(0), ..., v(N_p-1), y_s): single-shooting inputs of the
pre-stabilized loop plus the artificial reference. The steady state, input,
and policy input are eliminated through the equilibrium maps, so the problem
has box stage constraints, one terminal level-set inequality, and the
setpoint-region half-planes.

The solver keeps every iterate feasible (a shifted previous solution is
feasible by construction, so the closed loop always has a warm start) and
never returns anything worse than the best feasible point it has seen.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .equilibria import EquilibriumMaps, SetpointRegion, best_setpoint
from .qp import QPError, solve_qp
from .terminal import TerminalIngredients
from .tubes import TightenedConstraints


class InfeasibleProblemError(RuntimeError):
    """No feasible point found and no feasible warm start available."""


@dataclass
class TrackingProblem:
    model: object
    maps: EquilibriumMaps
    constraints: TightenedConstraints
    ingredients: TerminalIngredients
    region: SetpointRegion
    N_p: int
    Q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    stat_tol: float = 1e-6
    feas_tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.T = np.atleast_2d(np.asarray(self.T, dtype=float))
        if np.linalg.eigvalsh(self.Q).min() <= 0:
            raise ValueError("stage state weight Q must be positive definite")
        if self.constraints.horizon < self.N_p:
            raise ValueError("tightened constraints shorter than the horizon")
        self.nz = self.N_p * self.model.m + self.model.p
        m, p = self.model.m, self.model.p
        self._Ev = []
        for j in range(self.N_p):
            E = np.zeros((m, self.nz))
            E[:, j * m:(j + 1) * m] = np.eye(m)
            self._Ev.append(E)
        self._Ey = np.zeros((p, self.nz))
        self._Ey[:, self.N_p * m:] = np.eye(p)

    @property
    def K(self) -> np.ndarray:
        return self.ingredients.K

    def split(self, z):
        m = self.model.m
        V = z[: self.N_p * m].reshape(self.N_p, m)
        y_s = z[self.N_p * m:]
        return V, y_s

    def join(self, v_seq, y_s) -> np.ndarray:
        return np.concatenate([np.asarray(v_seq, float).ravel(),
                               np.atleast_1d(np.asarray(y_s, float))])


@dataclass
class Solution:
    v_seq: np.ndarray
    y_s: np.ndarray
    cost: float
    status: str                   # optimal | max-iter | fallback-candidate
    kkt_residual: float
    predicted_states: np.ndarray
    iterations: int = 0


def _rollout(problem: TrackingProblem, x0, z, with_jac: bool):
    """Nominal rollout; optionally with sensitivities of states and inputs
    with respect to the decision vector."""
    md = problem.model
    n, m, p = md.n, md.m, md.p
    N, nz = problem.N_p, problem.nz
    V, y_s = problem.split(z)
    x_s = problem.maps.gx(y_s)
    v_s = problem.maps.gv(y_s)
    K = problem.K
    w0 = np.zeros(md.r)

    states = np.empty((N + 1, n))
    inputs = np.empty((N, m))
    states[0] = x0
    Gx = Gv = None
    S = dU = None
    if with_jac:
        Jxs, Jvs = problem.maps.jacobians(y_s)
        Gx = np.zeros((n, nz))
        Gx[:, N * m:] = Jxs
        Gv = np.zeros((m, nz))
        Gv[:, N * m:] = Jvs
        S = [np.zeros((n, nz))]
        dU = []
    for j in range(N):
        u = K @ (states[j] - x_s) + V[j]
        inputs[j] = u
        if with_jac:
            dU_j = K @ S[j] + problem._Ev[j] - K @ Gx
            Fx, Fu = md.step_jacobians(states[j], u, w0)
            S.append(Fx @ S[j] + Fu @ dU_j)
            dU.append(dU_j)
        states[j + 1] = md.step(states[j], u, w0)
    return states, inputs, (x_s, v_s), (S, dU, Gx, Gv)


def _cost_terms(problem: TrackingProblem, x0, z, y_t, with_jac: bool):
    """(cost, grad, gauss_newton_H, states, inputs, jac_pack)."""
    states, inputs, (x_s, v_s), pack = _rollout(problem, x0, z, with_jac)
    V, y_s = problem.split(z)
    N, nz = problem.N_p, problem.nz
    Q, R, T = problem.Q, problem.R, problem.T
    P = problem.ingredients.P

    rT = states[N] - x_s
    ry = y_s - np.asarray(y_t, float)
    cost = float(rT @ P @ rT + ry @ T @ ry)
    for j in range(N):
        rx = states[j] - x_s
        rv = V[j] - v_s
        cost += float(rx @ Q @ rx + rv @ R @ rv)
    if not with_jac:
        return cost, None, None, states, inputs, pack

    S, dU, Gx, Gv = pack
    m, p = problem.model.m, problem.model.p
    grad = np.zeros(nz)
    H = np.zeros((nz, nz))
    Ey = problem._Ey
    for j in range(N):
        Jx = S[j] - Gx
        rx = states[j] - x_s
        grad += 2.0 * (Jx.T @ (Q @ rx))
        H += 2.0 * (Jx.T @ Q @ Jx)
        Jv = problem._Ev[j] - Gv
        rv = V[j] - v_s
        grad += 2.0 * (Jv.T @ (R @ rv))
        H += 2.0 * (Jv.T @ R @ Jv)
    JT = S[N] - Gx
    grad += 2.0 * (JT.T @ (P @ rT))
    H += 2.0 * (JT.T @ P @ JT)
    grad += 2.0 * (Ey.T @ (T @ ry))
    H += 2.0 * (Ey.T @ T @ Ey)
    return cost, grad, H, states, inputs, pack


def evaluate_cost(problem: TrackingProblem, x0, y_t, v_seq, y_s):
    """Cost of a candidate and its gradient with respect to (v_seq, y_s)."""
    z = problem.join(v_seq, y_s)
    cost, grad, _, _, _, _ = _cost_terms(problem, x0, z, y_t, with_jac=True)
    return cost, grad


def _constraints(problem: TrackingProblem, x0, z, with_jac: bool,
                 states=None, inputs=None, pack=None):
    """Stacked inequality values c(z) <= 0 and, optionally, their Jacobian.

    Row order: stage state boxes (j = 1..N_p-1, upper then lower), stage
    input boxes (j = 0..N_p-1), terminal level inequality, region half-planes.
    """
    if states is None:
        states, inputs, _, pack = _rollout(problem, x0, z, with_jac)
    md = problem.model
    n, m = md.n, md.m
    N, nz = problem.N_p, problem.nz
    tight = problem.constraints
    V, y_s = problem.split(z)
    x_s = problem.maps.gx(y_s)
    P = problem.ingredients.P
    rho = problem.ingredients.rho
    S, dU, Gx, Gv = pack if pack is not None else (None, None, None, None)

    rows = []
    jac = [] if with_jac else None
    for j in range(1, N):
        box = tight.state_boxes[j]
        rows.append(states[j] - box.upper)
        rows.append(box.lower - states[j])
        if with_jac:
            jac.append(S[j])
            jac.append(-S[j])
    for j in range(N):
        box = tight.input_boxes[j]
        rows.append(inputs[j] - box.upper)
        rows.append(box.lower - inputs[j])
        if with_jac:
            jac.append(dU[j])
            jac.append(-dU[j])
    rT = states[N] - x_s
    scale = 1.0 / max(rho, 1e-9)          # keep the terminal row O(1)
    rows.append(np.array([(rT @ P @ rT - rho) * scale]))
    if with_jac:
        jac.append((2.0 * scale * (P @ rT) @ (S[N] - Gx))[None, :])
    reg = problem.region
    rows.append(reg.A @ y_s - reg.b)
    if with_jac:
        Ay = np.zeros((len(reg.b), nz))
        Ay[:, N * m:] = reg.A
        jac.append(Ay)
    c = np.concatenate(rows)
    return (c, np.vstack(jac)) if with_jac else (c, None)


def _violation(problem, x0, z) -> float:
    try:
        c, _ = _constraints(problem, x0, z, with_jac=False)
    except Exception:
        return np.inf
    return float(np.max(c, initial=0.0))


def _phase1(problem: TrackingProblem, x0, z, max_iter: int = 60):
    """Gauss-Newton on the squared hinge of the constraint values.

    Drives an infeasible guess toward c(z) <= 0; used only for cold starts
    (warm starts are feasible by the candidate-shift construction).
    """
    z = z.copy()
    ybox = problem.region.bounding_box()
    lo, hi = ybox.lower, ybox.upper
    m = problem.model.m
    Nm = problem.N_p * m

    def clip(zz):
        zz = zz.copy()
        zz[Nm:] = np.clip(zz[Nm:], lo + 1e-9, hi - 1e-9)
        return zz

    z = clip(z)
    viol = _violation(problem, x0, z)
    lam = 1e-8
    for _ in range(max_iter):
        if viol <= 0.5 * problem.feas_tol:
            return z, viol
        c, A = _constraints(problem, x0, z, with_jac=True)
        active = c > -problem.feas_tol
        h = np.maximum(c[active], 0.0)
        J = A[active]
        G = J.T @ J + lam * np.eye(problem.nz)
        step = np.linalg.solve(G, -J.T @ h)
        improved = False
        alpha = 1.0
        for _ in range(25):
            zt = clip(z + alpha * step)
            vt = _violation(problem, x0, zt)
            if vt < viol:
                z, viol = zt, vt
                improved = True
                break
            alpha *= 0.5
        if not improved:
            lam *= 10.0
            if lam > 1e4:
                break
    return z, viol


def _steady_guess(problem: TrackingProblem, y_s):
    return problem.join(np.tile(problem.maps.gv(y_s), (problem.N_p, 1)), y_s)


def _cold_start_candidates(problem: TrackingProblem, x0, y_t):
    """Feasible-first guesses: walk from the setpoint nearest the current
    output toward the (projected) target, keeping the largest feasible blend."""
    zs = []
    try:
        y_best = best_setpoint(y_t, problem.region, problem.T)
    except QPError:
        y_best = problem.region.centroid
    y_near = problem.model.output(np.asarray(x0, float),
                                  problem.maps.gu(problem.region.centroid))
    y_near = best_setpoint(y_near, problem.region, problem.T)
    for beta in (1.0, 0.75, 0.5, 0.25):
        z = _steady_guess(problem, y_near + beta * (y_best - y_near))
        if _violation(problem, x0, z) <= problem.feas_tol:
            return [z]
        zs.append(z)
    zs.append(_steady_guess(problem, y_near))
    zs.append(_steady_guess(problem, problem.region.centroid))
    return zs


def solve(problem: TrackingProblem, x0, y_t, warm_start=None) -> Solution:
    """Local solution of the tracking problem from state x0 and target y_t.

    warm_start is (v_seq, y_s) or a Solution; when the optimizer cannot
    improve on a feasible warm start, that candidate is returned unchanged
    with status 'fallback-candidate', so the caller never receives an
    infeasible control sequence.
    """
    x0 = np.asarray(x0, dtype=float)
    y_t = np.atleast_1d(np.asarray(y_t, dtype=float))
    if not problem.constraints.state_boxes[0].contains(x0, tol=problem.feas_tol):
        raise InfeasibleProblemError(f"initial state outside the state box: {x0}")

    warm_z = None
    if warm_start is not None:
        if isinstance(warm_start, Solution):
            warm_z = problem.join(warm_start.v_seq, warm_start.y_s)
        else:
            warm_z = problem.join(*warm_start)

    z = None
    if warm_z is not None and _violation(problem, x0, warm_z) <= problem.feas_tol:
        z = warm_z.copy()
        # after a target change a fresh setpoint-homotopy start can be far
        # better than marching the shifted candidate; take the cheaper one
        cw, _, _, _, _, _ = _cost_terms(problem, x0, warm_z, y_t, with_jac=False)
        if cw > 1.0:
            cands = _cold_start_candidates(problem, x0, y_t)
            if cands and _violation(problem, x0, cands[0]) <= problem.feas_tol:
                cc, _, _, _, _, _ = _cost_terms(problem, x0, cands[0], y_t, with_jac=False)
                if cc < cw:
                    z = cands[0].copy()
    else:
        for cand in ([warm_z] if warm_z is not None else []) + _cold_start_candidates(problem, x0, y_t):
            if _violation(problem, x0, cand) <= problem.feas_tol:
                z = cand.copy()
                break
        if z is None:
            for cand in _cold_start_candidates(problem, x0, y_t):
                zf, viol = _phase1(problem, x0, cand)
                if viol <= problem.feas_tol:
                    z = zf
                    break
        if z is None:
            raise InfeasibleProblemError(
                f"no feasible point found for x0={x0} (outside the feasible set?)")

    cost, grad, H, states, inputs, pack = _cost_terms(problem, x0, z, y_t, with_jac=True)
    best_z, best_cost = z.copy(), cost
    warm_is_best = warm_z is not None and np.array_equal(best_z, warm_z)
    kkt = np.inf
    status = "max-iter"
    iters = 0
    mu = 10.0
    stall = 0
    ws = None
    nz = problem.nz
    for it in range(1, problem.max_iter + 1):
        iters = it
        c, A = _constraints(problem, x0, z, with_jac=True, states=states,
                            inputs=inputs, pack=pack)
        viol = float(np.sum(np.maximum(c, 0.0)))
        if viol <= problem.feas_tol and cost < best_cost - 1e-14:
            best_z, best_cost = z.copy(), cost
            warm_is_best = False
        # elastic subproblem: one slack relaxes the linearized constraints so
        # the QP always has the feasible start (d, t) = (0, max violation)
        nc = len(c)
        H_el = np.zeros((nz + 1, nz + 1))
        H_el[:nz, :nz] = H + 1e-10 * np.eye(nz)
        H_el[nz, nz] = 1e-6
        g_el = np.concatenate([grad, [1e3 * mu]])
        A_el = np.zeros((nc + 1, nz + 1))
        A_el[:nc, :nz] = A
        A_el[:nc, nz] = -1.0
        A_el[nc, nz] = -1.0
        b_el = np.concatenate([-c, [0.0]])
        t0 = max(viol, 0.0) * 1.001 + 1e-12
        try:
            qp = solve_qp(H_el, g_el, A_el, b_el,
                          z0=np.concatenate([np.zeros(nz), [t0]]),
                          warm_active=ws)
        except QPError:
            break
        ws = qp.active
        d = qp.z[:nz]
        lam = qp.lam[:nc]
        kkt = float(np.linalg.norm(grad + A.T @ lam, ord=np.inf))
        stat_ref = problem.stat_tol * (1.0 + float(np.linalg.norm(grad, np.inf)))
        if viol <= problem.feas_tol and (np.linalg.norm(d, np.inf) <= 1e-11
                                         or kkt <= stat_ref):
            status = "optimal"
            break
        lam_max = float(np.max(lam, initial=0.0))
        if 2.0 * lam_max < 0.25 * mu:
            mu = max(2.0 * lam_max, 0.7 * mu, 1.0)
        else:
            mu = min(max(mu, 2.0 * lam_max), 1e8)
        phi0 = cost + mu * viol
        slope = float(grad @ d) - mu * viol

        def merit(zt):
            try:
                ct, _, _, st_t, in_t, _ = _cost_terms(problem, x0, zt, y_t, with_jac=False)
                cvt, _ = _constraints(problem, x0, zt, with_jac=False,
                                      states=st_t, inputs=in_t)
                return ct + mu * float(np.sum(np.maximum(cvt, 0.0))), cvt
            except Exception:
                return np.inf, None

        accepted = False
        alpha = 1.0
        phit, c_full = merit(z + d)
        if phit <= phi0 + 1e-4 * min(slope, 0.0) + 1e-12:
            z = z + d
            accepted = True
        elif c_full is not None:
            # second-order correction: re-center the constraint model at the
            # full step to cancel curvature (anti-Maratos), then retry alpha=1
            b_soc = np.concatenate([-(c_full - A @ d), [0.0]])
            try:
                qp2 = solve_qp(H_el, g_el, A_el, b_soc,
                               z0=np.concatenate(
                                   [np.zeros(nz),
                                    [max(float(np.max(c_full - A @ d, initial=0.0)), 0.0)
                                     * 1.001 + 1e-12]]))
                d_soc = qp2.z[:nz]
                phit, _ = merit(z + d_soc)
                if phit <= phi0 + 1e-4 * min(slope, 0.0) + 1e-12:
                    z = z + d_soc
                    accepted = True
            except QPError:
                pass
        if not accepted:
            alpha = 0.5
            while alpha >= 1e-8:
                phit, _ = merit(z + alpha * d)
                if phit <= phi0 + 1e-4 * alpha * min(slope, 0.0) + 1e-12:
                    z = z + alpha * d
                    accepted = True
                    break
                alpha *= 0.5
        if not accepted:
            if viol <= problem.feas_tol and kkt <= 1e3 * problem.stat_tol:
                status = "optimal"
            break
        # practical convergence: merit progress below noise at a feasible point
        if phit >= phi0 - 1e-11 * (1.0 + abs(phi0)) and viol <= problem.feas_tol:
            stall += 1
            if stall >= 2:
                status = "optimal"
                cost, _, _, _, _, _ = _cost_terms(problem, x0, z, y_t, with_jac=False)
                break
        else:
            stall = 0
        cost, grad, H, states, inputs, pack = _cost_terms(problem, x0, z, y_t, with_jac=True)

    # restoration polish: a near-feasible final iterate that beats the best
    # strictly-feasible point is pulled back onto the constraints
    c_fin, _ = _constraints(problem, x0, z, with_jac=False)
    viol_fin = float(np.sum(np.maximum(c_fin, 0.0)))
    if viol_fin > problem.feas_tol and viol_fin < 1e-2:
        z_r, viol_r = _phase1(problem, x0, z, max_iter=25)
        if viol_r <= problem.feas_tol:
            z = z_r
            try:
                cost, _, _, _, _, _ = _cost_terms(problem, x0, z, y_t, with_jac=False)
                viol_fin = viol_r
            except Exception:
                viol_fin = np.inf
    if viol_fin <= problem.feas_tol and cost < best_cost - 1e-14:
        best_z, best_cost = z.copy(), cost
        warm_is_best = False
    if warm_is_best and status != "optimal":
        status = "fallback-candidate"
    states, _, _, _ = _rollout(problem, x0, best_z, with_jac=False)
    V, y_s = problem.split(best_z)
    return Solution(v_seq=V.copy(), y_s=y_s.copy(), cost=best_cost, status=status,
                    kkt_residual=kkt, predicted_states=states, iterations=iters)


def shift_candidate(problem: TrackingProblem, previous: Solution):
    """One-step-shifted warm start: drop v(0), append the terminal input
    v_f(y_s) = g_v(y_s), keep the artificial reference."""
    v_f = problem.maps.gv(previous.y_s)
    v_shift = np.vstack([previous.v_seq[1:], v_f[None, :]])
    return v_shift, previous.y_s.copy()


def control_law(problem: TrackingProblem, x, y_t, warm_start=None):
    """Receding-horizon control: the policy evaluated at the solver output."""
    sol = solve(problem, x, y_t, warm_start=warm_start)
    u = problem.K @ (np.asarray(x, float) - problem.maps.gx(sol.y_s)) + sol.v_seq[0]
    return u, sol
