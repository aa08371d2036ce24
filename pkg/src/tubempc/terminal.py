"""Terminal gain, terminal cost, and the level-set sizing of the terminal region.

The terminal pair (K, P) is verified (or synthesized from a Riccati solve at
the central operating vertex with weight-scaling backoff) against the two
matrix conditions it must satisfy at every sampled equilibrium linearization:

    A_K' P A_K - P + Q + K' R K <= 0       (cost decrease)
    A_K' P A_K <= zeta P, zeta < 1         (contraction)

The terminal region is X_f(y_s) = { x : (x-x_s)' P (x-x_s) <= rho } with an
inflated working set Omega = { V_f <= rho_omega }; rho is sized so the level
sets fit inside the tightened stage boxes and remain invariant under the
terminal policy despite the one-step inflation F(N_p - 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_discrete_are

from .boxes import Hyperbox
from .equilibria import EquilibriumMaps, SetpointRegion, solve_equilibrium
from .tubes import TightenedConstraints


class SynthesisFailedError(RuntimeError):
    pass


class TerminalDesignError(RuntimeError):
    pass


@dataclass
class TerminalIngredients:
    K: np.ndarray
    P: np.ndarray
    rho: float | None = None
    zeta: float | None = None
    kappa_omega: float | None = None      # rho_omega / rho

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.P = 0.5 * (P + P.T)
        # positive definiteness assertable by Cholesky success
        cholesky(self.P, lower=True)

    @property
    def alpha_f_bar(self) -> float:
        return float(np.linalg.eigvalsh(self.P).max())

    def vf(self, e) -> float:
        e = np.asarray(e, dtype=float)
        return float(e @ self.P @ e)


def linearize_at(model, y_s, maps: EquilibriumMaps | None = None):
    """(A, B, x_s, u_s): Jacobians of the nominal step at the equilibrium of y_s."""
    x_s, u_s = solve_equilibrium(model, y_s)
    A, B = model.step_jacobians(x_s, u_s, np.zeros(model.r))
    return A, B, x_s, u_s


def _contraction_factor(P, AKPAK) -> float:
    """Smallest zeta with A_K' P A_K <= zeta P (generalized max eigenvalue)."""
    L = cholesky(P, lower=True)
    Y = np.linalg.solve(L, np.linalg.solve(L, AKPAK).T).T
    return float(np.linalg.eigvalsh(0.5 * (Y + Y.T)).max())


@dataclass
class VertexCheck:
    y_s: np.ndarray
    decrease_eig: float      # max eig of A_K'PA_K - P + Q + K'RK
    zeta: float


def verify_gain(model, vertex_setpoints, K, P, Q, R) -> list:
    """Per-vertex decrease eigenvalues and contraction factors for (K, P)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    checks = []
    for y_s in vertex_setpoints:
        A, B, _, _ = linearize_at(model, y_s)
        AK = A + B @ K
        AKPAK = AK.T @ P @ AK
        M = AKPAK - P + Q + K.T @ R @ K
        checks.append(VertexCheck(
            y_s=np.atleast_1d(np.asarray(y_s, float)),
            decrease_eig=float(np.linalg.eigvalsh(0.5 * (M + M.T)).max()),
            zeta=_contraction_factor(P, AKPAK),
        ))
    return checks


def _gen_eig_max(M, S) -> float:
    """max lambda of M v = lambda S v for symmetric M and S > 0."""
    L = cholesky(S, lower=True)
    Y = np.linalg.solve(L, np.linalg.solve(L, M).T).T
    return float(np.linalg.eigvalsh(0.5 * (Y + Y.T)).max())


def synthesize_gain(model, maps: EquilibriumMaps, vertex_setpoints, Q, R,
                    zeta_target: float = 0.95, tol: float = 1e-6,
                    max_retries: int = 10, backoff: float = 1.25,
                    r_scale: float = 1.0) -> TerminalIngredients:
    """Terminal pair from a Riccati gain plus a contraction line search.

    K comes from the discrete Riccati equation at the central vertex (with
    control weight r_scale * R; moderating the gain keeps the terminal set
    from becoming input-limited). The plain Riccati cost is tried first, so
    a single-vertex problem returns the exact Riccati pair. Otherwise
    candidate contraction factors are scanned from strong to weak: each zeta
    gives P0 from the Lyapunov equation of the zeta-scaled loop, and P0 is
    scaled by the smallest factor restoring the decrease inequality at every
    vertex (scaling preserves the contraction factor and enlarges the
    decrease margin). If nothing below zeta_target certifies, the state
    weight is scaled up (backoff^k Q) and the search repeats.
    """
    from scipy.linalg import solve_discrete_lyapunov
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    vertex_setpoints = [np.atleast_1d(np.asarray(y, float)) for y in vertex_setpoints]
    center = np.mean(vertex_setpoints, axis=0)
    A0, B0, _, _ = linearize_at(model, center)
    AB = [linearize_at(model, y)[:2] for y in vertex_setpoints]
    last = None

    def certified(K, P):
        nonlocal last
        checks = verify_gain(model, vertex_setpoints, K, P, Q, R)
        worst_dec = max(c.decrease_eig for c in checks)
        worst_zeta = max(c.zeta for c in checks)
        last = (worst_dec, worst_zeta)
        if worst_dec <= tol and worst_zeta < zeta_target:
            return TerminalIngredients(K=K, P=P, zeta=worst_zeta)
        return None

    for k in range(max_retries):
        Qs = (backoff ** k) * Q
        Rs = r_scale * R
        try:
            P_ric = solve_discrete_are(A0, B0, Qs, Rs)
        except Exception as exc:
            raise SynthesisFailedError(
                f"Riccati solve failed at the central vertex: {exc}") from exc
        K = -np.linalg.solve(Rs + B0.T @ P_ric @ B0, B0.T @ P_ric @ A0)
        ing = certified(K, P_ric)
        if ing is not None:
            return ing
        QK = Q + K.T @ R @ K
        rho_max = max(max(abs(np.linalg.eigvals(A + B @ K))) for A, B in AB)
        zeta_floor = min(rho_max**2 * 1.05, zeta_target)
        for zeta in np.linspace(zeta_floor, zeta_target, 8):
            AKs = (A0 + B0 @ K) / np.sqrt(zeta)
            if max(abs(np.linalg.eigvals(AKs))) >= 0.999:
                continue
            P0 = solve_discrete_lyapunov(AKs.T, QK)
            P0 = 0.5 * (P0 + P0.T)
            AKPAKs = [(A + B @ K).T @ P0 @ (A + B @ K) for A, B in AB]
            if max(_gen_eig_max(M, P0) for M in AKPAKs) >= 1.0 - 1e-9:
                continue
            tau = 1.02 * max(1.0, max(_gen_eig_max(QK, P0 - M) for M in AKPAKs))
            ing = certified(K, tau * P0)
            if ing is not None:
                return ing
    raise SynthesisFailedError(
        f"no certified pair after {max_retries} weight backoffs; "
        f"last worst decrease eig {last[0]:.4g}, worst zeta {last[1]:.4g}"
        if last else "no stabilizing Riccati gain found")


def _sphere_directions(n: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # include axis directions deterministically
    axes = np.vstack([np.eye(n), -np.eye(n)])
    return np.vstack([axes, dirs])


def ellipsoid_boundary(P, rho: float, directions) -> np.ndarray:
    """Points e = sqrt(rho) L'^{-1} s on { e' P e = rho }, P = L L'."""
    L = cholesky(P, lower=True)
    return np.sqrt(rho) * np.linalg.solve(L.T, directions.T).T


@dataclass
class LyapunovReport:
    max_residual: float
    worst_ys: np.ndarray
    worst_x: np.ndarray
    n_samples: int
    tolerance: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tolerance


def verify_lyapunov_decrease(model, maps: EquilibriumMaps, ing: TerminalIngredients,
                             Q, R, ys_grid, n_samples: int = 10000,
                             rho: float | None = None, kappa_omega: float = 1.0,
                             seed: int = 0, tolerance: float = 1e-8) -> LyapunovReport:
    """Sampled one-step cost decrease inside Omega(y_s) = { V_f <= rho*kappa }.

    residual = V_f(f(x, pi(y_s, x, v_f), 0) - x_s) - V_f(x - x_s)
               + (x - x_s)'Q(x - x_s) + (v_f - v_s)'R(v_f - v_s),
    maximized over samples; the terminal input is v_f(y_s) = g_v(y_s).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    rho_eff = (rho if rho is not None else ing.rho if ing.rho is not None else 1.0)
    level = rho_eff * kappa_omega
    ys_grid = [np.atleast_1d(np.asarray(y, float)) for y in ys_grid]
    per_ys = max(1, n_samples // len(ys_grid))
    worst = -np.inf
    worst_ys = ys_grid[0]
    worst_x = None
    total = 0
    for idx, y_s in enumerate(ys_grid):
        x_s, u_s = solve_equilibrium(model, y_s)
        v_f = u_s                                   # g_v = g_u under the affine policy
        dirs = _sphere_directions(model.n, per_ys, seed + idx)
        rng = np.random.default_rng(seed + 7919 + idx)
        radii = rng.random(len(dirs)) ** (1.0 / model.n)
        radii[: 2 * model.n] = 1.0                   # axis points stay on the boundary
        E = ellipsoid_boundary(ing.P, level, dirs) * radii[:, None]
        X = x_s + E
        U = E @ ing.K.T + v_f                        # K (x - x_s) + v_f
        Xp = model.step_batch(X, U, np.zeros((len(X), model.r)))
        Ep = Xp - x_s
        vf_next = np.einsum("ni,ij,nj->n", Ep, ing.P, Ep)
        vf_now = np.einsum("ni,ij,nj->n", E, ing.P, E)
        stage = np.einsum("ni,ij,nj->n", E, Q, E)    # v_f - v_s = 0
        res = vf_next - vf_now + stage
        j = int(np.argmax(res))
        total += len(X)
        if res[j] > worst:
            worst = float(res[j])
            worst_ys, worst_x = y_s, X[j]
    return LyapunovReport(worst, worst_ys, worst_x, total, tolerance)


def _level_cap(P, K, x_s, u_s, state_box: Hyperbox, input_box: Hyperbox) -> float:
    """Largest rho with { V_f <= rho } x {policy input} inside the boxes.

    max |e_i| over the level set is sqrt(rho * (P^-1)_ii) and max |(K e)_j|
    is sqrt(rho * (K P^-1 K')_jj), so the cap is exact for boxes.
    """
    Pinv = np.linalg.inv(P)
    diag_x = np.diag(Pinv)
    diag_u = np.diag(K @ Pinv @ K.T)
    room_lo = x_s - state_box.lower
    room_hi = state_box.upper - x_s
    if np.any(room_lo <= 0) or np.any(room_hi <= 0):
        return 0.0
    room_x = np.minimum(room_lo, room_hi)
    cap = float(np.min(room_x**2 / np.maximum(diag_x, 1e-300)))
    ulo = u_s - input_box.lower
    uhi = input_box.upper - u_s
    if np.any(ulo <= 0) or np.any(uhi <= 0):
        return 0.0
    room_u = np.minimum(ulo, uhi)
    pos = diag_u > 1e-300
    if np.any(pos):
        cap = min(cap, float(np.min(room_u[pos]**2 / diag_u[pos])))
    return cap


def p_norm_of_box(P, box: Hyperbox) -> float:
    """max over the box of sqrt(x' P x); attained at a corner for P >= 0."""
    corners = box.corners()
    return float(np.sqrt(np.max(np.einsum("ni,ij,nj->n", corners, P, corners))))


def size_terminal_level(model, maps: EquilibriumMaps, ing: TerminalIngredients,
                        constraints: TightenedConstraints, region: SetpointRegion,
                        F_pre: Hyperbox, n_ys: int = 9, n_dirs: int = 1024,
                        seed: int = 0, shrink: float = 0.97, max_shrink: int = 120,
                        rho_min: float = 1e-6):
    """Largest certified level rho for the terminal set family.

    Scans down from the analytic in-box cap; at each candidate the inflated
    set Omega (level (sqrt(rho) + |F(N_p-1)|_P)^2) must fit the stage-(N_p-1)
    boxes, and sampled Omega boundary/interior points must map into the rho
    level set in one terminal-policy step. Returns (rho, kappa_omega).
    """
    N_p = constraints.horizon
    ys_samples = list(region.vertices)
    rng = np.random.default_rng(seed)
    ys_samples += list(region.sample(rng, max(0, n_ys - len(ys_samples))))
    eqs = [(np.atleast_1d(np.asarray(y, float)),) + solve_equilibrium(model, y)
           for y in ys_samples]

    cap = min(_level_cap(ing.P, ing.K, x_s, u_s,
                         constraints.state_boxes[N_p], constraints.input_boxes[N_p])
              for _, x_s, u_s in eqs)
    if cap <= rho_min:
        raise TerminalDesignError(
            f"terminal level cap {cap:.3g} below rho_min; setpoint region sits "
            "too close to the tightened constraints")
    f_norm = p_norm_of_box(ing.P, F_pre)
    dirs = _sphere_directions(model.n, n_dirs, seed)

    rho = cap * 0.999
    for _ in range(max_shrink):
        if rho <= rho_min:
            break
        rho_omega = (np.sqrt(rho) + f_norm) ** 2
        ok = True
        for y_s, x_s, u_s in eqs:
            # Omega x {policy input} inside the stage-(N_p - 1) boxes
            if rho_omega > _level_cap(ing.P, ing.K, x_s, u_s,
                                      constraints.state_boxes[N_p - 1],
                                      constraints.input_boxes[N_p - 1]):
                ok = False
                break
            # one-step map of Omega boundary lands in the rho level set
            E = ellipsoid_boundary(ing.P, rho_omega, dirs)
            X = x_s + E
            U = E @ ing.K.T + u_s
            Xp = model.step_batch(X, U, np.zeros((len(X), model.r)))
            Ep = Xp - x_s
            if np.max(np.einsum("ni,ij,nj->n", Ep, ing.P, Ep)) > rho:
                ok = False
                break
        if ok:
            return float(rho), float(rho_omega / rho)
        rho *= shrink
    raise TerminalDesignError(
        f"no level in [{rho_min:.1e}, {cap:.3g}] certifies invariance; "
        "the inflation F(N_p-1) is too large for the achieved contraction")


def check_assumption9(T, ing: TerminalIngredients, L_g: float, s_max: float = None):
    """Joint offset/terminal-cost constants for quadratic costs.

    With alpha_O(s) = lambda_min(T) s^2 and alpha_f = alpha_f_bar s^2 both
    ratio infima reduce to the same constant; positivity is the requirement.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    lam_min = float(np.linalg.eigvalsh(T).min())
    if lam_min <= 0.0 or L_g <= 0.0:
        return 0.0, 0.0, False
    b = lam_min / (4.0 * ing.alpha_f_bar * L_g**2)
    return b, b, b > 0.0
