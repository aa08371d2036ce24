"""Dense primal active-set solver for strictly convex inequality-constrained QPs.

    minimize   1/2 z' H z + g' z
    subject to A z <= b

Needs a feasible starting point (the SQP always has one: d = 0). The working
set evolves one constraint at a time with a lowest-index tie-break, which
makes solves deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class QPError(RuntimeError):
    pass


@dataclass
class QPResult:
    z: np.ndarray
    lam: np.ndarray          # multipliers, zero off the active set
    active: list
    iterations: int
    converged: bool


def _eq_qp(cho_H, g, A, b, active):
    """Minimize over { z : A_active z = b_active } via the Schur complement."""
    z_free = cho_solve(cho_H, -g)
    if not active:
        return z_free, np.empty(0)
    Aw = A[active]
    bw = b[active]
    Y = cho_solve(cho_H, Aw.T)
    S = Aw @ Y
    rhs = Aw @ z_free - bw
    try:
        lam = np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError:
        lam, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    z = z_free - Y @ lam
    return z, lam


def solve_qp(H, g, A=None, b=None, z0=None, tol: float = 1e-10,
             max_iter: int | None = None, warm_active=None) -> QPResult:
    """Active-set QP solve from a feasible z0 (default: unconstrained minimum
    if it is feasible, otherwise z0 is required). warm_active seeds the
    working set (invalid indices are ignored)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    g = np.asarray(g, dtype=float)
    nz = g.size
    H = 0.5 * (H + H.T) + 1e-12 * np.eye(nz)
    try:
        cho_H = cho_factor(H)
    except np.linalg.LinAlgError as exc:
        raise QPError(f"Hessian not positive definite: {exc}") from exc

    if A is None or len(A) == 0:
        z = cho_solve(cho_H, -g)
        return QPResult(z, np.empty(0), [], 0, True)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    nc = A.shape[0]

    z = cho_solve(cho_H, -g)
    if not np.all(A @ z <= b + tol):
        if z0 is None:
            raise QPError("infeasible unconstrained minimum and no feasible z0 given")
        z = np.asarray(z0, dtype=float).copy()
        viol = A @ z - b
        if np.any(viol > 1e-8):
            raise QPError(f"z0 violates constraints by {viol.max():.3e}")

    if warm_active:
        active = [i for i in warm_active
                  if 0 <= i < nc and A[i] @ z - b[i] > -1e-7][:nz - 1]
    else:
        active = [i for i in range(nc) if A[i] @ z - b[i] > -tol][:nz]
    lam_full = np.zeros(nc)
    if max_iter is None:
        max_iter = 50 + 10 * nc

    for it in range(1, max_iter + 1):
        z_new, lam = _eq_qp(cho_H, g, A, b, active)
        d = z_new - z
        if np.linalg.norm(d, np.inf) <= tol:
            lam_full[:] = 0.0
            for k, i in enumerate(active):
                lam_full[i] = lam[k]
            if lam.size == 0 or np.min(lam) >= -tol:
                return QPResult(z, lam_full, list(active), it, True)
            # drop the most negative multiplier (first index on ties)
            drop = int(np.argmin(lam))
            active.pop(drop)
            continue
        # longest step along d keeping every inactive constraint satisfied
        alpha = 1.0
        blocking = -1
        Ad = A @ d
        resid = b - A @ z
        for i in range(nc):
            if i in active or Ad[i] <= tol:
                continue
            ai = resid[i] / Ad[i]
            if ai < alpha - 1e-14:
                alpha = max(ai, 0.0)
                blocking = i
        z = z + alpha * d
        if blocking >= 0:
            active.append(blocking)
            if len(active) > nz:
                # keep the working set independent; drop oldest beyond capacity
                active.pop(0)
    lam_full[:] = 0.0
    return QPResult(z, lam_full, list(active), max_iter, False)
