"""Component-wise Lipschitz constants of the closed-loop policy dynamics.

For the map (x, v, w) -> f(x, pi(y_s, x, v), w) we certify row-wise constants
(L_x, L_v, L_w) such that every sampled pair satisfies

    |f_i(z) - f_i(z')| <= sum_a Lx[i,a]|dx_a| + sum_b Lv[i,b]|dv_b| + sum_c Lw[i,c]|dw_c|.

Certification is sample-based: a dense deterministic + random pair set is
drawn once, the residual of each row is driven to zero from above by
coordinate descent, and a fresh sample re-verifies the result.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .boxes import Hyperbox
from .policy import AffinePolicy


class NotLipschitzError(RuntimeError):
    """No finite constants certify the sampled pairs (non-finite ratios)."""


@dataclass
class SampleRegion:
    """Domain for pair sampling: constraint boxes plus admissible setpoints."""

    state_box: Hyperbox
    input_box: Hyperbox
    dist_box: Hyperbox
    ys_points: np.ndarray   # rows are setpoints the policy may be centered on

    def __post_init__(self):
        self.ys_points = np.atleast_2d(np.asarray(self.ys_points, dtype=float))


@dataclass
class Certificate:
    n_pairs: int
    seed: int
    max_residual_per_row: np.ndarray
    certified: bool


@dataclass
class LipschitzMatrices:
    Lx: np.ndarray
    Lv: np.ndarray
    Lw: np.ndarray
    certificate: Certificate | None = None

    def __post_init__(self):
        self.Lx = np.atleast_2d(np.asarray(self.Lx, dtype=float))
        self.Lv = np.atleast_2d(np.asarray(self.Lv, dtype=float))
        self.Lw = np.atleast_2d(np.asarray(self.Lw, dtype=float))
        if np.any(self.Lx < 0) or np.any(self.Lv < 0) or np.any(self.Lw < 0):
            raise ValueError("Lipschitz constants must be nonnegative")

    def stacked(self) -> np.ndarray:
        return np.hstack([self.Lx, self.Lv, self.Lw])


@dataclass
class VerificationReport:
    max_residual: float
    per_row: np.ndarray
    witnesses: list          # per row: (z, z') pair achieving that row's residual
    n_pairs: int
    tolerance: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tolerance


def _pair_sample(model, policy: AffinePolicy, region: SampleRegion, n: int, seed: int):
    """Deterministic pair set over the policy coordinates (x, v, w).

    Three families: Sobol global pairs for cross-coupling coverage,
    single-coordinate pairs that isolate one feature at a time (for x this
    means the partner's plant input moves with the policy so v stays put),
    and small-radius local pairs. Every point keeps (x, u, w) inside the
    constraint boxes; features are recomputed from the realized points, so
    clamping never invalidates a pair.

    Returns (D, Phi, Z1, Z2): per-row gap magnitudes D (n_pairs x n), feature
    magnitudes Phi (n_pairs x (n+m+r)), and the raw (x, u, w) pairs for
    witness reporting.
    """
    nx, nu, nw = model.n, model.m, model.r
    dims = nx + nu + nw
    rng = np.random.default_rng(seed)
    sob = qmc.Sobol(d=2 * dims, scramble=True, seed=seed)
    gxs = np.array([policy.maps.gx(y) for y in region.ys_points])
    K = policy.K

    lo = np.concatenate([region.state_box.lower, region.input_box.lower, region.dist_box.lower])
    hi = np.concatenate([region.state_box.upper, region.input_box.upper, region.dist_box.upper])
    span = hi - lo
    xlo, xhi = region.state_box.lower, region.state_box.upper
    ulo, uhi = region.input_box.lower, region.input_box.upper
    wlo, whi = region.dist_box.lower, region.dist_box.upper

    n_global = n // 2
    n_single = n // 4
    n_local = n - n_global - n_single

    m2 = max(1, int(np.ceil(np.log2(max(n_global, 2)))))
    raw = sob.random_base2(m2)[:n_global]
    Z1 = lo + raw[:, :dims] * span
    Z2 = lo + raw[:, dims:] * span

    base = lo + rng.random((n_single + n_local, dims)) * span
    partner = base.copy()
    # single-coordinate pairs in (x, v, w); alternate wide and small steps so
    # the ratio floors approach the sharp partial derivatives
    coords = rng.integers(0, dims, size=n_single)
    mags = (0.05 + 0.95 * rng.random(n_single)) \
        * np.where(np.arange(n_single) % 2 == 0, 1.0, 1e-3)
    signs = np.where(rng.random(n_single) < 0.5, -1.0, 1.0)
    for i in range(n_single):
        k = coords[i]
        delta = signs[i] * mags[i] * span[k]
        if k < nx:
            # move x_k with v fixed: u follows the policy and must stay valid
            kcol = K[:, k]
            dmax = abs(delta)
            for b in range(nu):
                if abs(kcol[b]) > 1e-12:
                    room = (uhi[b] - base[i, nx + b]) if kcol[b] * np.sign(delta) > 0 \
                        else (base[i, nx + b] - ulo[b])
                    dmax = min(dmax, max(room, 0.0) / abs(kcol[b]))
            delta = np.sign(delta) * dmax
            newx = np.clip(base[i, k] + delta, xlo[k], xhi[k])
            delta = newx - base[i, k]
            partner[i, k] = newx
            partner[i, nx:nx + nu] = base[i, nx:nx + nu] + delta * kcol
        elif k < nx + nu:
            partner[i, k] = np.clip(base[i, k] + delta, ulo[k - nx], uhi[k - nx])
        else:
            partner[i, k] = np.clip(base[i, k] + delta, wlo[k - nx - nu], whi[k - nx - nu])
    # small-radius perturbations on all coordinates at once
    local = base[n_single:] + (rng.random((n_local, dims)) * 2 - 1) * (1e-3 * span)
    partner[n_single:] = np.clip(local, lo, hi)

    Z1 = np.vstack([Z1, base])
    Z2 = np.vstack([Z2, partner])
    ys_idx = rng.integers(0, len(region.ys_points), size=len(Z1))

    X1, U1, W1 = Z1[:, :nx], Z1[:, nx:nx + nu], Z1[:, nx + nu:]
    X2, U2, W2 = Z2[:, :nx], Z2[:, nx:nx + nu], Z2[:, nx + nu:]
    F1 = model.step_batch(X1, U1, W1)
    F2 = model.step_batch(X2, U2, W2)
    D = np.abs(F1 - F2)

    # v = u - K (x - g_x(y_s)); identical y_s within each pair
    V1 = U1 - (X1 - gxs[ys_idx]) @ K.T
    V2 = U2 - (X2 - gxs[ys_idx]) @ K.T
    Phi = np.hstack([np.abs(X1 - X2), np.abs(V1 - V2), np.abs(W1 - W2)])
    return D, Phi, Z1, Z2


def _row_residual(D_i, Phi, row):
    return float(np.max(D_i - Phi @ row))


def estimate_constants(model, policy: AffinePolicy, region: SampleRegion,
                       budget: int = 20000, seed: int = 0,
                       passes: int = 3, decay: float = 0.95,
                       refine_steps: int = 8) -> LipschitzMatrices:
    """Certified constants by shrink-until-lost coordinate descent.

    Starts each row at the uniform ratio bound max D_i / ||Phi||_1 (certified
    by construction), then shrinks entries one at a time: multiplicative decay
    while the worst residual stays <= 0, then bisection between the last
    certified and first violating value. Deterministic for a fixed seed.
    """
    D, Phi, _, _ = _pair_sample(model, policy, region, budget, seed)
    n = model.n
    dims = Phi.shape[1]
    phisum = Phi.sum(axis=1)
    keep = phisum > 1e-10          # drop degenerate pairs dominated by fp noise
    D, Phi, phisum = D[keep], Phi[keep], phisum[keep]

    # per-entry floors from coordinate-dominant pairs, then a uniform bump
    # (with margin) so every row starts certified but not exactly binding
    dominant = Phi > 0.99 * phisum[:, None]
    L = np.zeros((n, dims))
    for i in range(n):
        for k in range(dims):
            rows = dominant[:, k]
            if np.any(rows):
                L[i, k] = float(np.max(D[rows, i] / Phi[rows, k]))
        gap = D[:, i] - Phi @ L[i]
        need = float(np.max(gap / phisum, initial=0.0))
        if need > 0.0:
            L[i, :] += 1.02 * need
        if not np.all(np.isfinite(L[i])) or np.max(L[i], initial=0.0) > 1e8:
            raise NotLipschitzError(f"row {i}: sampled bound diverges: {L[i]}")

    for _ in range(passes):
        changed = False
        for i in range(n):
            base = D[:, i] - Phi @ L[i]           # row residual terms, max <= 0
            for k in range(dims):
                good = L[i, k]
                if good == 0.0:
                    continue
                # entry to zero in one shot when the column never binds
                if np.max(base + good * Phi[:, k]) <= 0.0:
                    base = base + good * Phi[:, k]
                    L[i, k] = 0.0
                    changed = True
                    continue
                bad = None
                val = good
                while True:
                    trial = val * decay
                    r = np.max(base + (L[i, k] - trial) * Phi[:, k])
                    if r <= 0.0:
                        val = trial
                        if trial < 1e-14:
                            break
                    else:
                        bad = trial
                        break
                if bad is not None:
                    lo_v, hi_v = bad, val
                    for _ in range(refine_steps):
                        mid = 0.5 * (lo_v + hi_v)
                        if np.max(base + (L[i, k] - mid) * Phi[:, k]) <= 0.0:
                            hi_v = mid
                        else:
                            lo_v = mid
                    val = hi_v
                if val < good:
                    base = base + (L[i, k] - val) * Phi[:, k]
                    L[i, k] = val
                    changed = True
        if not changed:
            break

    mats = LipschitzMatrices(L[:, :n], L[:, n:n + model.m], L[:, n + model.m:])
    report = verify_constants(model, policy, region, mats,
                              samples=budget, seed=seed + 1)
    mats.certificate = Certificate(
        n_pairs=report.n_pairs, seed=seed,
        max_residual_per_row=report.per_row,
        certified=bool(report.max_residual <= 0.0),
    )
    if not mats.certificate.certified:
        # fresh-sample slack repair: inflate rows until the verification
        # sample is covered too, then re-verify
        D2, Phi2, _, _ = _pair_sample(model, policy, region, budget, seed + 1)
        for i in range(n):
            r = _row_residual(D2[:, i], Phi2, L[i])
            if r > 0.0:
                phs = Phi2.sum(axis=1)
                m2 = phs > 1e-12
                bump = float(np.max((D2[m2, i] - Phi2[m2] @ L[i]) / phs[m2]))
                L[i] += max(bump, 0.0) * 1.0000001
        mats = LipschitzMatrices(L[:, :n], L[:, n:n + model.m], L[:, n + model.m:])
        report = verify_constants(model, policy, region, mats,
                                  samples=budget, seed=seed + 1)
        mats.certificate = Certificate(report.n_pairs, seed, report.per_row,
                                       bool(report.max_residual <= 0.0))
    return mats


def verify_constants(model, policy: AffinePolicy, region: SampleRegion,
                     candidate: LipschitzMatrices, samples: int = 100000,
                     seed: int = 12345, tolerance: float = 1e-9) -> VerificationReport:
    """Residual report of a candidate tuple on a fresh pair sample."""
    D, Phi, Z1, Z2 = _pair_sample(model, policy, region, samples, seed)
    Lfull = candidate.stacked()
    res = D - Phi @ Lfull.T      # (pairs, n)
    per_row = res.max(axis=0)
    witnesses = []
    for i in range(model.n):
        j = int(np.argmax(res[:, i]))
        witnesses.append((Z1[j].copy(), Z2[j].copy()))
    return VerificationReport(
        max_residual=float(per_row.max()),
        per_row=per_row,
        witnesses=witnesses,
        n_pairs=len(D),
        tolerance=tolerance,
    )
