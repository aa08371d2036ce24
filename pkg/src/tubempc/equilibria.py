"""Steady-state maps, the feasible-setpoint region, and related checks.

Every steady output y_s is assumed to identify a unique equilibrium
(x_s, u_s); the maps g_x, g_u (and g_v for the affine feedback policy)
realize that correspondence, by closed form when the plant provides one
and by a damped Newton iteration otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Hyperbox
from .model import PlantModel


class NoEquilibriumError(RuntimeError):
    """Newton failed to locate a steady state for the requested output."""


class InfeasibleEquilibriumError(RuntimeError):
    """Steady state exists but violates the (margin-shrunk) constraints."""


class EmptyRegionError(RuntimeError):
    """No candidate setpoint survived the tightened-membership filter."""


def newton_equilibrium(model: PlantModel, y_s, x0=None, u0=None,
                       tol: float = 1e-12, max_iter: int = 60):
    """Solve x = f(x, u, 0), h(x, u) = y_s by a damped Newton iteration.

    Jacobians by central differences. Independent of any closed form the
    plant may carry, so it doubles as a cross-check oracle.
    """
    y_s = np.atleast_1d(np.asarray(y_s, dtype=float))
    n, m = model.n, model.m
    x = np.asarray(x0 if x0 is not None else model.state_box.center, dtype=float).copy()
    u = np.asarray(u0 if u0 is not None else model.input_box.center, dtype=float).copy()
    w0 = np.zeros(model.r)

    def residual(x, u):
        return np.concatenate([model.step(x, u, w0) - x,
                               model.output(x, u) - y_s])

    res = residual(x, u)
    for _ in range(max_iter):
        nrm = np.linalg.norm(res)
        if nrm <= tol:
            return x, u
        J = np.empty((n + model.p, n + m))
        eps = 1e-6
        for i in range(n):
            d = np.zeros(n)
            d[i] = eps
            J[:, i] = (residual(x + d, u) - residual(x - d, u)) / (2 * eps)
        for i in range(m):
            d = np.zeros(m)
            d[i] = eps
            J[:, n + i] = (residual(x, u + d) - residual(x, u - d)) / (2 * eps)
        dz, *_ = np.linalg.lstsq(J, -res, rcond=None)
        alpha = 1.0
        for _ in range(30):
            xt, ut = x + alpha * dz[:n], u + alpha * dz[n:]
            try:
                res_t = residual(xt, ut)
            except Exception:
                alpha *= 0.5
                continue
            if np.linalg.norm(res_t) < nrm:
                x, u, res = xt, ut, res_t
                break
            alpha *= 0.5
        else:
            break
    if np.linalg.norm(residual(x, u)) > 1e-10:
        raise NoEquilibriumError(
            f"Newton stalled at residual {np.linalg.norm(residual(x, u)):.3e} for y_s={y_s}")
    return x, u


def solve_equilibrium(model: PlantModel, y_s, margin: float = 0.0,
                      use_newton: bool = False):
    """(x_s, u_s) for steady output y_s; closed form when available.

    margin > 0 additionally requires the equilibrium to sit at least that
    far inside the constraint boxes, raising InfeasibleEquilibriumError
    otherwise.
    """
    y_s = np.atleast_1d(np.asarray(y_s, dtype=float))
    pair = None if use_newton else model.equilibrium(y_s)
    if pair is None:
        x_s, u_s = newton_equilibrium(model, y_s)
    else:
        x_s, u_s = pair
    if margin > 0.0:
        if not (model.state_box.shrink(margin).contains(x_s)
                and model.input_box.shrink(margin).contains(u_s)):
            raise InfeasibleEquilibriumError(
                f"equilibrium for y_s={y_s} violates constraints: x_s={x_s}, u_s={u_s}")
    if not np.all(np.isfinite(x_s)) or not np.all(np.isfinite(u_s)):
        raise NoEquilibriumError(f"non-finite equilibrium for y_s={y_s}")
    return np.asarray(x_s, dtype=float), np.asarray(u_s, dtype=float)


class EquilibriumMaps:
    """Callable steady-state maps g_x, g_u, g_v with finite-difference Jacobians.

    With the affine policy u = K (x - g_x(y_s)) + v the steady policy input
    equals the steady plant input, so g_v coincides with g_u.
    """

    def __init__(self, model: PlantModel, L_g: float | None = None):
        self.model = model
        self.L_g = L_g
        self._cache = {}

    def _pair(self, y_s):
        key = (float(y_s[0]), float(y_s[1])) if len(y_s) == 2 else tuple(map(float, y_s))
        hit = self._cache.get(key)
        if hit is None:
            hit = solve_equilibrium(self.model, y_s)
            if len(self._cache) > 512:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def gx(self, y_s):
        return self._pair(y_s)[0]

    def gu(self, y_s):
        return self._pair(y_s)[1]

    def gv(self, y_s):
        return self.gu(y_s)

    def jacobians(self, y_s, eps: float = 1e-6):
        """(d g_x/d y_s, d g_v/d y_s) by central differences."""
        y_s = np.atleast_1d(np.asarray(y_s, dtype=float))
        p = y_s.size
        Jx = np.empty((self.model.n, p))
        Ju = np.empty((self.model.m, p))
        for i in range(p):
            d = np.zeros(p)
            d[i] = eps
            xp, up = self._pair(y_s + d)
            xm, um = self._pair(y_s - d)
            Jx[:, i] = (xp - xm) / (2 * eps)
            Ju[:, i] = (up - um) / (2 * eps)
        return Jx, Ju


def estimate_gx_lipschitz(maps: EquilibriumMaps, y_box: Hyperbox,
                          n_pairs: int = 2000, seed: int = 0,
                          margin: float = 1.05) -> float:
    """Sampled Lipschitz constant of g_x over y_box, inflated by `margin`."""
    rng = np.random.default_rng(seed)
    ys = y_box.sample(rng, 2 * n_pairs).reshape(n_pairs, 2, y_box.dim)
    worst = 0.0
    for ya, yb in ys:
        dy = np.linalg.norm(ya - yb)
        if dy < 1e-9:
            continue
        dx = np.linalg.norm(maps.gx(ya) - maps.gx(yb))
        worst = max(worst, dx / dy)
    return margin * worst


@dataclass
class Assumption3Report:
    """Nonsingularity of the steady-state Jacobian block over a setpoint grid."""

    min_singular_value: float
    per_point: list  # (y_s, smallest singular value)
    threshold: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.min_singular_value >= self.threshold

    @property
    def offending(self) -> list:
        return [tuple(np.round(y, 6)) for y, s in self.per_point if s < self.threshold]


def check_assumption3(model: PlantModel, y_s_grid, eps: float = 1e-6) -> Assumption3Report:
    """Smallest singular value of [[A - I, B], [C, D]] over equilibrium points.

    Jacobians of f(., ., 0) and h by central differences with a relative
    step; a singular block means the output no longer pins the equilibrium.
    """
    per_point = []
    w0 = np.zeros(model.r)
    for y_s in y_s_grid:
        x_s, u_s = solve_equilibrium(model, y_s)
        n, m = model.n, model.m
        A = np.empty((n, n))
        B = np.empty((n, m))
        C = np.empty((model.p, n))
        D = np.empty((model.p, m))
        for i in range(n):
            d = np.zeros(n)
            d[i] = eps * max(1.0, abs(x_s[i]))
            A[:, i] = (model.step(x_s + d, u_s, w0) - model.step(x_s - d, u_s, w0)) / (2 * d[i])
            C[:, i] = (model.output(x_s + d, u_s) - model.output(x_s - d, u_s)) / (2 * d[i])
        for i in range(m):
            d = np.zeros(m)
            d[i] = eps * max(1.0, abs(u_s[i]))
            B[:, i] = (model.step(x_s, u_s + d, w0) - model.step(x_s, u_s - d, w0)) / (2 * d[i])
            D[:, i] = (model.output(x_s, u_s + d) - model.output(x_s, u_s - d)) / (2 * d[i])
        block = np.block([[A - np.eye(n), B], [C, D]])
        smin = np.linalg.svd(block, compute_uv=False)[-1]
        per_point.append((np.atleast_1d(np.asarray(y_s, float)), float(smin)))
    return Assumption3Report(min(s for _, s in per_point), per_point)


@dataclass
class SetpointRegion:
    """Convex polytope of feasible setpoints: { y : A y <= b }, with vertices."""

    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray
    epsilon: float = 1e-6

    def contains(self, y, tol: float = 1e-9) -> bool:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return bool(np.all(self.A @ y <= self.b + tol))

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounding_box(self) -> Hyperbox:
        return Hyperbox(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Rejection-sample n interior points (vertices as fallback filler)."""
        box = self.bounding_box()
        out = []
        for _ in range(50 * n):
            y = box.sample(rng, 1)[0]
            if self.contains(y):
                out.append(y)
                if len(out) == n:
                    break
        while len(out) < n:
            out.append(self.vertices[len(out) % len(self.vertices)])
        return np.array(out)

    @classmethod
    def from_points(cls, points, epsilon: float = 1e-6) -> "SetpointRegion":
        """Convex hull of the given points as half-planes (outward normals)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or len(pts) < pts.shape[1] + 1:
            raise EmptyRegionError(f"need at least dim+1 points for a solid hull, got {len(pts)}")
        from scipy.spatial import ConvexHull
        hull = ConvexHull(pts)
        A = hull.equations[:, :-1]
        b = -hull.equations[:, -1]
        return cls(A=A, b=b, vertices=pts[hull.vertices], epsilon=epsilon)

    @classmethod
    def from_box(cls, box: Hyperbox, epsilon: float = 1e-6) -> "SetpointRegion":
        d = box.dim
        A = np.vstack([np.eye(d), -np.eye(d)])
        b = np.concatenate([box.upper, -box.lower])
        return cls(A=A, b=b, vertices=box.corners(), epsilon=epsilon)


def build_Yt(model: PlantModel, maps: EquilibriumMaps, tightened, N_p: int,
             candidate_box: Hyperbox, grid_density: int = 12,
             epsilon: float = 1e-6, inscribed_box: bool = False,
             extra_filter=None) -> SetpointRegion:
    """Feasible-setpoint region: grid points whose equilibrium lands inside
    the stage-N_p tightened constraints (with margin epsilon), convexified.

    extra_filter(y, x_s, u_s) -> bool optionally rejects additional points;
    the pipeline uses it to keep only setpoints whose terminal level set fits
    inside the tightened boxes, without which the level would collapse at the
    region boundary. inscribed_box=True returns the largest centered
    axis-aligned box of kept points instead of their convex hull.
    """
    axes = [np.linspace(candidate_box.lower[i], candidate_box.upper[i], grid_density)
            for i in range(candidate_box.dim)]
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    kept = []
    state_box = tightened.state_boxes[N_p].shrink(epsilon)
    input_box = tightened.input_boxes[N_p].shrink(epsilon)
    for y in mesh:
        try:
            x_s, u_s = solve_equilibrium(model, y)
        except Exception:
            continue
        if not (state_box.contains(x_s) and input_box.contains(u_s)):
            continue
        if extra_filter is not None and not extra_filter(y, x_s, u_s):
            continue
        kept.append(y)
    if not kept:
        raise EmptyRegionError("no grid setpoint satisfies the tightened constraints")
    kept = np.array(kept)
    if inscribed_box:
        lo, hi = kept.min(axis=0), kept.max(axis=0)
        return SetpointRegion.from_box(Hyperbox(lo, hi), epsilon=epsilon)
    return SetpointRegion.from_points(kept, epsilon=epsilon)


def best_setpoint(y_t, region: SetpointRegion, T) -> np.ndarray:
    """argmin over the region of (y - y_t)' T (y - y_t); equals y_t inside."""
    y_t = np.atleast_1d(np.asarray(y_t, dtype=float))
    if region.contains(y_t):
        return y_t.copy()
    from .qp import solve_qp
    T = np.atleast_2d(np.asarray(T, dtype=float))
    res = solve_qp(2.0 * T, -2.0 * T @ y_t, region.A, region.b, z0=region.centroid)
    return res.z
