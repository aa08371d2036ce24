"""Discrete-time perturbed plant abstraction and a fixed-step RK4 discretizer.

Plants are plain classes (not closures) so they can be pickled into
batch-simulation workers.
"""
from __future__ import annotations

import numpy as np

from .boxes import Hyperbox


class IntegrationError(RuntimeError):
    """Non-finite value produced inside an RK4 stage evaluation."""


class DomainError(ValueError):
    """Model evaluated outside its physical domain (e.g. negative level in a sqrt)."""


def rk4_step(ode, x, u, w, ts: float, substeps: int = 1):
    """One sampling period of the classical 4th-order Runge-Kutta scheme.

    ode(x, u, w) -> dx/dt. The zero-order-held input and disturbance are
    constant across the stages. substeps > 1 subdivides the period.
    """
    if ts <= 0:
        raise ValueError(f"ts must be positive, got {ts}")
    h = ts / substeps
    x = np.asarray(x, dtype=float)
    for step in range(substeps):
        k1 = np.asarray(ode(x, u, w), dtype=float)
        k2 = np.asarray(ode(x + 0.5 * h * k1, u, w), dtype=float)
        k3 = np.asarray(ode(x + 0.5 * h * k2, u, w), dtype=float)
        k4 = np.asarray(ode(x + h * k3, u, w), dtype=float)
        for name, k in (("k1", k1), ("k2", k2), ("k3", k3), ("k4", k4)):
            if not np.all(np.isfinite(k)):
                raise IntegrationError(f"non-finite stage {name} in substep {step}")
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def rk4_step_with_jacobians(ode, ode_jacobians, x, u, w, ts: float, substeps: int = 1):
    """RK4 step together with d(next x)/dx and d(next x)/du.

    ode_jacobians(x, u, w) -> (A, B) of the continuous field; the discrete
    Jacobians are propagated exactly through the stage evaluations, so they
    are the derivatives of the RK4 map itself (not a matrix exponential).
    """
    h = ts / substeps
    x = np.asarray(x, dtype=float)
    n = x.size
    Fx = np.eye(n)
    Fu = np.zeros((n, np.atleast_1d(u).size))
    for _ in range(substeps):
        k1 = np.asarray(ode(x, u, w), dtype=float)
        A1, B1 = ode_jacobians(x, u, w)
        x2 = x + 0.5 * h * k1
        k2 = np.asarray(ode(x2, u, w), dtype=float)
        A2, B2 = ode_jacobians(x2, u, w)
        x3 = x + 0.5 * h * k2
        k3 = np.asarray(ode(x3, u, w), dtype=float)
        A3, B3 = ode_jacobians(x3, u, w)
        x4 = x + h * k3
        k4 = np.asarray(ode(x4, u, w), dtype=float)
        A4, B4 = ode_jacobians(x4, u, w)

        I = np.eye(n)
        D1x, D1u = A1, B1
        D2x = A2 @ (I + 0.5 * h * D1x)
        D2u = B2 + 0.5 * h * (A2 @ D1u)
        D3x = A3 @ (I + 0.5 * h * D2x)
        D3u = B3 + 0.5 * h * (A3 @ D2u)
        D4x = A4 @ (I + h * D3x)
        D4u = B4 + h * (A4 @ D3u)

        Sx = I + (h / 6.0) * (D1x + 2 * D2x + 2 * D3x + D4x)
        Su = (h / 6.0) * (D1u + 2 * D2u + 2 * D3u + D4u)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        Fu = Sx @ Fu + Su
        Fx = Sx @ Fx
    return x, Fx, Fu


class PlantModel:
    """Base class: x+ = step(x, u, w), y = output(x, u), with box constraints.

    step/output must be deterministic and total on state_box x input_box x
    dist_box. Subclasses may override step_jacobians with analytic values;
    the default is central finite differences on step().
    """

    n: int
    m: int
    p: int
    r: int
    state_box: Hyperbox
    input_box: Hyperbox
    dist_box: Hyperbox

    def step(self, x, u, w):
        raise NotImplementedError

    def output(self, x, u):
        raise NotImplementedError

    def equilibrium(self, y):
        """Closed-form steady state for output y, or None if unavailable."""
        return None

    def step_jacobians(self, x, u, w, eps: float = 1e-6):
        """(d step/dx, d step/du) by central differences."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        Fx = np.empty((self.n, self.n))
        for i in range(self.n):
            d = np.zeros(self.n)
            d[i] = eps
            Fx[:, i] = (self.step(x + d, u, w) - self.step(x - d, u, w)) / (2 * eps)
        Fu = np.empty((self.n, self.m))
        for i in range(self.m):
            d = np.zeros(self.m)
            d[i] = eps
            Fu[:, i] = (self.step(x, u + d, w) - self.step(x, u - d, w)) / (2 * eps)
        return Fx, Fu

    def dist_jacobian(self, x, u, w, eps: float = 1e-6):
        """d step/dw by central differences."""
        w = np.asarray(w, dtype=float)
        Fw = np.empty((self.n, self.r))
        for i in range(self.r):
            d = np.zeros(self.r)
            d[i] = eps
            Fw[:, i] = (self.step(x, u, w + d) - self.step(x, u, w - d)) / (2 * eps)
        return Fw

    def step_batch(self, X, U, W):
        """step() over rows of (X, U, W); subclasses may vectorize."""
        return np.array([self.step(x, u, w) for x, u, w in zip(X, U, W)])


class OdePlant(PlantModel):
    """Plant defined by a continuous vector field, discretized by RK4."""

    def __init__(self, ode, output_fn, ts, state_box, input_box, dist_box,
                 ode_jacobians=None, substeps: int = 1):
        self._ode = ode
        self._output = output_fn
        self._ode_jacobians = ode_jacobians
        self.ts = float(ts)
        self.substeps = int(substeps)
        self.state_box = state_box
        self.input_box = input_box
        self.dist_box = dist_box
        self.n = state_box.dim
        self.m = input_box.dim
        self.r = dist_box.dim
        self.p = np.atleast_1d(output_fn(state_box.center, input_box.center)).size

    def step(self, x, u, w):
        return rk4_step(self._ode, x, u, w, self.ts, self.substeps)

    def output(self, x, u):
        return np.atleast_1d(np.asarray(self._output(x, u), dtype=float))

    def step_jacobians(self, x, u, w, eps: float = 1e-6):
        if self._ode_jacobians is None:
            return super().step_jacobians(x, u, w, eps)
        _, Fx, Fu = rk4_step_with_jacobians(
            self._ode, self._ode_jacobians, x, u, w, self.ts, self.substeps)
        return Fx, Fu


class LinearPlant(PlantModel):
    """x+ = A x + B u + E w (+ c), y = C x + D u. Used by tests and oracles."""

    def __init__(self, A, B, E=None, C=None, D=None, c=None,
                 state_box=None, input_box=None, dist_box=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        self.n, self.m = A.shape[0], B.shape[1]
        self.A, self.B = A, B
        self.E = np.zeros((self.n, 1)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
        self.r = self.E.shape[1]
        self.C = np.eye(self.n) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        self.p = self.C.shape[0]
        self.D = np.zeros((self.p, self.m)) if D is None else np.atleast_2d(np.asarray(D, dtype=float))
        self.c = np.zeros(self.n) if c is None else np.asarray(c, dtype=float)
        self.ts = 1.0
        big = 1e6
        self.state_box = state_box or Hyperbox.symmetric(np.full(self.n, big))
        self.input_box = input_box or Hyperbox.symmetric(np.full(self.m, big))
        self.dist_box = dist_box or Hyperbox.symmetric(np.full(self.r, big))

    def step(self, x, u, w):
        return self.A @ np.asarray(x, float) + self.B @ np.asarray(u, float) \
            + self.E @ np.asarray(w, float) + self.c

    def step_batch(self, X, U, W):
        return np.asarray(X, float) @ self.A.T + np.asarray(U, float) @ self.B.T \
            + np.asarray(W, float) @ self.E.T + self.c

    def output(self, x, u):
        return self.C @ np.asarray(x, float) + self.D @ np.asarray(u, float)

    def step_jacobians(self, x, u, w, eps: float = 1e-6):
        return self.A.copy(), self.B.copy()

    def dist_jacobian(self, x, u, w, eps: float = 1e-6):
        return self.E.copy()

    def equilibrium(self, y):
        """Solve [[A-I, B], [C, D]] (x,u) = (-c, y) when the block is square."""
        if self.p != self.m:
            return None
        M = np.block([[self.A - np.eye(self.n), self.B], [self.C, self.D]])
        rhs = np.concatenate([-self.c, np.atleast_1d(np.asarray(y, float))])
        sol = np.linalg.solve(M, rhs)
        return sol[:self.n], sol[self.n:]
