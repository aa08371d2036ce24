"""Four-tank benchmark plant: two pumps feeding four coupled tanks.

States are the four water levels [m], inputs the two pump flows [m^3/h],
and the disturbances are bounded deviations of the two valve splits. The
discrete map is one RK4 step per sampling period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import Hyperbox
from .model import DomainError, PlantModel, rk4_step, rk4_step_with_jacobians


@dataclass
class FourTankParams:
    """Physical parameters and operating box of the four-tank plant.

    The level/flow bounds and the section values are configuration inputs;
    the defaults below are the standard quadruple-tank benchmark numbers.
    """

    S: float = 0.06                    # tank cross-section [m^2]
    a: tuple = (1.31e-4, 1.51e-4, 9.27e-5, 8.82e-5)   # hole sections [m^2]
    gamma_a: float = 0.3               # nominal valve split, pump a [-]
    gamma_b: float = 0.4               # nominal valve split, pump b [-]
    g: float = 9.81                    # gravity [m/s^2]
    Ts: float = 15.0                   # sampling time [s]
    h_min: tuple = (0.2, 0.2, 0.15, 0.15)          # level bounds [m]
    h_max: tuple = (1.36, 1.36, 1.30, 1.30)
    q_min: tuple = (0.0, 0.0)          # flow bounds [m^3/h]
    q_max: tuple = (3.6, 4.0)
    w_bar: tuple = (0.005, 0.005)      # valve-split uncertainty bounds [-]
    substeps: int = 1

    def validate(self):
        if self.S <= 0 or any(ai <= 0 for ai in self.a):
            raise ValueError("tank and hole sections must be strictly positive")
        for gam, wb in ((self.gamma_a, self.w_bar[0]), (self.gamma_b, self.w_bar[1])):
            if not (0.0 < gam - wb and gam + wb < 1.0):
                raise ValueError(f"valve split {gam} +/- {wb} must stay inside (0, 1)")
        if not all(lo < hi for lo, hi in zip(self.h_min, self.h_max)):
            raise ValueError("h_min must be elementwise below h_max")
        if not all(lo < hi for lo, hi in zip(self.q_min, self.q_max)):
            raise ValueError("q_min must be elementwise below q_max")
        if self.Ts <= 0:
            raise ValueError("Ts must be positive")
        return self


class FourTankModel(PlantModel):
    """RK4-discretized four-tank plant with measured outputs (h1, h2)."""

    def __init__(self, params: FourTankParams | None = None):
        self.params = (params or FourTankParams()).validate()
        p = self.params
        self.n, self.m, self.p, self.r = 4, 2, 2, 2
        self.state_box = Hyperbox(np.array(p.h_min), np.array(p.h_max))
        self.input_box = Hyperbox(np.array(p.q_min), np.array(p.q_max))
        self.dist_box = Hyperbox.symmetric(np.array(p.w_bar))
        self._a = np.asarray(p.a, dtype=float)

    def ode(self, x, u, w):
        """Continuous-time level dynamics; raises DomainError on negative levels."""
        p = self.params
        h = np.asarray(x, dtype=float)
        if np.any(h < 0):
            bad = np.nonzero(h < 0)[0].tolist()
            raise DomainError(f"negative level in sqrt for tanks {bad}: h={h}")
        ga = p.gamma_a + w[0]
        gb = p.gamma_b + w[1]
        s = np.sqrt(2.0 * p.g * h)
        a, S = self._a, p.S
        qa, qb = u[0], u[1]
        return np.array([
            -a[0] / S * s[0] + a[2] / S * s[2] + ga / (3600.0 * S) * qa,
            -a[1] / S * s[1] + a[3] / S * s[3] + gb / (3600.0 * S) * qb,
            -a[2] / S * s[2] + (1.0 - gb) / (3600.0 * S) * qb,
            -a[3] / S * s[3] + (1.0 - ga) / (3600.0 * S) * qa,
        ])

    def ode_jacobians(self, x, u, w):
        """Analytic (d ode/dx, d ode/du)."""
        p = self.params
        h = np.asarray(x, dtype=float)
        if np.any(h <= 0):
            raise DomainError(f"level <= 0 in Jacobian: h={h}")
        a, S = self._a, p.S
        ga = p.gamma_a + w[0]
        gb = p.gamma_b + w[1]
        # d sqrt(2 g h)/dh = sqrt(2 g) / (2 sqrt(h)) = g / sqrt(2 g h)
        ds = p.g / np.sqrt(2.0 * p.g * h)
        A = np.zeros((4, 4))
        A[0, 0] = -a[0] / S * ds[0]
        A[0, 2] = a[2] / S * ds[2]
        A[1, 1] = -a[1] / S * ds[1]
        A[1, 3] = a[3] / S * ds[3]
        A[2, 2] = -a[2] / S * ds[2]
        A[3, 3] = -a[3] / S * ds[3]
        B = np.array([
            [ga / (3600.0 * S), 0.0],
            [0.0, gb / (3600.0 * S)],
            [0.0, (1.0 - gb) / (3600.0 * S)],
            [(1.0 - ga) / (3600.0 * S), 0.0],
        ])
        return A, B

    def step(self, x, u, w):
        # scalar RK4 fast path; math.sqrt raises on negative levels, which is
        # exactly the no-silent-clamping contract
        p = self.params
        a, S, tg = self._a, self.params.S, 2.0 * self.params.g
        c1, c2, c3, c4 = a[0] / S, a[1] / S, a[2] / S, a[3] / S
        ga = (p.gamma_a + w[0]) / (3600.0 * S)
        gb = (p.gamma_b + w[1]) / (3600.0 * S)
        na = (1.0 - p.gamma_a - w[0]) / (3600.0 * S)
        nb = (1.0 - p.gamma_b - w[1]) / (3600.0 * S)
        qa, qb = float(u[0]), float(u[1])
        h1, h2, h3, h4 = float(x[0]), float(x[1]), float(x[2]), float(x[3])
        dt = p.Ts / p.substeps
        sqrt = math.sqrt

        def f(h1, h2, h3, h4):
            s1, s2 = sqrt(tg * h1), sqrt(tg * h2)
            s3, s4 = sqrt(tg * h3), sqrt(tg * h4)
            return (-c1 * s1 + c3 * s3 + ga * qa,
                    -c2 * s2 + c4 * s4 + gb * qb,
                    -c3 * s3 + nb * qb,
                    -c4 * s4 + na * qa)

        try:
            for _ in range(p.substeps):
                k1 = f(h1, h2, h3, h4)
                k2 = f(h1 + 0.5 * dt * k1[0], h2 + 0.5 * dt * k1[1],
                       h3 + 0.5 * dt * k1[2], h4 + 0.5 * dt * k1[3])
                k3 = f(h1 + 0.5 * dt * k2[0], h2 + 0.5 * dt * k2[1],
                       h3 + 0.5 * dt * k2[2], h4 + 0.5 * dt * k2[3])
                k4 = f(h1 + dt * k3[0], h2 + dt * k3[1],
                       h3 + dt * k3[2], h4 + dt * k3[3])
                h1 += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
                h2 += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
                h3 += dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
                h4 += dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        except ValueError as exc:
            raise DomainError(f"negative level in sqrt during step: {exc}") from exc
        return np.array([h1, h2, h3, h4])

    def _ode_batch(self, H, U, W):
        p = self.params
        if np.any(H < 0):
            raise DomainError("negative level in sqrt during batch evaluation")
        ga = p.gamma_a + W[:, 0]
        gb = p.gamma_b + W[:, 1]
        s = np.sqrt(2.0 * p.g * H)
        a, S = self._a, p.S
        out = np.empty_like(H)
        out[:, 0] = -a[0] / S * s[:, 0] + a[2] / S * s[:, 2] + ga / (3600.0 * S) * U[:, 0]
        out[:, 1] = -a[1] / S * s[:, 1] + a[3] / S * s[:, 3] + gb / (3600.0 * S) * U[:, 1]
        out[:, 2] = -a[2] / S * s[:, 2] + (1.0 - gb) / (3600.0 * S) * U[:, 1]
        out[:, 3] = -a[3] / S * s[:, 3] + (1.0 - ga) / (3600.0 * S) * U[:, 0]
        return out

    def step_batch(self, X, U, W):
        p = self.params
        h = p.Ts / p.substeps
        X = np.asarray(X, dtype=float).copy()
        U = np.asarray(U, dtype=float)
        W = np.asarray(W, dtype=float)
        for _ in range(p.substeps):
            k1 = self._ode_batch(X, U, W)
            k2 = self._ode_batch(X + 0.5 * h * k1, U, W)
            k3 = self._ode_batch(X + 0.5 * h * k2, U, W)
            k4 = self._ode_batch(X + h * k3, U, W)
            X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return X

    def step_jacobians(self, x, u, w, eps: float = 1e-6):
        _, Fx, Fu = rk4_step_with_jacobians(
            self.ode, self.ode_jacobians, x, u, w, self.params.Ts, self.params.substeps)
        return Fx, Fu

    def output(self, x, u):
        return np.asarray(x, dtype=float)[:2].copy()

    def equilibrium(self, y):
        """Closed-form steady state for output y = (h1, h2).

        Substituting the steady tank-3/4 balances into the tank-1/2 balances
        gives a 2x2 linear system in (qa, qb); h3, h4 then follow from the
        hole equations. Raises DomainError for non-positive targets.
        """
        p = self.params
        y1, y2 = float(y[0]), float(y[1])
        if y1 <= 0.0 or y2 <= 0.0:
            raise DomainError(f"steady output must be positive, got ({y1}, {y2})")
        a = self._a
        tg = 2.0 * p.g
        r1 = 3600.0 * a[0] * math.sqrt(tg * y1)
        r2 = 3600.0 * a[1] * math.sqrt(tg * y2)
        ga, gb = p.gamma_a, p.gamma_b
        det = ga * gb - (1.0 - ga) * (1.0 - gb)
        qa = (gb * r1 - (1.0 - gb) * r2) / det
        qb = (ga * r2 - (1.0 - ga) * r1) / det
        h3 = ((1.0 - gb) * qb / (3600.0 * a[2])) ** 2 / tg
        h4 = ((1.0 - ga) * qa / (3600.0 * a[3])) ** 2 / tg
        return np.array([y1, y2, h3, h4]), np.array([qa, qb])
