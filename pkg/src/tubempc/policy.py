"""Equilibrium-dependent affine feedback policy u = K (x - g_x(y_s)) + v."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibria import EquilibriumMaps


@dataclass
class AffinePolicy:
    K: np.ndarray
    maps: EquilibriumMaps

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))

    def u(self, y_s, x, v):
        return self.K @ (np.asarray(x, float) - self.maps.gx(y_s)) + np.asarray(v, float)

    def v_from_u(self, y_s, x, u):
        return np.asarray(u, float) - self.K @ (np.asarray(x, float) - self.maps.gx(y_s))
