"""Uncertainty-propagation tubes and the tightened constraint sequence.

The worst-case one-step deviation per state dimension is c[:, 0] = Lw @ w_bar;
it propagates through the closed loop as c[:, j] = Lx @ c[:, j-1], and the
accumulated disturbance effect is d[:, j] = sum_{k<j} c[:, k]. The boxes
F(j) = {|x_i| <= c[i, j]} and R(j) = {|x_i| <= d[i, j]} then bound the gap
between nominal and perturbed trajectories, and the stage constraints are
eroded by R(j) (states) and |K| d[:, j] (inputs).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .boxes import EmptyBoxError, Hyperbox
from .lipschitz import LipschitzMatrices


class HorizonTooLongError(RuntimeError):
    """Tightening emptied a stage constraint before the end of the horizon."""

    def __init__(self, stage: int, what: str):
        self.stage = stage
        super().__init__(f"tightened {what} constraint is empty at stage {stage}")


@dataclass
class TubeSystem:
    c: np.ndarray            # (n, N_p + 1) one-step deviation bounds
    d: np.ndarray            # (n, N_p + 1) cumulative bounds, d[:, 0] = 0
    F: list                  # Hyperbox per stage
    R: list                  # Hyperbox per stage, R[0] = {0}
    horizon: int

    def table(self, decimals: int = 4) -> str:
        """CSV rows 'F_i'/'R_i' x dimension over columns j = 0..N_p."""
        lines = ["set,dim," + ",".join(f"j{j}" for j in range(self.horizon + 1))]
        for name, arr in (("F", self.c), ("R", self.d)):
            for i in range(arr.shape[0]):
                vals = ",".join(f"{v:.{decimals}f}" for v in arr[i])
                lines.append(f"{name},{i + 1},{vals}")
        return "\n".join(lines) + "\n"


def build_tubes(L: LipschitzMatrices, w_bar, N_p: int,
                F0_override=None, state_box: Hyperbox | None = None) -> TubeSystem:
    """Deviation tables and box sequences for a horizon of N_p steps.

    F0_override replaces the computed first column c[:, 0] (used to anchor
    the recursion on an externally supplied F(0) row). A warning is emitted
    when the tube outgrows the state box half-width by stage N_p.
    """
    if N_p < 1:
        raise ValueError(f"horizon must be >= 1, got {N_p}")
    w_bar = np.abs(np.asarray(w_bar, dtype=float))
    n = L.Lx.shape[0]
    c = np.zeros((n, N_p + 1))
    c[:, 0] = L.Lw @ w_bar if F0_override is None else np.asarray(F0_override, dtype=float)
    for j in range(1, N_p + 1):
        c[:, j] = L.Lx @ c[:, j - 1]
    d = np.zeros((n, N_p + 1))
    for j in range(1, N_p + 1):
        d[:, j] = d[:, j - 1] + c[:, j - 1]
    F = [Hyperbox.symmetric(c[:, j]) for j in range(N_p + 1)]
    R = [Hyperbox.symmetric(d[:, j]) for j in range(N_p + 1)]
    if state_box is not None and np.any(c[:, N_p] > state_box.half_width):
        warnings.warn(
            f"tube cross-section c[:, {N_p}] = {c[:, N_p]} exceeds the state-box "
            "half-width; the tube swallows the constraint set", RuntimeWarning)
    return TubeSystem(c=c, d=d, F=F, R=R, horizon=N_p)


@dataclass
class TightenedConstraints:
    state_boxes: list        # Hyperbox per stage j = 0..N_p
    input_boxes: list        # Hyperbox per stage (eroded by |K| d[:, j])
    input_margins: np.ndarray  # (m, N_p + 1)
    K: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.state_boxes) - 1


def tighten(state_box: Hyperbox, input_box: Hyperbox, K, tubes: TubeSystem) -> TightenedConstraints:
    """Erode the constraint boxes stage-wise by the tube cross-sections.

    States shrink by d[:, j] per side; inputs by |K| d[:, j], an inner
    approximation of the exact difference in (x, v) space under the affine
    policy. Stage 0 equals the raw constraints.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    absK = np.abs(K)
    state_boxes, input_boxes = [], []
    margins = np.zeros((K.shape[0], tubes.horizon + 1))
    for j in range(tubes.horizon + 1):
        margins[:, j] = absK @ tubes.d[:, j]
        try:
            state_boxes.append(state_box.shrink(tubes.d[:, j]))
        except EmptyBoxError as exc:
            raise HorizonTooLongError(j, "state") from exc
        try:
            input_boxes.append(input_box.shrink(margins[:, j]))
        except EmptyBoxError as exc:
            raise HorizonTooLongError(j, "input") from exc
    return TightenedConstraints(state_boxes, input_boxes, margins, K)


def membership(point, stage: int, y_s, constraints: TightenedConstraints, maps) -> bool:
    """Stage-j membership of (x, v): state in the eroded box and the policy
    input K (x - g_x(y_s)) + v in the eroded input box. Strict (no slack)."""
    x, v = point
    if stage >= len(constraints.state_boxes):
        raise ValueError(f"stage {stage} beyond tightened horizon {constraints.horizon}")
    if not constraints.state_boxes[stage].contains(x):
        return False
    u = constraints.K @ (np.asarray(x, float) - maps.gx(y_s)) + np.asarray(v, float)
    return constraints.input_boxes[stage].contains(u)
