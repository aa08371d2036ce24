"""Closed-loop simulation harness: scenarios, traces, batches, and metrics.

A scenario holds a disturbance realization (constant pair or per-step
sequence), an initial state, and a piece-wise constant setpoint schedule.
Traces record everything needed to audit a run: the applied disturbances
stay on the object so the state sequence is exactly replayable.
"""
from __future__ import annotations

import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .equilibria import best_setpoint
from .ocp import InfeasibleProblemError, Solution, TrackingProblem, control_law, \
    shift_candidate, solve


class ScenarioInfeasibleError(RuntimeError):
    """The very first optimal control problem of a run has no feasible point."""


@dataclass
class Scenario:
    w_values: np.ndarray          # (r,) constant or (steps, r) sequence
    x0: np.ndarray
    schedule: list                # [(start_minute, y_t), ...], starting at 0
    duration_min: float

    def __post_init__(self):
        self.w_values = np.asarray(self.w_values, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        self.schedule = [(float(t), np.atleast_1d(np.asarray(y, float)))
                         for t, y in self.schedule]
        times = [t for t, _ in self.schedule]
        if not times or times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must start at 0 and be strictly increasing")
        if self.duration_min <= 0:
            raise ValueError("duration must be positive")

    def disturbance(self, k: int) -> np.ndarray:
        if self.w_values.ndim == 1:
            return self.w_values
        return self.w_values[min(k, len(self.w_values) - 1)]

    def target_at(self, t_min: float) -> np.ndarray:
        y = self.schedule[0][1]
        for t, yt in self.schedule:
            if t <= t_min + 1e-9:
                y = yt
        return y


@dataclass
class Trace:
    t_min: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    y_t: np.ndarray
    y_s: np.ndarray
    cost: np.ndarray
    W: np.ndarray
    status: list
    min_slack: np.ndarray
    w_seq: np.ndarray
    x_final: np.ndarray

    def __len__(self) -> int:
        return len(self.t_min)

    def to_csv(self) -> str:
        n, m, p = self.x.shape[1], self.u.shape[1], self.y.shape[1]
        hdr = (["k", "t_min"]
               + [f"x{i+1}" for i in range(n)] + [f"u{j+1}" for j in range(m)]
               + [f"y{i+1}" for i in range(p)] + [f"yt{i+1}" for i in range(p)]
               + [f"ys{i+1}" for i in range(p)] + ["cost", "W", "status", "min_slack"])
        buf = io.StringIO()
        buf.write(",".join(hdr) + "\n")
        for k in range(len(self)):
            row = [str(k), f"{self.t_min[k]:.6f}"]
            row += [f"{v:.12g}" for v in self.x[k]]
            row += [f"{v:.12g}" for v in self.u[k]]
            row += [f"{v:.12g}" for v in self.y[k]]
            row += [f"{v:.12g}" for v in self.y_t[k]]
            row += [f"{v:.12g}" for v in self.y_s[k]]
            row += [f"{self.cost[k]:.12g}", f"{self.W[k]:.12g}",
                    self.status[k], f"{self.min_slack[k]:.12g}"]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def replay(self, model) -> bool:
        """Re-run the recorded inputs/disturbances; True iff states match exactly."""
        x = self.x[0].copy()
        for k in range(len(self)):
            if not np.array_equal(x, self.x[k]):
                return False
            x = model.step(x, self.u[k], self.w_seq[k])
        return bool(np.array_equal(x, self.x_final))

    def segments(self, schedule) -> list:
        """[(start_index, end_index, y_t)] per schedule entry."""
        out = []
        times = [t for t, _ in schedule] + [np.inf]
        for i, (t, y) in enumerate(schedule):
            idx = np.nonzero((self.t_min >= t - 1e-9) & (self.t_min < times[i + 1] - 1e-9))[0]
            if len(idx):
                out.append((int(idx[0]), int(idx[-1]) + 1, y))
        return out


def run_closed_loop(problem: TrackingProblem, scenario: Scenario) -> Trace:
    """Receding-horizon loop: solve, apply the policy input, step the plant.

    Warm starts come from the one-step candidate shift, so every solve after
    the first has a feasible starting point for any admissible disturbance;
    solver stalls fall back to that candidate instead of aborting. Constraint
    violations are recorded (negative slack), never fatal.
    """
    model = problem.model
    dt_s = getattr(model, "ts", None) or model.params.Ts
    steps = int(round(scenario.duration_min * 60.0 / dt_s))
    n, m, p = model.n, model.m, model.p

    tr = Trace(
        t_min=np.zeros(steps), x=np.zeros((steps, n)), u=np.zeros((steps, m)),
        y=np.zeros((steps, p)), y_t=np.zeros((steps, p)), y_s=np.zeros((steps, p)),
        cost=np.zeros(steps), W=np.zeros(steps), status=[""] * steps,
        min_slack=np.zeros(steps), w_seq=np.zeros((steps, model.r)),
        x_final=np.zeros(n),
    )
    x = scenario.x0.copy()
    warm = None
    y_t_prev = None
    vo_star = 0.0
    for k in range(steps):
        t_min = k * dt_s / 60.0
        y_t = scenario.target_at(t_min)
        if y_t_prev is None or not np.array_equal(y_t, y_t_prev):
            y_star = best_setpoint(y_t, problem.region, problem.T)
            dy = y_star - y_t
            vo_star = float(dy @ problem.T @ dy)
            y_t_prev = y_t
        try:
            sol = solve(problem, x, y_t, warm_start=warm)
        except InfeasibleProblemError as exc:
            if k == 0:
                raise ScenarioInfeasibleError(str(exc)) from exc
            raise
        u = problem.K @ (x - problem.maps.gx(sol.y_s)) + sol.v_seq[0]
        # an input on a box face may sit a solver tolerance outside; project it
        clipped = np.clip(u, model.input_box.lower, model.input_box.upper)
        if np.max(np.abs(clipped - u)) <= problem.feas_tol:
            u = clipped
        w = scenario.disturbance(k)
        tr.t_min[k] = t_min
        tr.x[k] = x
        tr.u[k] = u
        tr.y[k] = model.output(x, u)
        tr.y_t[k] = y_t
        tr.y_s[k] = sol.y_s
        tr.cost[k] = sol.cost
        tr.W[k] = sol.cost - vo_star
        tr.status[k] = sol.status
        tr.min_slack[k] = min(model.state_box.slack(x), model.input_box.slack(u))
        tr.w_seq[k] = w
        x = model.step(x, u, w)
        warm = shift_candidate(problem, sol)
    tr.x_final = x
    return tr


@dataclass
class SegmentMetrics:
    y_t: np.ndarray
    final_output_error: float      # ||y_end - y_s*||
    w_descent_violations: int
    fallback_steps: int


@dataclass
class TraceMetrics:
    segments: list
    max_violation: float           # max(0, -min slack) over the run
    violation_steps: int
    fallback_steps: int

    @property
    def total_w_descent_violations(self) -> int:
        return sum(s.w_descent_violations for s in self.segments)


def compute_metrics(trace: Trace, problem: TrackingProblem, schedule,
                    descent_tol: float = 1e-8) -> TraceMetrics:
    segs = []
    for i0, i1, y_t in trace.segments(schedule):
        y_star = best_setpoint(y_t, problem.region, problem.T)
        w_viol = int(np.sum(np.diff(trace.W[i0:i1]) > descent_tol))
        segs.append(SegmentMetrics(
            y_t=y_t,
            final_output_error=float(np.linalg.norm(trace.y[i1 - 1] - y_star)),
            w_descent_violations=w_viol,
            fallback_steps=sum(1 for s in trace.status[i0:i1] if s == "fallback-candidate"),
        ))
    slack = trace.min_slack
    return TraceMetrics(
        segments=segs,
        max_violation=float(max(0.0, -slack.min())) if len(slack) else 0.0,
        violation_steps=int(np.sum(slack < 0)),
        fallback_steps=sum(1 for s in trace.status if s == "fallback-candidate"),
    )


@dataclass
class BatchReport:
    n_scenarios: int
    total_steps: int
    violation_steps: int
    max_violation: float
    feasible: bool                 # every solve of every scenario had a feasible point
    per_segment_max_error: list    # [(y_t, max over scenarios of final error)]
    fallback_steps: int
    x_envelope: tuple              # (min, max) arrays over scenarios, (steps, n)
    u_envelope: tuple
    runtime_s: float
    traces: list = field(default_factory=list)


def grid_pairs(axis) -> list:
    """Cartesian product of a disturbance axis with itself."""
    axis = list(axis)
    return [(float(w1), float(w2)) for w1 in axis for w2 in axis]


def _run_one(args):
    problem, scenario = args
    trace = run_closed_loop(problem, scenario)
    metrics = compute_metrics(trace, problem, scenario.schedule)
    return trace, metrics


def run_batch(problem: TrackingProblem, base_scenario: Scenario, w_pairs,
              n_workers: int | None = None, keep_traces: bool = False) -> BatchReport:
    """Run one scenario per disturbance pair (in parallel) and aggregate."""
    t0 = time.perf_counter()
    scenarios = [replace(base_scenario, w_values=np.asarray(pair, dtype=float))
                 for pair in w_pairs]
    jobs = [(problem, sc) for sc in scenarios]
    if n_workers is None or n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=1))
    else:
        results = [_run_one(j) for j in jobs]

    traces = [r[0] for r in results]
    metrics = [r[1] for r in results]
    steps = sum(len(t) for t in traces)
    x_min = np.min([t.x for t in traces], axis=0)
    x_max = np.max([t.x for t in traces], axis=0)
    u_min = np.min([t.u for t in traces], axis=0)
    u_max = np.max([t.u for t in traces], axis=0)
    n_seg = len(base_scenario.schedule)
    per_seg = []
    for i in range(n_seg):
        y_t = base_scenario.schedule[i][1]
        per_seg.append((y_t, max(m.segments[i].final_output_error for m in metrics)))
    return BatchReport(
        n_scenarios=len(scenarios),
        total_steps=steps,
        violation_steps=sum(m.violation_steps for m in metrics),
        max_violation=max(m.max_violation for m in metrics),
        feasible=True,
        per_segment_max_error=per_seg,
        fallback_steps=sum(m.fallback_steps for m in metrics),
        x_envelope=(x_min, x_max),
        u_envelope=(u_min, u_max),
        runtime_s=time.perf_counter() - t0,
        traces=traces if keep_traces else [],
    )
