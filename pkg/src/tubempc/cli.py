"""Command-line entry point.

Subcommands: lipschitz, tubes, terminal, yt, solve, simulate, batch, plot.
Exit codes: 0 success, 2 configuration error, 3 certification or feasibility
failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import reference
from .config import Config, ConfigError, matrix_to_csv_block
from .equilibria import EmptyRegionError, best_setpoint
from .lipschitz import SampleRegion, estimate_constants, verify_constants, \
    LipschitzMatrices
from .ocp import InfeasibleProblemError, solve
from .pipeline import build_artifacts, build_model, candidate_rectangle, setpoint_grid
from .policy import AffinePolicy
from .sim import Scenario, ScenarioInfeasibleError, compute_metrics, grid_pairs, \
    run_batch, run_closed_loop
from .svgplot import LineChart
from .terminal import SynthesisFailedError, TerminalDesignError, synthesize_gain, \
    verify_gain
from .tubes import HorizonTooLongError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CERTIFY = 3


def _load_config(args) -> Config:
    if args.config:
        with open(args.config) as fh:
            cfg = Config.from_yaml(fh.read())
    else:
        cfg = Config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    return cfg.validate()


def _outdir(cfg: Config) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def cmd_lipschitz(cfg: Config, args) -> int:
    from .equilibria import EquilibriumMaps
    model = build_model(cfg)
    maps = EquilibriumMaps(model)
    out = _outdir(cfg)
    ys_points = np.array(setpoint_grid(cfg, 3))
    region = SampleRegion(model.state_box, model.input_box, model.dist_box, ys_points)

    if args.inject_paper_values:
        K = reference.K_REF
    else:
        from .config import parse_matrix
        K = parse_matrix(cfg.terminal.inject_K)
        if K is None:
            Q, R, _ = cfg.weight_matrices()
            K = synthesize_gain(model, maps, setpoint_grid(cfg), Q, R,
                                zeta_target=cfg.terminal.zeta_target).K
    policy = AffinePolicy(K=K, maps=maps)

    if args.verify_only or args.inject_paper_values:
        cand = LipschitzMatrices(reference.LX_TABLE, reference.LV_TABLE, reference.LW_TABLE) \
            if args.inject_paper_values else LipschitzMatrices(
                *(np.asarray(m) for m in (cfg.lipschitz.inject_Lx, cfg.lipschitz.inject_Lv,
                                          cfg.lipschitz.inject_Lw)))
        rep = verify_constants(model, policy, region, cand,
                               samples=cfg.lipschitz.verify_samples, seed=cfg.seed + 1)
        print(f"verification over {rep.n_pairs} pairs: max residual {rep.max_residual:.3e} "
              f"({'PASS' if rep.passed else 'FAIL'})")
        for i, r in enumerate(rep.per_row):
            print(f"  row {i + 1}: residual {r:+.3e}")
        return EXIT_OK if rep.passed else EXIT_CERTIFY

    L = estimate_constants(model, policy, region, budget=cfg.lipschitz.budget, seed=cfg.seed)
    for name, M in (("Lx", L.Lx), ("Lv", L.Lv), ("Lw", L.Lw)):
        path = os.path.join(out, f"{name}.csv")
        with open(path, "w") as fh:
            fh.write(matrix_to_csv_block(M) + "\n")
        print(f"wrote {path}")
        print(matrix_to_csv_block(M))
    ok = L.certificate.certified
    print(f"certified: {ok} (worst fresh-sample residual "
          f"{np.max(L.certificate.max_residual_per_row):.3e})")
    return EXIT_OK if ok else EXIT_CERTIFY


def _build(cfg: Config, args):
    return build_artifacts(cfg, out_dir=cfg.output_dir,
                           inject_reference=args.inject_paper_values,
                           log=print)


def cmd_tubes(cfg: Config, args) -> int:
    art = _build(cfg, args)
    out = _outdir(cfg)
    path = os.path.join(out, "tubes.csv")
    with open(path, "w") as fh:
        fh.write(art.tubes.table())
    print(art.tubes.table())
    print(f"wrote {path}")
    return EXIT_OK


def cmd_terminal(cfg: Config, args) -> int:
    art = _build(cfg, args)
    out = _outdir(cfg)
    Q, R, _ = cfg.weight_matrices()
    checks = verify_gain(art.model, setpoint_grid(cfg), art.ingredients.K,
                         art.ingredients.P, Q, R)
    worst = max(c.decrease_eig for c in checks)
    zeta = max(c.zeta for c in checks)
    print(f"decrease inequality worst eigenvalue: {worst:+.4e}")
    print(f"contraction factor over vertices:     {zeta:.4f}")
    print(f"terminal level rho:                   {art.ingredients.rho:.4f}")
    path = os.path.join(out, "terminal.yaml")
    import yaml
    with open(path, "w") as fh:
        yaml.safe_dump({
            "K": art.ingredients.K.tolist(), "P": art.ingredients.P.tolist(),
            "rho": float(art.ingredients.rho),
            "zeta": float(zeta), "decrease_worst_eig": float(worst)}, fh)
    print(f"wrote {path}")
    if args.verify_only:
        return EXIT_OK if worst <= 1e-6 else EXIT_CERTIFY
    return EXIT_OK


def cmd_yt(cfg: Config, args) -> int:
    art = _build(cfg, args)
    out = _outdir(cfg)
    path = os.path.join(out, "yt_vertices.csv")
    with open(path, "w") as fh:
        fh.write(matrix_to_csv_block(art.region.vertices, decimals=6) + "\n")
    print(f"feasible-setpoint region: {len(art.region.vertices)} vertices")
    print(matrix_to_csv_block(art.region.vertices, decimals=4))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_solve(cfg: Config, args) -> int:
    art = _build(cfg, args)
    x0 = np.asarray([float(v) for v in args.x0.split(",")]) if args.x0 \
        else np.asarray(cfg.scenario.x0, float)
    y_t = np.asarray([float(v) for v in args.yt.split(",")]) if args.yt \
        else np.asarray(cfg.scenario.schedule[0][1], float)
    sol = solve(art.problem, x0, y_t)
    print(f"status:  {sol.status} ({sol.iterations} iterations, "
          f"kkt {sol.kkt_residual:.2e})")
    print(f"cost:    {sol.cost:.6f}")
    print(f"y_s:     {np.round(sol.y_s, 6).tolist()}")
    print(f"v(0):    {np.round(sol.v_seq[0], 6).tolist()}")
    if args.trajectory:
        out = _outdir(cfg)
        path = os.path.join(out, "predicted.csv")
        with open(path, "w") as fh:
            fh.write("j," + ",".join(f"x{i+1}" for i in range(art.model.n)) + "\n")
            for j, row in enumerate(sol.predicted_states):
                fh.write(f"{j}," + ",".join(f"{v:.12g}" for v in row) + "\n")
        print(f"wrote {path}")
    return EXIT_OK


def _trace_svgs(trace, model, out, stem):
    t = trace.t_min
    chart = LineChart(title="state trajectories", xlabel="time [min]", ylabel="level [m]")
    for i in range(model.n):
        chart.add_series(t, trace.x[:, i], label=f"x{i+1}")
    for i in range(model.p):
        chart.add_series(t, trace.y_t[:, i], label=f"yt{i+1}", dash="5,4")
    chart.add_hline(model.state_box.lower.min())
    chart.add_hline(model.state_box.upper.max())
    p1 = os.path.join(out, f"{stem}_states.svg")
    chart.save(p1)
    chart = LineChart(title="input trajectories", xlabel="time [min]",
                      ylabel="flow [m^3/h]")
    for j in range(model.m):
        chart.add_series(t, trace.u[:, j], label=f"u{j+1}")
        chart.add_hline(model.input_box.lower[j])
        chart.add_hline(model.input_box.upper[j])
    p2 = os.path.join(out, f"{stem}_inputs.svg")
    chart.save(p2)
    return p1, p2


def _scenario_from_config(cfg: Config) -> Scenario:
    sc = cfg.scenario
    return Scenario(w_values=np.asarray(sc.w_values, float),
                    x0=np.asarray(sc.x0, float),
                    schedule=[(t, np.asarray(y, float)) for t, y in sc.schedule],
                    duration_min=sc.duration_min)


def cmd_simulate(cfg: Config, args) -> int:
    art = _build(cfg, args)
    scenario = _scenario_from_config(cfg)
    out = _outdir(cfg)
    trace = run_closed_loop(art.problem, scenario)
    metrics = compute_metrics(trace, art.problem, scenario.schedule)
    path = os.path.join(out, "trace.csv")
    with open(path, "w") as fh:
        fh.write(trace.to_csv())
    p1, p2 = _trace_svgs(trace, art.model, out, "trace")
    print(f"steps: {len(trace)}, violations: {metrics.violation_steps}, "
          f"max violation: {metrics.max_violation:.3e}, "
          f"fallback steps: {metrics.fallback_steps}")
    for seg in metrics.segments:
        print(f"  target {np.round(seg.y_t, 3).tolist()}: final error "
              f"{seg.final_output_error:.5f}, W-descent violations "
              f"{seg.w_descent_violations}")
    print(f"wrote {path}, {p1}, {p2}")
    return EXIT_OK


def cmd_batch(cfg: Config, args) -> int:
    art = _build(cfg, args)
    scenario = _scenario_from_config(cfg)
    out = _outdir(cfg)
    pairs = grid_pairs(cfg.batch.w_axis)
    workers = cfg.batch.workers or None
    report = run_batch(art.problem, scenario, pairs, n_workers=workers,
                       keep_traces=True)
    for i, tr in enumerate(report.traces):
        with open(os.path.join(out, f"trace_{i:03d}.csv"), "w") as fh:
            fh.write(tr.to_csv())
    t = report.traces[0].t_min
    chart = LineChart(title=f"state envelopes over {report.n_scenarios} scenarios",
                      xlabel="time [min]", ylabel="level [m]")
    for i in range(art.model.n):
        chart.add_band(t, report.x_envelope[0][:, i], report.x_envelope[1][:, i],
                       color=["#1f77b4", "#d62728", "#2ca02c", "#9467bd"][i % 4])
    chart.save(os.path.join(out, "batch_states.svg"))
    chart = LineChart(title="input envelopes", xlabel="time [min]", ylabel="flow [m^3/h]")
    for j in range(art.model.m):
        chart.add_band(t, report.u_envelope[0][:, j], report.u_envelope[1][:, j],
                       color=["#1f77b4", "#d62728"][j % 2])
        chart.add_hline(art.model.input_box.lower[j])
        chart.add_hline(art.model.input_box.upper[j])
    chart.save(os.path.join(out, "batch_inputs.svg"))
    lines = [
        f"scenarios:        {report.n_scenarios}",
        f"total steps:      {report.total_steps}",
        f"violation steps:  {report.violation_steps}",
        f"max violation:    {report.max_violation:.3e}",
        f"fallback steps:   {report.fallback_steps}",
        f"runtime:          {report.runtime_s:.1f} s",
    ]
    for y_t, err in report.per_segment_max_error:
        lines.append(f"segment {np.round(y_t, 3).tolist()}: max final error {err:.5f}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "batch_report.txt"), "w") as fh:
        fh.write(text)
    print(text)
    return EXIT_OK if report.violation_steps == 0 else EXIT_CERTIFY


def cmd_plot(cfg: Config, args) -> int:
    out = _outdir(cfg)
    path = args.trace or os.path.join(out, "trace.csv")
    if not os.path.isfile(path):
        print(f"no trace file at {path}", file=sys.stderr)
        return EXIT_CONFIG
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding=None)
    model = build_model(cfg)
    t = data["t_min"]
    chart = LineChart(title="state trajectories", xlabel="time [min]", ylabel="level [m]")
    for i in range(model.n):
        chart.add_series(t, data[f"x{i+1}"], label=f"x{i+1}")
    p1 = os.path.join(out, "plot_states.svg")
    chart.save(p1)
    chart = LineChart(title="input trajectories", xlabel="time [min]", ylabel="flow [m^3/h]")
    for j in range(model.m):
        chart.add_series(t, data[f"u{j+1}"], label=f"u{j+1}")
    p2 = os.path.join(out, "plot_inputs.svg")
    chart.save(p2)
    print(f"wrote {p1}, {p2}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tubempc",
        description="Tube-based robust MPC for setpoint tracking: design, "
                    "certification, and closed-loop simulation.")
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--verify-only", action="store_true",
                        help="verify injected values instead of computing")
    parser.add_argument("--inject-paper-values", action="store_true",
                        help="use the published reference design values")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lipschitz", help="estimate/verify component-wise constants")
    sub.add_parser("tubes", help="print and write the tube table")
    sub.add_parser("terminal", help="synthesize/verify terminal ingredients")
    sub.add_parser("yt", help="build the feasible-setpoint region")
    p_solve = sub.add_parser("solve", help="solve one tracking problem")
    p_solve.add_argument("--x0", help="comma-separated initial state")
    p_solve.add_argument("--yt", help="comma-separated target output")
    p_solve.add_argument("--trajectory", action="store_true",
                         help="also write the predicted trajectory CSV")
    sub.add_parser("simulate", help="run the configured closed-loop scenario")
    sub.add_parser("batch", help="run the disturbance-grid scenario batch")
    p_plot = sub.add_parser("plot", help="re-render SVGs from a trace CSV")
    p_plot.add_argument("--trace", help="trace CSV path")

    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    handlers = {
        "lipschitz": cmd_lipschitz, "tubes": cmd_tubes, "terminal": cmd_terminal,
        "yt": cmd_yt, "solve": cmd_solve, "simulate": cmd_simulate,
        "batch": cmd_batch, "plot": cmd_plot,
    }
    try:
        return handlers[args.command](cfg, args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HorizonTooLongError, EmptyRegionError, SynthesisFailedError,
            TerminalDesignError, InfeasibleProblemError, ScenarioInfeasibleError) as exc:
        print(f"certification/feasibility failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFY


if __name__ == "__main__":
    sys.exit(main())
