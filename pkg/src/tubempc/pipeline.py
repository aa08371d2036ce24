"""Orchestration: build every controller ingredient from a Config, with caching.

Stage order follows the design's natural dependency chain: plant -> terminal
gain (over the candidate setpoint rectangle) -> Lipschitz constants of the
pre-stabilized loop -> tubes -> tightened constraints -> feasible-setpoint
region -> terminal level. Each computed artifact lands in out_dir/cache keyed
by a hash of the config sections it depends on; unchanged configs reuse them.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import reference
from .boxes import Hyperbox
from .config import Config, ConfigError, parse_matrix
from .equilibria import EquilibriumMaps, SetpointRegion, build_Yt, estimate_gx_lipschitz
from .fourtank import FourTankModel, FourTankParams
from .lipschitz import Certificate, LipschitzMatrices, SampleRegion, estimate_constants, \
    verify_constants
from .ocp import TrackingProblem
from .policy import AffinePolicy
from .terminal import TerminalIngredients, size_terminal_level, synthesize_gain
from .tubes import TightenedConstraints, build_tubes, tighten


@dataclass
class Artifacts:
    model: object
    maps: EquilibriumMaps
    L: LipschitzMatrices
    tubes: object
    tightened: TightenedConstraints
    region: SetpointRegion
    ingredients: TerminalIngredients
    problem: TrackingProblem
    L_g: float
    from_cache: dict = field(default_factory=dict)


def build_model(cfg: Config):
    p = cfg.plant
    if p.kind != "fourtank":
        raise ConfigError(f"unknown plant kind '{p.kind}'")
    params = FourTankParams(
        S=p.S, a=tuple(p.a), gamma_a=p.gamma_a, gamma_b=p.gamma_b, g=p.g, Ts=p.Ts,
        h_min=tuple(p.h_min), h_max=tuple(p.h_max), q_min=tuple(p.q_min),
        q_max=tuple(p.q_max), w_bar=tuple(p.w_bar), substeps=p.substeps)
    return FourTankModel(params)


def candidate_rectangle(cfg: Config) -> Hyperbox:
    return Hyperbox(np.asarray(cfg.region.rect_lower, float),
                    np.asarray(cfg.region.rect_upper, float))


def setpoint_grid(cfg: Config, density: int | None = None) -> list:
    rect = candidate_rectangle(cfg)
    d = density or cfg.terminal.vertex_grid
    axes = [np.linspace(rect.lower[i], rect.upper[i], d) for i in range(rect.dim)]
    return [np.array(pt) for pt in
            np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)]


def _cache_path(out_dir, name, key):
    return os.path.join(out_dir, "cache", f"{name}-{key}.yaml")


def _save_yaml(path, payload):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(payload, fh, sort_keys=False)


def _load_yaml(path):
    if not os.path.isfile(path):
        return None
    with open(path) as fh:
        return yaml.safe_load(fh)


def _mat_out(M):
    return np.asarray(M, dtype=float).tolist()


def build_artifacts(cfg: Config, out_dir: str | None = None,
                    inject_reference: bool = False, log=None) -> Artifacts:
    """Assemble everything a closed-loop run needs, honoring config injections."""
    say = log or (lambda *_: None)
    cfg.validate()
    model = build_model(cfg)
    maps = EquilibriumMaps(model)
    Q, R, T = cfg.weight_matrices()
    N_p = cfg.horizon
    from_cache = {}

    key = cfg.content_hash("plant", "weights", "horizon", "terminal", "region",
                           "lipschitz") + f"-s{cfg.seed}" + ("-ref" if inject_reference else "")

    # terminal gain and cost
    if inject_reference:
        K, P = reference.K_REF.copy(), reference.P_REF.copy()
        ing = TerminalIngredients(K=K, P=P, rho=reference.RHO_REF)
        say("terminal: injected reference K, P, rho")
    elif cfg.terminal.inject_K is not None and cfg.terminal.inject_P is not None:
        ing = TerminalIngredients(K=parse_matrix(cfg.terminal.inject_K),
                                  P=parse_matrix(cfg.terminal.inject_P),
                                  rho=cfg.terminal.inject_rho)
        say("terminal: injected K, P from config")
    else:
        cached = _load_yaml(_cache_path(out_dir, "terminal", key)) if out_dir else None
        if cached:
            ing = TerminalIngredients(K=np.array(cached["K"]), P=np.array(cached["P"]),
                                      zeta=cached.get("zeta"))
            from_cache["terminal"] = True
            say("terminal: loaded from cache")
        else:
            vertices = setpoint_grid(cfg)
            ing = synthesize_gain(model, maps, vertices, Q, R,
                                  zeta_target=cfg.terminal.zeta_target,
                                  r_scale=cfg.terminal.synth_R_scale)
            say(f"terminal: synthesized gain, zeta = {ing.zeta:.4f}")
            if out_dir:
                _save_yaml(_cache_path(out_dir, "terminal", key),
                           {"K": _mat_out(ing.K), "P": _mat_out(ing.P),
                            "zeta": float(ing.zeta)})
    policy = AffinePolicy(K=ing.K, maps=maps)

    # component-wise Lipschitz constants of the pre-stabilized loop
    sample_region = SampleRegion(model.state_box, model.input_box, model.dist_box,
                                 np.array(setpoint_grid(cfg, 3)))
    inj = (reference.LX_TABLE, reference.LV_TABLE, reference.LW_TABLE) if inject_reference \
        else (parse_matrix(cfg.lipschitz.inject_Lx), parse_matrix(cfg.lipschitz.inject_Lv),
              parse_matrix(cfg.lipschitz.inject_Lw))
    if all(m is not None for m in inj):
        L = LipschitzMatrices(*inj)
        say("lipschitz: injected constants")
    else:
        cached = _load_yaml(_cache_path(out_dir, "lipschitz", key)) if out_dir else None
        if cached:
            L = LipschitzMatrices(np.array(cached["Lx"]), np.array(cached["Lv"]),
                                  np.array(cached["Lw"]))
            L.certificate = Certificate(cached["n_pairs"], cached["seed"],
                                        np.array(cached["residuals"]), cached["certified"])
            from_cache["lipschitz"] = True
            say("lipschitz: loaded from cache")
        else:
            L = estimate_constants(model, policy, sample_region,
                                   budget=cfg.lipschitz.budget, seed=cfg.seed)
            say(f"lipschitz: estimated, certified = {L.certificate.certified}")
            if out_dir:
                _save_yaml(_cache_path(out_dir, "lipschitz", key),
                           {"Lx": _mat_out(L.Lx), "Lv": _mat_out(L.Lv),
                            "Lw": _mat_out(L.Lw), "n_pairs": L.certificate.n_pairs,
                            "seed": L.certificate.seed, "certified": L.certificate.certified,
                            "residuals": _mat_out(L.certificate.max_residual_per_row)[0]
                            if np.ndim(L.certificate.max_residual_per_row) else
                            list(map(float, L.certificate.max_residual_per_row))})

    # tubes and tightened constraints
    F0 = reference.F0_TABLE if inject_reference else (
        np.asarray(cfg.tubes.F0_override, float) if cfg.tubes.F0_override is not None else None)
    tubes = build_tubes(L, model.dist_box.upper, N_p, F0_override=F0,
                        state_box=model.state_box)
    tightened = tighten(model.state_box, model.input_box, ing.K, tubes)
    say(f"tubes: R({N_p}) = {np.round(tubes.d[:, N_p], 4)}")

    # feasible-setpoint region
    if cfg.region.inject_vertices is not None:
        verts = parse_matrix(cfg.region.inject_vertices)
        region = SetpointRegion.from_points(verts, epsilon=cfg.region.epsilon)
        say("region: injected vertices")
    else:
        extra = None
        if cfg.region.cap_fraction > 0.0 or ing.rho is not None:
            from .terminal import _level_cap
            from .equilibria import solve_equilibrium as _solve_eq
            if ing.rho is not None:
                rho_target = float(ing.rho)
            else:
                rect = candidate_rectangle(cfg)
                xc, uc = _solve_eq(model, rect.center)
                center_cap = _level_cap(ing.P, ing.K, xc, uc,
                                        tightened.state_boxes[N_p],
                                        tightened.input_boxes[N_p])
                rho_target = cfg.region.cap_fraction * center_cap

            def extra(y, x_s, u_s, _rt=rho_target):
                return _level_cap(ing.P, ing.K, x_s, u_s,
                                  tightened.state_boxes[N_p],
                                  tightened.input_boxes[N_p]) >= _rt
            say(f"region: terminal-fit filter at level {rho_target:.4f}")
        region = build_Yt(model, maps, tightened, N_p, candidate_rectangle(cfg),
                          grid_density=cfg.region.grid_density,
                          epsilon=cfg.region.epsilon,
                          inscribed_box=cfg.region.inscribed_box,
                          extra_filter=extra)
        say(f"region: {len(region.vertices)} hull vertices")

    # terminal level
    if ing.rho is None:
        rho, kappa = size_terminal_level(
            model, maps, ing, tightened, region, tubes.F[N_p - 1],
            n_ys=cfg.terminal.sizing_setpoints, n_dirs=cfg.terminal.sizing_dirs,
            seed=cfg.seed)
        ing.rho = rho
        ing.kappa_omega = kappa
        say(f"terminal: sized rho = {rho:.4f} (kappa_omega = {kappa:.3f})")
    L_g = estimate_gx_lipschitz(maps, region.bounding_box(), seed=cfg.seed)

    problem = TrackingProblem(
        model=model, maps=maps, constraints=tightened, ingredients=ing,
        region=region, N_p=N_p, Q=Q, R=R, T=T,
        stat_tol=cfg.solver.stat_tol, feas_tol=cfg.solver.feas_tol,
        max_iter=cfg.solver.max_iter)
    return Artifacts(model=model, maps=maps, L=L, tubes=tubes, tightened=tightened,
                     region=region, ingredients=ing, problem=problem, L_g=L_g,
                     from_cache=from_cache)
