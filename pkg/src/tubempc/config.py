"""Configuration file handling: one human-editable YAML with matrix blocks.

Matrices may be given as nested lists or as multi-line CSV block strings;
results written by the pipeline use the CSV form rounded to a configurable
number of decimals to mirror the tabulated presentation.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml


class ConfigError(ValueError):
    pass


def matrix_to_csv_block(M, decimals: int = 4) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return "\n".join(",".join(f"{v:.{decimals}f}" for v in row) for row in M)


def parse_matrix(value) -> np.ndarray:
    """Accept nested lists, flat lists, or CSV block strings."""
    if value is None:
        return None
    if isinstance(value, str):
        rows = [r.strip() for r in value.strip().splitlines() if r.strip()]
        return np.array([[float(v) for v in r.split(",")] for r in rows])
    arr = np.asarray(value, dtype=float)
    return arr


@dataclass
class PlantConfig:
    kind: str = "fourtank"
    S: float = 0.06
    a: list = field(default_factory=lambda: [1.31e-4, 1.51e-4, 9.27e-5, 8.82e-5])
    gamma_a: float = 0.3
    gamma_b: float = 0.4
    g: float = 9.81
    Ts: float = 15.0
    h_min: list = field(default_factory=lambda: [0.2, 0.2, 0.15, 0.15])
    h_max: list = field(default_factory=lambda: [1.36, 1.36, 1.30, 1.30])
    q_min: list = field(default_factory=lambda: [0.0, 0.0])
    q_max: list = field(default_factory=lambda: [3.6, 4.0])
    w_bar: list = field(default_factory=lambda: [0.005, 0.005])
    substeps: int = 1


@dataclass
class WeightsConfig:
    Q: list = field(default_factory=lambda: [5.0, 2.5, 1.0, 1.0])   # diagonal or matrix
    R: list = field(default_factory=lambda: [0.01, 0.01])
    T: list = field(default_factory=lambda: [1.0e4, 1.0e4])


@dataclass
class LipschitzConfig:
    budget: int = 20000
    verify_samples: int = 100000
    inject_Lx: object = None
    inject_Lv: object = None
    inject_Lw: object = None


@dataclass
class TubesConfig:
    F0_override: object = None


@dataclass
class TerminalConfig:
    inject_K: object = None
    inject_P: object = None
    inject_rho: float | None = None
    zeta_target: float = 0.95
    synth_R_scale: float = 10.0   # control weight used only for the gain synthesis
    vertex_grid: int = 3          # per output dimension
    sizing_dirs: int = 1024
    sizing_setpoints: int = 9


@dataclass
class RegionConfig:
    rect_lower: list = field(default_factory=lambda: [0.35, 0.35])
    rect_upper: list = field(default_factory=lambda: [0.80, 0.80])
    grid_density: int = 10
    epsilon: float = 1e-6
    # keep only setpoints whose terminal level set of size
    # cap_fraction * (level cap at the rectangle center) fits the tightened
    # boxes; 0 disables the filter
    cap_fraction: float = 0.20
    inscribed_box: bool = False
    inject_vertices: object = None


@dataclass
class SolverConfig:
    stat_tol: float = 1.0e-6
    feas_tol: float = 1.0e-8
    max_iter: int = 100


@dataclass
class ScenarioConfig:
    x0: list = field(default_factory=lambda: [0.2837, 0.2943, 0.2168, 0.2864])
    schedule: list = field(default_factory=lambda: [
        [0.0, [0.65, 0.65]], [25.0, [0.35, 0.35]],
        [50.0, [0.60, 0.75]], [75.0, [0.90, 0.75]]])
    duration_min: float = 100.0
    w_values: list = field(default_factory=lambda: [0.005, 0.005])


@dataclass
class BatchConfig:
    w_axis: list = field(default_factory=lambda: [
        -0.00500, -0.00390, -0.00280, -0.00170, -0.00055,
        0.00055, 0.0017, 0.00280, 0.00390, 0.00500])
    workers: int = 0              # 0 -> os.cpu_count()


@dataclass
class Config:
    plant: PlantConfig = field(default_factory=PlantConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    horizon: int = 4
    lipschitz: LipschitzConfig = field(default_factory=LipschitzConfig)
    tubes: TubesConfig = field(default_factory=TubesConfig)
    terminal: TerminalConfig = field(default_factory=TerminalConfig)
    region: RegionConfig = field(default_factory=RegionConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    batch: BatchConfig = field(default_factory=BatchConfig)
    output_dir: str = "out"
    seed: int = 0

    def weight_matrices(self):
        def to_mat(v):
            arr = np.asarray(v, dtype=float)
            return np.diag(arr) if arr.ndim == 1 else arr
        return to_mat(self.weights.Q), to_mat(self.weights.R), to_mat(self.weights.T)

    def content_hash(self, *sections: str) -> str:
        """Stable hash of selected config sections (all when none given)."""
        data = asdict(self)
        if sections:
            data = {k: data[k] for k in sections}
        blob = yaml.safe_dump(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "Config":
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        cfg = cls()
        section_types = {
            "plant": PlantConfig, "weights": WeightsConfig, "lipschitz": LipschitzConfig,
            "tubes": TubesConfig, "terminal": TerminalConfig, "region": RegionConfig,
            "solver": SolverConfig, "scenario": ScenarioConfig, "batch": BatchConfig,
        }
        for key, value in raw.items():
            if key in section_types:
                if not isinstance(value, dict):
                    raise ConfigError(f"section '{key}' must be a mapping")
                section = section_types[key]()
                for k, v in value.items():
                    if not hasattr(section, k):
                        raise ConfigError(f"unknown key '{key}.{k}'")
                    setattr(section, k, v)
                setattr(cfg, key, section)
            elif hasattr(cfg, key):
                setattr(cfg, key, value)
            else:
                raise ConfigError(f"unknown top-level key '{key}'")
        cfg.validate()
        return cfg

    def validate(self) -> "Config":
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        Q, R, T = self.weight_matrices()
        n_expected = len(self.plant.h_min) if self.plant.kind == "fourtank" else Q.shape[0]
        if Q.shape != (n_expected, n_expected):
            raise ConfigError(f"Q must be {n_expected}x{n_expected}, got {Q.shape}")
        m = len(self.plant.q_min) if self.plant.kind == "fourtank" else R.shape[0]
        if R.shape != (m, m):
            raise ConfigError(f"R must be {m}x{m}, got {R.shape}")
        for name in ("inject_Lx", "inject_Lv", "inject_Lw"):
            M = parse_matrix(getattr(self.lipschitz, name))
            if M is not None and M.shape[0] != n_expected:
                raise ConfigError(f"{name} must have {n_expected} rows, got {M.shape}")
        K = parse_matrix(self.terminal.inject_K)
        if K is not None and K.shape != (m, n_expected):
            raise ConfigError(f"inject_K must be {m}x{n_expected}, got {K.shape}")
        P = parse_matrix(self.terminal.inject_P)
        if P is not None and P.shape != (n_expected, n_expected):
            raise ConfigError(f"inject_P must be {n_expected}x{n_expected}, got {P.shape}")
        if len(self.region.rect_lower) != len(self.region.rect_upper):
            raise ConfigError("region rectangle bounds must have equal length")
        return self
