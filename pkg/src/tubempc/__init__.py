"""Tube-based robust MPC for tracking piece-wise constant setpoints."""

from .boxes import Hyperbox
from .config import Config
from .equilibria import (EquilibriumMaps, SetpointRegion, best_setpoint, build_Yt,
                         check_assumption3, solve_equilibrium)
from .fourtank import FourTankModel, FourTankParams
from .lipschitz import (LipschitzMatrices, SampleRegion, estimate_constants,
                        verify_constants)
from .model import LinearPlant, OdePlant, PlantModel, rk4_step
from .ocp import Solution, TrackingProblem, control_law, evaluate_cost, shift_candidate, solve
from .pipeline import Artifacts, build_artifacts
from .policy import AffinePolicy
from .sim import BatchReport, Scenario, Trace, compute_metrics, grid_pairs, run_batch, \
    run_closed_loop
from .terminal import (TerminalIngredients, check_assumption9, size_terminal_level,
                       synthesize_gain, verify_gain, verify_lyapunov_decrease)
from .tubes import TightenedConstraints, TubeSystem, build_tubes, membership, tighten

__version__ = "0.1.0"
