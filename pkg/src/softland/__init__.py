"""Soft-landing feedforward control of fast switching devices.

Simulation and numerical-optimization toolkit for run-to-run adaptation
of a flatness-based feedforward, where the only feedback between
operations is the coil current. The package covers the physical and
identifiable device models, polynomial reference trajectories, the
model-inverting controller with its algebraic current predictor, hybrid
simulation with end-stop impacts, the per-operation simplex adaptation,
sensitivity-based identifiability diagnostics, and Monte Carlo studies
over populations of perturbed devices.
"""

from ._engine import NUMBA_ENABLED
from .config import DEFAULTS, Setup, build_setup, load_config
from .flatctrl import (DEFAULT_HOLD_BOOST, DEFAULT_HOLD_RAMP, ControlSignal,
                       InfeasibleReferenceError, SingularFluxError,
                       build_control, build_precharge, feedforward_input,
                       flat_states, predict_current)
from .harness import (MonteCarloResult, MonteCarloSpec, percentiles,
                      run_montecarlo, run_uncontrolled_baseline,
                      sample_devices, write_run_directory)
from .model import (FREE, HELD_AT_MAX, HELD_AT_MIN, Geometry, IdentParams,
                    IdentState, PhysicalParams, PhysState, SaturationError,
                    ident_derivatives, ident_output, phys_derivatives,
                    phys_output, rho_to_theta, to_ident_state)
from .r2r import (CostMode, OptimizerState, ProtocolError, R2RConfig,
                  R2RResult, SimplexMachine, compute_cost_dm,
                  compute_cost_im, estimate_resistance, nm_best, nm_init,
                  nm_propose, nm_update, run_r2r)
from .reference import ReferenceTrajectory, build_reference, eval_reference
from .sensitivity import (SensitivityReport, predictor_sensitivity,
                          tracking_sensitivity)
from .simulator import (IdentRecord, IntegrationError, OperationRecord,
                        SimConfig, compute_nrmse, detect_impact, sample_grid,
                        simulate_ident_free, simulate_operation)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "DEFAULTS", "Setup", "build_setup", "load_config",
    "DEFAULT_HOLD_BOOST", "DEFAULT_HOLD_RAMP",
    "ControlSignal", "InfeasibleReferenceError", "SingularFluxError",
    "build_control", "build_precharge", "feedforward_input", "flat_states",
    "predict_current",
    "MonteCarloResult", "MonteCarloSpec", "percentiles", "run_montecarlo",
    "run_uncontrolled_baseline", "sample_devices", "write_run_directory",
    "FREE", "HELD_AT_MAX", "HELD_AT_MIN", "Geometry", "IdentParams",
    "IdentState", "PhysicalParams", "PhysState", "SaturationError",
    "ident_derivatives", "ident_output", "phys_derivatives", "phys_output",
    "rho_to_theta", "to_ident_state",
    "CostMode", "OptimizerState", "ProtocolError", "R2RConfig", "R2RResult",
    "SimplexMachine", "compute_cost_dm", "compute_cost_im",
    "estimate_resistance", "nm_best", "nm_init", "nm_propose", "nm_update",
    "run_r2r",
    "ReferenceTrajectory", "build_reference", "eval_reference",
    "SensitivityReport", "predictor_sensitivity", "tracking_sensitivity",
    "IdentRecord", "IntegrationError", "OperationRecord", "SimConfig",
    "compute_nrmse", "detect_impact", "sample_grid", "simulate_ident_free",
    "simulate_operation",
    "__version__",
]
