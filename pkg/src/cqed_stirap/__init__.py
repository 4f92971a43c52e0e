"""Photon transfer by counter-intuitive tunnelling pulses through a cavity chain ending in a qubit.

Semiclassical mean-field dynamics, stationary-point branch tracking, Lyapunov
chaos diagnostics, sweep-rate efficiency scans and an exact quantum oracle.
"""
__version__ = "0.1.0"

from .exceptions import (BranchLostError, ConvergenceError, IntegrationError, NormDriftError,
                         SingularJacobianError, StirapError, ValidationError)
from .model import (ChainParams, PulseProtocol, SemiclassicalState, default_centers, mixing_angle,
                    reference_four_cavity, reference_three_cavity, pulse_value, validate)
from .dynamics import IntegratorOptions, Trajectory, conserved_total, eom_rhs, integrate
from .stationary import SPBranch, SPSolution, continue_branch, continue_detuning, find_ssp, multistart, solve_sp
from .chaos import (ChaosWindow, EnsembleCloud, LyapunovSeries, LyapunovSettings, benettin, chaos_window,
                    ensemble_spread, lambda_max_at, lyapunov_profile, noise_floor, refine_peak)
from .scans import (Bounds, EfficiencyCurve, TransferResult, bounds_95, check_bound_inequality,
                    efficiency_scan, transfer_efficiency)
from .quantum import (ExcitationBasis, QuantumSeries, build_basis, build_hamiltonian, coherent_initial_state,
                      compare_semiclassical, propagate)
from .io import ExperimentConfig, RunManifest, load_config
from .presets import figure_preset

__all__ = [
    "BranchLostError", "ConvergenceError", "IntegrationError", "NormDriftError", "SingularJacobianError",
    "StirapError", "ValidationError",
    "ChainParams", "PulseProtocol", "SemiclassicalState", "default_centers", "mixing_angle",
    "reference_four_cavity", "reference_three_cavity", "pulse_value", "validate",
    "IntegratorOptions", "Trajectory", "conserved_total", "eom_rhs", "integrate",
    "SPBranch", "SPSolution", "continue_branch", "continue_detuning", "find_ssp", "multistart", "solve_sp",
    "ChaosWindow", "EnsembleCloud", "LyapunovSeries", "LyapunovSettings", "benettin", "chaos_window",
    "ensemble_spread", "lambda_max_at", "lyapunov_profile", "noise_floor", "refine_peak",
    "Bounds", "EfficiencyCurve", "TransferResult", "bounds_95", "check_bound_inequality",
    "efficiency_scan", "transfer_efficiency",
    "ExcitationBasis", "QuantumSeries", "build_basis", "build_hamiltonian", "coherent_initial_state",
    "compare_semiclassical", "propagate",
    "ExperimentConfig", "RunManifest", "load_config", "figure_preset",
]
