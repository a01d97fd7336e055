"""Robust (L-infinity) dynamic state estimation for synchronous generators.

Observer gains come from a semidefinite program solved by a bundled
interior-point method; the package also ships EKF/UKF/SR-UKF baselines and a
scenario harness for side-by-side comparisons.
"""
from .estimators import (ExtendedKalmanFilter, LinfObserver, NoiseSpec, SquareRootUKF,
                         UnscentedKalmanFilter, sample_noise)
from .harness import CaseReport, ScenarioConfig, case_preset, design_for, run_case
from .integrate import InputSignal, Trajectory, integrate_adaptive
from .lipschitz import estimate_gamma, plant_gammas
from .models import MachineParams, OperatingBox, PlantModel, build_plant, default_box
from .sdp import LmiBuilder, LmiProblem, solve
from .synthesis import (ObserverDesign, SynthesisInput, relax_lower, sca_refine,
                        synthesize_upper)

__version__ = "0.1.0"

__all__ = [
    "CaseReport", "ExtendedKalmanFilter", "InputSignal", "LinfObserver", "LmiBuilder",
    "LmiProblem", "MachineParams", "NoiseSpec", "ObserverDesign", "OperatingBox",
    "PlantModel", "ScenarioConfig", "SquareRootUKF", "SynthesisInput", "Trajectory",
    "UnscentedKalmanFilter", "build_plant", "case_preset", "default_box", "design_for",
    "estimate_gamma", "integrate_adaptive", "plant_gammas", "relax_lower", "run_case",
    "sample_noise", "sca_refine", "solve", "synthesize_upper",
]
