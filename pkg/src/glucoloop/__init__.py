"""Closed-loop blood-glucose control with a learned circadian disturbance.

The toolkit couples a disturbance-preview MPC to a Gaussian Process that
learns the diurnal insulin-sensitivity effect online from state-estimate
residuals, and evaluates both against plain MPC on a simulated patient.
"""

from ._core import BACKEND
from .distlearn import TrainingBuffer, TrainingPoint, extract_point, postprocess
from .estimator import Ukf, UkfConfig, UkfState
from .gp import GpModel, KernelParams, OnlineGp, fit
from .harness import (MealSpec, MetricBlock, RunRecord, ScenarioConfig,
                      compute_metrics, metrics_from_series, run_scenario,
                      write_outputs)
from .linmodel import (ContinuousModel, DiscreteModel,
                       InsulinSensitivityProfile, build_A, discretize, kis_at,
                       split_A)
from .mpc import (CftocProblem, CftocSolution, MpcConfig, MpcController,
                  build_qp, control_step, solve_qp, steady_state_target)
from .plant import Meal, PatientParams, Plant, PlantState

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "__version__",
    "ContinuousModel", "DiscreteModel", "InsulinSensitivityProfile",
    "build_A", "split_A", "discretize", "kis_at",
    "Meal", "PatientParams", "Plant", "PlantState",
    "Ukf", "UkfConfig", "UkfState",
    "TrainingBuffer", "TrainingPoint", "extract_point", "postprocess",
    "GpModel", "KernelParams", "OnlineGp", "fit",
    "CftocProblem", "CftocSolution", "MpcConfig", "MpcController",
    "build_qp", "control_step", "solve_qp", "steady_state_target",
    "MealSpec", "MetricBlock", "RunRecord", "ScenarioConfig",
    "compute_metrics", "metrics_from_series", "run_scenario", "write_outputs",
]
