"""Closed-loop simulation of recourse-seeking users and a budget-constrained
score model: deployment, user response, capped labeling, retraining."""

__version__ = "0.1.0"

from .data import Cohort, FeatureSchema, PopulationSource
from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    OracleError,
    RecourseLoopError,
    SchemaError,
    SolverError,
)
from .labeling import KdeConfig, LabelDecision
from .models import OptimizerState, ScoreModel, TrainTrace
from .recourse import RecourseConfig, RecourseOutcome
from .simulation import RunArchive, SimulationConfig, run_simulation
from .update import Histogram, UpdateStrategy

__all__ = [
    "Cohort",
    "ConfigurationError",
    "ContractError",
    "DataError",
    "FeatureSchema",
    "Histogram",
    "KdeConfig",
    "LabelDecision",
    "OptimizerState",
    "OracleError",
    "PopulationSource",
    "RecourseConfig",
    "RecourseLoopError",
    "RecourseOutcome",
    "RunArchive",
    "SchemaError",
    "ScoreModel",
    "SimulationConfig",
    "SolverError",
    "TrainTrace",
    "UpdateStrategy",
    "run_simulation",
    "__version__",
]
