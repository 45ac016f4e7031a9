"""Neural ODE processes trained with privileged information."""

from .data import TaskSpec, TrajectoryRecord, generate_dataset, read_dataset, write_dataset
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    IntegrationError,
    LupiNDPError,
    NonFiniteError,
    ParseError,
    TrainingError,
)
from .estimator import LupiNDPRegressor
from .evaluation import EvalProtocol, EvalReport, evaluate
from .model import ModelConfig, NeuralODEProcess, ObservationBatch, init_model
from .training import TrainConfig, elbo_loss, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "EvalProtocol",
    "EvalReport",
    "IntegrationError",
    "LupiNDPError",
    "LupiNDPRegressor",
    "ModelConfig",
    "NeuralODEProcess",
    "NonFiniteError",
    "ObservationBatch",
    "ParseError",
    "TaskSpec",
    "TrainConfig",
    "TrainingError",
    "TrajectoryRecord",
    "elbo_loss",
    "evaluate",
    "generate_dataset",
    "init_model",
    "read_dataset",
    "train",
    "write_dataset",
]
