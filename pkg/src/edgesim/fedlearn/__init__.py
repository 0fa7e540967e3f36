"""Federated learning on edge gateways with an additive parameter server."""
from .model import (
    DimensionMismatchError,
    GradientUpdate,
    LocalDataset,
    ModelState,
    NonFiniteGradientError,
    TrainerConfig,
    accuracy,
    gradient,
    local_train,
    loss,
    minibatches,
)
from .runner import RoundMetrics, Worker, make_workers, run_round_robin, synthetic_federation, two_gaussians
from .server import DEFAULT_STALENESS_LIMIT, ParameterServer, aggregate, load_journal, replay_journal

__all__ = [
    "DEFAULT_STALENESS_LIMIT",
    "DimensionMismatchError",
    "GradientUpdate",
    "LocalDataset",
    "ModelState",
    "NonFiniteGradientError",
    "ParameterServer",
    "RoundMetrics",
    "TrainerConfig",
    "Worker",
    "accuracy",
    "aggregate",
    "gradient",
    "load_journal",
    "local_train",
    "loss",
    "make_workers",
    "minibatches",
    "replay_journal",
    "run_round_robin",
    "synthetic_federation",
    "two_gaussians",
]
