"""Deep-BSDE approximation of the liquidation FBSDE."""

from .evaluate import Discrepancy, discrepancy_vs_closed_form
from .solver import (
    ArchitectureMismatch,
    NetParams,
    NNPolicy,
    RolloutResult,
    TrainConfig,
    TrainingDiverged,
    TrainReport,
    driver_g,
    fbsde_control,
    init_net,
    loss_and_grads,
    nn_policy,
    rollout,
    terminal_h,
    train,
)

__all__ = [
    "ArchitectureMismatch",
    "Discrepancy",
    "NetParams",
    "NNPolicy",
    "RolloutResult",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "discrepancy_vs_closed_form",
    "driver_g",
    "fbsde_control",
    "init_net",
    "loss_and_grads",
    "nn_policy",
    "rollout",
    "terminal_h",
    "train",
]
