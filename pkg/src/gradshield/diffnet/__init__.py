"""Small differentiable-classifier engine with second-order reverse mode."""

from .autodiff import reset_traversal_count, traversal_count
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_checkpoint_json,
    save_checkpoint,
    save_checkpoint_json,
)
from .network import (
    DiffNet,
    Example,
    LogPosteriorJacobian,
    ParamVector,
    cross_entropy,
    finite_diff_gradient,
    forward,
    forward_batch,
    gz_double_backprop,
    log_posterior_jacobian,
    one_hot,
    param_count,
    update_gradient,
)
from .train import (
    TrainerConfig,
    TrainingDivergedError,
    examples_from_arrays,
    sgd_train,
    sgd_train_with_snapshots,
)

__all__ = [
    "DiffNet",
    "Example",
    "LogPosteriorJacobian",
    "ParamVector",
    "TrainerConfig",
    "TrainingDivergedError",
    "CheckpointError",
    "cross_entropy",
    "examples_from_arrays",
    "finite_diff_gradient",
    "forward",
    "forward_batch",
    "gz_double_backprop",
    "load_checkpoint",
    "load_checkpoint_json",
    "log_posterior_jacobian",
    "one_hot",
    "param_count",
    "reset_traversal_count",
    "save_checkpoint",
    "save_checkpoint_json",
    "sgd_train",
    "sgd_train_with_snapshots",
    "traversal_count",
    "update_gradient",
]
