"""Toy residual network, synthetic data and SGD trainer."""

from .train import (
    History,
    SGD,
    SyntheticDataset,
    ToyNetConfig,
    ToyResNet,
    TrainConfig,
    build,
    evaluate,
    expected_sa_parameter_delta,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "History", "SGD", "SyntheticDataset", "ToyNetConfig", "ToyResNet", "TrainConfig",
    "build", "evaluate", "expected_sa_parameter_delta", "load_checkpoint", "save_checkpoint", "train",
]
