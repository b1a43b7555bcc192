"""Shuffle Attention (SA) on NCHW numpy arrays.

The module, its hand-written backward pass, parameter/FLOP accounting and
a small residual network for training experiments.
"""

from .attention import ABLATION_VARIANTS, SaConfig, SaParams, sa_forward, se_forward
from .accounting import ModelDescriptor, count_sa_flops, report, sa_cost, sa_params_count, se_cost
from .estimators import ShuffleAttention, ToyResNetClassifier
from .exceptions import ConfigError, FormatError, NonFiniteError, NotFittedError, SanetError, ShapeError
from .grad import GradTape, backward, gradcheck, gradcheck_sa
from .io import load_sa_params, read_satk, save_sa_params, write_satk
from .tensor import Rng, channel_shuffle, concat_channels, split_channels

__version__ = "0.1.0"

__all__ = [
    "ABLATION_VARIANTS", "SaConfig", "SaParams", "sa_forward", "se_forward",
    "ModelDescriptor", "count_sa_flops", "report", "sa_cost", "sa_params_count", "se_cost",
    "ShuffleAttention", "ToyResNetClassifier",
    "ConfigError", "FormatError", "NonFiniteError", "NotFittedError", "SanetError", "ShapeError",
    "GradTape", "backward", "gradcheck", "gradcheck_sa",
    "load_sa_params", "read_satk", "save_sa_params", "write_satk",
    "Rng", "channel_shuffle", "concat_channels", "split_channels",
]
