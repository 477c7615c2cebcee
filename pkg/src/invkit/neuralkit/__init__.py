"""Minimal reverse-mode autodiff, layers and optimizers."""

from .layers import (
    ChannelNorm,
    Conv2d,
    Dense,
    LeakyReLU,
    Network,
    ReLU,
    Reshape,
    Residual,
    UpsampleNearest,
    build_decoder,
    build_denoiser,
    forward,
    network_from_manifest,
)
from .optim import SGD, Adam, MissingGradientError, make_optimizer, step
from .tensor import GraphError, Tensor, as_tensor

__all__ = [
    "Adam",
    "ChannelNorm",
    "Conv2d",
    "Dense",
    "GraphError",
    "LeakyReLU",
    "MissingGradientError",
    "Network",
    "ReLU",
    "Reshape",
    "Residual",
    "SGD",
    "Tensor",
    "UpsampleNearest",
    "as_tensor",
    "build_decoder",
    "build_denoiser",
    "forward",
    "make_optimizer",
    "network_from_manifest",
    "step",
]
