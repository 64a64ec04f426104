"""Minimal differentiable-operation kernel on numpy."""
from .gradcheck import GradientCheckError, gradient_check, module_gradient_check
from .layers import (
    BatchNorm,
    ConfigError,
    DataError,
    DegenerateBatchError,
    Dropout,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    cross_entropy,
    dropout,
    linear,
    multi_head_attention,
    scaled_dot_attention,
    sinusoidal_positions,
)
from .module import Module, ModuleList, Parameter
from .optim import Adam
from .rng import RngState
from .tensor import ShapeError, Tensor, layer_norm, no_grad, softmax

__all__ = [
    "Adam", "BatchNorm", "ConfigError", "DataError", "DegenerateBatchError", "Dropout",
    "GradientCheckError", "LayerNorm", "Linear", "Module", "ModuleList", "MultiHeadAttention",
    "Parameter", "RngState", "ShapeError", "Tensor", "cross_entropy", "dropout", "gradient_check",
    "layer_norm", "linear", "module_gradient_check", "multi_head_attention", "no_grad", "scaled_dot_attention",
    "sinusoidal_positions", "softmax",
]
