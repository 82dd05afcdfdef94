"""Deterministic float64 array substrate: tape autodiff, layers, Adam."""

from .gradcheck import GradCheckReport, grad_check
from .nn import FeedForward, LayerNorm, Linear, ParamBag, SelfAttention, TransformerBlock
from .optim import Adam, LrSchedule
from .tensor import MASK_FILL, Graph, Tensor, Var

__all__ = [
    "Adam",
    "FeedForward",
    "GradCheckReport",
    "Graph",
    "LayerNorm",
    "Linear",
    "LrSchedule",
    "MASK_FILL",
    "ParamBag",
    "SelfAttention",
    "Tensor",
    "TransformerBlock",
    "Var",
    "grad_check",
]
