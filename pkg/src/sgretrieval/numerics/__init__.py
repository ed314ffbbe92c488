from . import tensor
from .tensor import Tensor, set_debug
from .layers import (Dropout, LayerNorm, Linear, MLP, Module, MultiHeadAttention,
                     Parameter, TransformerEncoder, TransformerEncoderBlock)
from .optim import Adam, LrSchedule
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check, REL_TOL

__all__ = [
    "tensor", "Tensor", "set_debug",
    "Dropout", "LayerNorm", "Linear", "MLP", "Module", "MultiHeadAttention",
    "Parameter", "TransformerEncoder", "TransformerEncoderBlock",
    "Adam", "LrSchedule", "load_checkpoint", "save_checkpoint",
    "finite_difference_check", "REL_TOL",
]
