from .engine import Tape, Tensor, as_tensor, backward
from .nn import MLP, Embedding, EncodingSpec, MLPSpec, encode_array, positional_encode
from .store import Adam, ParamStore, adam_step, load_checkpoint, save_checkpoint

__all__ = [
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "MLP",
    "Embedding",
    "EncodingSpec",
    "MLPSpec",
    "encode_array",
    "positional_encode",
    "Adam",
    "ParamStore",
    "adam_step",
    "load_checkpoint",
    "save_checkpoint",
]
