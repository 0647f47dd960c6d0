from . import tensor as T
from .checkpoint import IncompatibleCheckpoint, load_checkpoint, save_checkpoint
from .nn import ParamStore, ShapeError, init_mlp, mlp_forward, select
from .optim import NonFiniteGradient, OptimState, adam_step
from .rng import SeededRng, make_rng
from .tensor import AutodiffError, Tensor, grad

__all__ = [
    "T",
    "Tensor",
    "grad",
    "AutodiffError",
    "ParamStore",
    "ShapeError",
    "init_mlp",
    "mlp_forward",
    "select",
    "OptimState",
    "adam_step",
    "NonFiniteGradient",
    "SeededRng",
    "make_rng",
    "save_checkpoint",
    "load_checkpoint",
    "IncompatibleCheckpoint",
]
