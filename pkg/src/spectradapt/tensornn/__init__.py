from .tensor import Tensor, NonFiniteError, grad_reverse
from .network import NetworkSpec, ParamStore, ConfigError, build_network, forward
from .optim import AdamW
from .checkpoint import save_params, load_params
from . import functional
from . import tensor

__all__ = [
    "Tensor", "NonFiniteError", "grad_reverse", "NetworkSpec", "ParamStore",
    "ConfigError", "build_network", "forward", "AdamW", "save_params",
    "load_params", "functional", "tensor",
]
