"""Adam optimizer over named parameter tensors."""

from typing import Dict, Iterable, Optional

import numpy as np

from .config import AdamConfig
from .errors import ShapeError
from .tensor import Tensor


class Adam:
    """Adam with bias correction.

    State is keyed by parameter name so it can be written to and restored from a
    checkpoint next to the parameters themselves.
    """

    def __init__(self, config: Optional[AdamConfig] = None):
        self.config = config or AdamConfig()
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Iterable[Tensor]) -> None:
        """Apply one update to every parameter; a missing gradient counts as zero."""
        cfg = self.config
        self.t += 1
        correction1 = 1.0 - cfg.beta1 ** self.t
        correction2 = 1.0 - cfg.beta2 ** self.t
        for param in params:
            name = param.name
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(param.data)
                v = np.zeros_like(param.data)
            elif m.shape != param.shape:
                raise ShapeError(f"optimizer state for {name} has shape {m.shape}, parameter has {param.shape}")
            dtype = param.dtype.type
            m = dtype(cfg.beta1) * m + dtype(1.0 - cfg.beta1) * grad
            v = dtype(cfg.beta2) * v + dtype(1.0 - cfg.beta2) * grad * grad
            m_hat = m / dtype(correction1)
            v_hat = v / dtype(correction2)
            param.data = param.data - dtype(cfg.lr) * m_hat / (np.sqrt(v_hat) + dtype(cfg.eps))
            self.m[name] = m
            self.v[name] = v

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Moment buffers flattened into one name -> array mapping."""
        arrays = {}
        for name in sorted(self.m):
            arrays[f"m/{name}"] = self.m[name]
            arrays[f"v/{name}"] = self.v[name]
        return arrays

    def load_state_arrays(self, t: int, arrays: Dict[str, np.ndarray]) -> None:
        self.t = t
        self.m = {k[2:]: a for k, a in arrays.items() if k.startswith("m/")}
        self.v = {k[2:]: a for k, a in arrays.items() if k.startswith("v/")}


def adam_step(params: Iterable[Tensor], state: Adam) -> Adam:
    """Functional form of `Adam.step`; returns the updated state."""
    state.step(params)
    return state
