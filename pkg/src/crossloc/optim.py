"""Adam optimizer with a stepped learning-rate schedule.

Weight decay defaults to the coupled form (decay folded into the gradient,
classic Adam + L2); a flag switches to the decoupled variant. The fused
per-buffer update runs through the kernel backend.
"""

from __future__ import annotations

import numpy as np

from .backend import kernels
from .tensor import Tensor


def lr_at_epoch(lr0: float, epoch: int, drop_every: int, drop_factor: float) -> float:
    """lr0 reduced by drop_factor every drop_every epochs (exact at powers)."""
    return lr0 / (drop_factor ** (epoch // drop_every))


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0, decoupled: bool = False):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        """Apply one update to every parameter that received a gradient."""
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            flat_p = np.ascontiguousarray(p.data.reshape(-1))
            kernels.adam_step(flat_p, np.ascontiguousarray(p.grad.reshape(-1)),
                              self.m[name].reshape(-1), self.v[name].reshape(-1),
                              self.t, self.lr, self.beta1, self.beta2, self.eps,
                              self.weight_decay, self.decoupled)
            p.data = flat_p.reshape(p.data.shape)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for k, p in self.params.items():
            self.m[k] = arrays[f"opt.m.{k}"].astype(p.data.dtype).reshape(p.data.shape)
            self.v[k] = arrays[f"opt.v.{k}"].astype(p.data.dtype).reshape(p.data.shape)
