"""SGD with momentum and L2 weight decay."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor

MOMENTUM = 0.9
WEIGHT_DECAY = 1e-7


class SGD:
    """Heavy-ball SGD: ``buf = m*buf + (g + wd*p); p -= lr*buf``.

    Tensors whose ``requires_grad`` is off (frozen towers) are skipped
    entirely, including weight decay.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float,
                 momentum: float = MOMENTUM, weight_decay: float = WEIGHT_DECAY):
        self.params = dict(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.buffers: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            buf = self.buffers.get(name)
            buf = g.copy() if buf is None else self.momentum * buf + g
            self.buffers[name] = buf
            if self.lr != 0.0:
                p.set_data(p.data - self.lr * buf)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"momentum.{k}": v for k, v in self.buffers.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.buffers = {
            k[len("momentum."):]: np.array(v, dtype=np.float64)
            for k, v in state.items()
            if k.startswith("momentum.")
        }
