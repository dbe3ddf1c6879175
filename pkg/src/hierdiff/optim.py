"""Adaptive-moment optimizer with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter
from .errors import NonFiniteError


class AdamW:
    """AdamW: bias-corrected Adam update plus decoupled weight decay.

    The decay term multiplies the parameter by ``(1 - lr * weight_decay)``
    independently of the gradient-driven update. A non-finite gradient on any
    parameter aborts the whole step before any parameter is touched.
    """

    def __init__(self, parameters, lr: float = 1e-4, betas: tuple = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        if lr <= 0.0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        self.parameters = list(parameters)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.grad = None

    def step(self) -> None:
        updates = []
        b1, b2 = self.betas
        for p in self.parameters:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"non-finite gradient for parameter {p.name!r}; step aborted")
            updates.append((p, grad))
        # All gradients validated; now mutate.
        for p, grad in updates:
            p.step_count += 1
            t = p.step_count
            p.first_moment = b1 * p.first_moment + (1.0 - b1) * grad
            p.second_moment = b2 * p.second_moment + (1.0 - b2) * grad * grad
            m_hat = p.first_moment / (1.0 - b1 ** t)
            v_hat = p.second_moment / (1.0 - b2 ** t)
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict:
        """Optimizer state as named arrays for checkpointing."""
        arrays = {}
        for i, p in enumerate(self.parameters):
            key = p.name if p.name is not None else f"param{i}"
            arrays[f"opt.{key}.m"] = p.first_moment
            arrays[f"opt.{key}.v"] = p.second_moment
            arrays[f"opt.{key}.t"] = np.array([float(p.step_count)])
        return arrays

    def load_state_arrays(self, arrays: dict) -> None:
        for i, p in enumerate(self.parameters):
            key = p.name if p.name is not None else f"param{i}"
            p.first_moment = np.array(arrays[f"opt.{key}.m"], dtype=np.float64).reshape(p.data.shape)
            p.second_moment = np.array(arrays[f"opt.{key}.v"], dtype=np.float64).reshape(p.data.shape)
            p.step_count = int(arrays[f"opt.{key}.t"][0])
