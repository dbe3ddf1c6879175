"""Layers and losses built on the autodiff tape.

The building block used throughout (VAEs, denoisers, evaluators) is a
residual feed-forward block: layer-norm -> dense -> SiLU -> dense, added back
onto its input. Sequence mixing comes from learned positional embeddings plus
pooling/broadcast matrices; single-head self-attention is available as an
optional block but disabled by default to keep runs deterministic and cheap.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor
from .errors import ShapeError


class Module:
    """Parameter container with recursive discovery, torch-style."""

    def __init__(self):
        self.training = False

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_parameter_names(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name

    def train(self, mode: bool = True):
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in state")
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ShapeError(f"parameter {name!r} has shape {value.shape}, expected {p.data.shape}")
            p.data = value.copy()


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        scale = 1.0 / np.sqrt(n_in)
        self.weight = Parameter(rng.normal(0.0, scale, size=(n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(width))
        self.shift = Parameter(np.zeros(width))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered * ((var + self.eps) ** -0.5)
        return normed * self.gain + self.shift


class Embedding(Module):
    def __init__(self, n_rows: int, width: int, rng: np.random.Generator):
        super().__init__()
        self.table = Parameter(rng.normal(0.0, 0.02, size=(n_rows, width)))

    def __call__(self, indices) -> Tensor:
        return self.table.take(np.asarray(indices, dtype=np.int64))


class FeedForwardBlock(Module):
    """layer-norm -> dense -> SiLU -> dense, with residual connection."""

    def __init__(self, width: int, hidden: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__()
        self.norm = LayerNorm(width)
        self.expand = Dense(width, hidden, rng)
        self.project = Dense(hidden, width, rng)
        self.dropout = float(dropout)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        h = self.project(self.expand(self.norm(x)).silu())
        if self.training and self.dropout > 0.0:
            if rng is None:
                raise ValueError("dropout requires an rng in training mode")
            keep = (rng.random(h.shape) >= self.dropout).astype(np.float64)
            h = h * Tensor(keep / (1.0 - self.dropout))
        return x + h


class SelfAttentionBlock(Module):
    """Single-head self-attention with residual connection (optional mixing)."""

    def __init__(self, width: int, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(width)
        self.query = Dense(width, width, rng)
        self.key = Dense(width, width, rng)
        self.value = Dense(width, width, rng)
        self.out = Dense(width, width, rng)
        self.scale = 1.0 / np.sqrt(width)

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        h = self.norm(x)
        q, k, v = self.query(h), self.key(h), self.value(h)
        scores = (q @ k.swapaxes(-1, -2)) * self.scale
        return x + self.out(scores.softmax(axis=-1) @ v)


def timestep_features(t, width: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of integer timesteps, shape (len(t), width)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    angles = t[:, None] * freqs[None, :]
    feats = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if width % 2:
        feats = np.concatenate([feats, np.zeros((t.shape[0], 1))], axis=1)
    return feats


def mse_loss(prediction: Tensor, target: Tensor) -> Tensor:
    if prediction.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {prediction.shape} vs {target.shape}")
    diff = prediction - target
    return (diff * diff).mean()


def masked_mse_loss(prediction: Tensor, target: Tensor, mask: np.ndarray) -> Tensor:
    """Mean squared error over positions where mask == 1 (mask broadcasts)."""
    if prediction.shape != target.shape:
        raise ShapeError(f"masked_mse_loss shape mismatch: {prediction.shape} vs {target.shape}")
    mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), prediction.shape)
    diff = prediction - target
    total = (diff * diff * Tensor(mask)).sum()
    return total / float(mask.sum())


def gaussian_kl(mean: Tensor, log_variance: Tensor) -> Tensor:
    """Per-element mean KL(N(mean, exp(log_variance)) || N(0, 1))."""
    if mean.shape != log_variance.shape:
        raise ShapeError(f"gaussian_kl shape mismatch: {mean.shape} vs {log_variance.shape}")
    terms = (mean * mean + log_variance.exp() - log_variance - 1.0) * 0.5
    return terms.mean()
