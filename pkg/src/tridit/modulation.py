"""Time embedding and six-slot AdaLN modulation."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .nn import Linear, Module
from .tensor import Tensor, layernorm_noaffine, silu

LN_EPS = 1e-6
SLOT_NAMES = ("shift_msa", "scale_msa", "gate_msa", "shift_mlp", "scale_mlp", "gate_mlp")


def sinusoidal_features(sigma: np.ndarray, n_freqs: int = 256, max_period: float = 10000.0,
                        scale: float = 1000.0) -> np.ndarray:
    """``[B]`` flow times -> ``[B, 2*n_freqs]`` cos/sin features, geometric frequencies."""
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    freqs = np.exp(-np.log(max_period) * np.arange(n_freqs) / n_freqs)
    args = (sigma * scale)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


class TimeEmbedder(Module):
    """Sinusoidal features followed by Linear -> SiLU -> Linear."""

    def __init__(self, dim: int, rng: np.random.Generator, n_freqs: int = 256):
        self.n_freqs = n_freqs
        self.fc1 = Linear(2 * n_freqs, dim, rng)
        self.fc2 = Linear(dim, dim, rng)

    def __call__(self, sigma) -> Tensor:
        sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
        if np.any((sigma < 0) | (sigma > 1)):
            raise ValueError("flow time must lie in [0, 1]")
        feats = Tensor(sinusoidal_features(sigma, self.n_freqs))
        return self.fc2(silu(self.fc1(feats)))


def time_embed(sigma, embedder: TimeEmbedder) -> Tensor:
    return embedder(sigma)


class ModulationSlots(NamedTuple):
    shift_msa: Tensor
    scale_msa: Tensor
    gate_msa: Tensor
    shift_mlp: Tensor
    scale_mlp: Tensor
    gate_mlp: Tensor


class SlotMLP(Module):
    """SiLU -> Linear(D, 6D); the linear layer starts at exactly zero so every gate is closed."""

    def __init__(self, dim: int, rng: np.random.Generator, zero: bool = True):
        self.dim = dim
        self.proj = Linear(dim, 6 * dim, rng, zero=zero, std=0.02 if not zero else None)

    def __call__(self, t_emb: Tensor) -> ModulationSlots:
        return compute_slots(t_emb, self)


def compute_slots(t_emb: Tensor, mlp: SlotMLP) -> ModulationSlots:
    """Run the slot MLP on ``[B, D]`` and split into six ``[B, 1, D]`` slots in fixed order."""
    b, d = t_emb.shape
    out = mlp.proj(silu(t_emb)).reshape(b, 1, 6 * d)
    return ModulationSlots(*(out[:, :, k * d:(k + 1) * d] for k in range(6)))


def modulated_ln(h: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return (scale + 1.0) * layernorm_noaffine(h, LN_EPS) + shift


def gated_residual(h_in: Tensor, delta: Tensor, gate: Tensor) -> Tensor:
    return h_in + gate * delta
