"""Parameter containers on top of :mod:`tridit.tensor`."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, gelu


class Module:
    """Walks attributes in definition order to enumerate parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param(arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def normal(rng: np.random.Generator, shape, std: float) -> Tensor:
    return param(rng.standard_normal(shape) * std)


def zeros(shape) -> Tensor:
    return param(np.zeros(shape))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False, std: float | None = None):
        std = (1.0 / np.sqrt(d_in)) if std is None else std
        self.weight = zeros((d_in, d_out)) if zero else normal(rng, (d_in, d_out), std)
        self.bias = zeros((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class MLP(Module):
    """Two-layer feed-forward network with GELU."""

    def __init__(self, dim: int, rng: np.random.Generator, hidden_mult: int = 4):
        self.fc1 = Linear(dim, hidden_mult * dim, rng)
        self.fc2 = Linear(hidden_mult * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))
