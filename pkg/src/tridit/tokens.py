"""Patch/audio tokenizers and rotary position embeddings.

Video latents ``[B, C, F, H, W]`` become frame-major, row-major token
sequences; audio latents ``[B, L, d_a]`` are projected and passed through a
residual depthwise-conv position encoder. Text tokens are never rotated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Linear, Module, param, zeros
from .tensor import Tensor, concat, pad_axis, silu, stack


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PatchConfig:
    p_h: int = 2
    p_w: int = 2
    channels: int = 4
    dim: int = 32

    @property
    def patch_dim(self) -> int:
        return self.channels * self.p_h * self.p_w

    def num_tokens(self, frames: int, height: int, width: int) -> int:
        self.check(height, width)
        return frames * (height // self.p_h) * (width // self.p_w)

    def check(self, height: int, width: int) -> None:
        if height % self.p_h or width % self.p_w:
            raise GeometryError(f"{height}x{width} not divisible by patch {self.p_h}x{self.p_w}")


def patchify_video(v: Tensor, cfg: PatchConfig, proj=None) -> Tensor:
    """``[B, C, F, H, W]`` -> ``[B, F*H/p_h*W/p_w, D]``.

    With ``proj=None`` the flattened patches (``C*p_h*p_w`` features, ordered
    channel, row, column) are returned unprojected.
    """
    b, c, f, h, w = v.shape
    if c != cfg.channels:
        raise GeometryError(f"expected {cfg.channels} channels, got {c}")
    cfg.check(h, w)
    hp, wp = h // cfg.p_h, w // cfg.p_w
    x = v.reshape(b, c, f, hp, cfg.p_h, wp, cfg.p_w)
    x = x.transpose(0, 2, 3, 5, 1, 4, 6)
    x = x.reshape(b, f * hp * wp, cfg.patch_dim)
    return x if proj is None else proj(x)


def unpatchify_video(tokens: Tensor, cfg: PatchConfig, frames: int, height: int,
                     width: int) -> Tensor:
    """Inverse of :func:`patchify_video` for tokens of width ``C*p_h*p_w``."""
    b, n, d = tokens.shape
    if n != cfg.num_tokens(frames, height, width) or d != cfg.patch_dim:
        raise GeometryError(
            f"tokens {tokens.shape} inconsistent with F={frames} H={height} W={width} "
            f"patch {cfg.p_h}x{cfg.p_w} channels {cfg.channels}")
    hp, wp = height // cfg.p_h, width // cfg.p_w
    x = tokens.reshape(b, frames, hp, wp, cfg.channels, cfg.p_h, cfg.p_w)
    x = x.transpose(0, 4, 1, 2, 5, 3, 6)
    return x.reshape(b, cfg.channels, frames, height, width)


@dataclass(frozen=True)
class AudioEmbedConfig:
    d_audio: int = 8
    dim: int = 32
    kernel: int = 3
    depth: int = 2


class DepthwiseConv1d(Module):
    """Per-channel 1D convolution over the sequence axis of ``[B, L, D]``, same padding."""

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator, zero: bool = False):
        if kernel % 2 == 0:
            raise ValueError("kernel width must be odd to preserve length")
        self.kernel = kernel
        w = np.zeros((kernel, dim)) if zero else rng.standard_normal((kernel, dim)) / np.sqrt(kernel)
        self.weight = param(w)
        self.bias = zeros((dim,))

    def __call__(self, x: Tensor) -> Tensor:
        half = self.kernel // 2
        length = x.shape[1]
        padded = pad_axis(x, half, half, axis=1)
        out = self.bias
        for k in range(self.kernel):
            out = out + padded[:, k:k + length, :] * self.weight[k]
        return out


class AudioEmbed(Module):
    """Linear projection to model width plus residual conv position encoder."""

    def __init__(self, cfg: AudioEmbedConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.proj = Linear(cfg.d_audio, cfg.dim, rng)
        self.pos = [DepthwiseConv1d(cfg.dim, cfg.kernel, rng, zero=(i == cfg.depth - 1))
                    for i in range(cfg.depth)]

    def positional(self, x: Tensor) -> Tensor:
        h = x
        for i, conv in enumerate(self.pos):
            if i:
                h = silu(h)
            h = conv(h)
        return h

    def __call__(self, a: Tensor) -> Tensor:
        if a.shape[-1] != self.cfg.d_audio:
            raise GeometryError(f"expected audio width {self.cfg.d_audio}, got {a.shape[-1]}")
        projected = self.proj(a)
        return projected + self.positional(projected)


def embed_audio(a: Tensor, embed: AudioEmbed) -> Tensor:
    return embed(a)


@dataclass(frozen=True)
class RopeLayout:
    d_head: int
    ratios: tuple[float, float, float] = (2.0, 1.0, 1.0)
    base: float = 10000.0

    def __post_init__(self):
        if self.d_head % 2:
            raise ValueError(f"d_head must be even, got {self.d_head}")
        if any(r <= 0 for r in self.ratios):
            raise ValueError("rope ratios must be positive")

    @property
    def split(self) -> tuple[int, int, int]:
        """(d_t, d_h, d_w): largest-remainder split of the rotation pairs, ties to t, h, w."""
        pairs = self.d_head // 2
        total = sum(self.ratios)
        exact = [pairs * r / total for r in self.ratios]
        counts = [int(np.floor(e)) for e in exact]
        leftover = pairs - sum(counts)
        order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
        for i in order[:leftover]:
            counts[i] += 1
        return tuple(2 * c for c in counts)


def _axis_angles(positions: np.ndarray, dim: int, base: float) -> np.ndarray:
    if dim % 2:
        raise ValueError(f"rotary sub-dimension must be even, got {dim}")
    if dim == 0:
        return np.zeros((len(positions), 0))
    freqs = base ** (-2.0 * np.arange(dim // 2) / dim)
    return np.outer(positions.astype(np.float64), freqs)


def build_rope_angles(kind: str, layout: RopeLayout, *, frames: int = 0, rows: int = 0,
                      cols: int = 0, length: int = 0) -> np.ndarray:
    """Angle table ``[num_positions, d_head/2]``.

    ``kind="video3d"`` enumerates (f, i, j) frame-major and concatenates the
    temporal, row and column angle blocks; ``kind="audio1d"`` uses the full
    head width on the index ``l``.
    """
    if kind == "video3d":
        d_t, d_h, d_w = layout.split
        f, i, j = np.meshgrid(np.arange(frames), np.arange(rows), np.arange(cols), indexing="ij")
        return np.concatenate([
            _axis_angles(f.ravel(), d_t, layout.base),
            _axis_angles(i.ravel(), d_h, layout.base),
            _axis_angles(j.ravel(), d_w, layout.base),
        ], axis=1)
    if kind == "audio1d":
        return _axis_angles(np.arange(length), layout.d_head, layout.base)
    raise ValueError(f"unknown rope kind {kind!r}")


def apply_rope(x: Tensor, angles: np.ndarray, span: tuple[int, int]) -> Tensor:
    """Rotate adjacent feature pairs of tokens ``span[0]:span[1]`` of ``[B, N_h, L, d_head]``.

    Tokens outside the span are passed through untouched.
    """
    start, end = span
    length, d_head = x.shape[-2], x.shape[-1]
    if not 0 <= start <= end <= length:
        raise ValueError(f"span {span} outside sequence of length {length}")
    if end - start == 0:
        return x
    if angles.shape != (end - start, d_head // 2):
        raise ValueError(f"angle table {angles.shape} does not match span {span} / d_head {d_head}")
    lead = x.shape[:-2]
    inside = x[..., start:end, :].reshape(*lead, end - start, d_head // 2, 2)
    even, odd = inside[..., 0], inside[..., 1]
    cos, sin = np.cos(angles), np.sin(angles)
    rotated = stack([even * cos - odd * sin, even * sin + odd * cos], axis=-1)
    rotated = rotated.reshape(*lead, end - start, d_head)
    pieces = []
    if start > 0:
        pieces.append(x[..., :start, :])
    pieces.append(rotated)
    if end < length:
        pieces.append(x[..., end:, :])
    return concat(pieces, axis=-2)
