"""Tower composition, block schedules and the joint velocity model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import ATTN_SCALES, DualStreamBlock, OmniBlock, WanBlock
from .modulation import TimeEmbedder
from .nn import Linear, Module, normal
from .tensor import Tensor
from .tokens import (AudioEmbed, AudioEmbedConfig, GeometryError, PatchConfig, RopeLayout,
                     build_rope_angles, patchify_video, unpatchify_video)

FAMILIES = ("sd3_dual", "wan")
CONDITIONING = ("static", "dynamic")
SCHEDULE_POLICIES = ("strict_alternate", "video_first_ratio")
BACKBONE_ROOTS = ("video", "time_embed", "text_embed")


@dataclass(frozen=True)
class ModelConfig:
    video_blocks: int = 2
    audio_blocks: int = 2
    omni_blocks: int = 1
    dim: int = 32
    heads: int = 4
    video_family: str = "sd3_dual"
    audio_family: str = "sd3_dual"
    conditioning: str = "static"
    frozen_video: bool = False
    schedule_policy: str = "strict_alternate"
    attn_scale: str = "per_head"
    # video latent geometry
    channels: int = 4
    frames: int = 16
    height: int = 4
    width: int = 4
    patch: int = 2
    # audio latent geometry
    audio_len: int = 32
    audio_dim: int = 8
    conv_kernel: int = 3
    conv_depth: int = 2
    # text
    text_len: int = 2
    vocab_size: int = 16
    rope_ratios: tuple[float, float, float] = (2.0, 1.0, 1.0)
    rope_base: float = 10000.0

    def __post_init__(self):
        for name in ("video_blocks", "audio_blocks", "omni_blocks"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.video_family not in FAMILIES or self.audio_family not in FAMILIES:
            raise ValueError(f"block family must be one of {FAMILIES}")
        if self.conditioning not in CONDITIONING:
            raise ValueError(f"conditioning must be one of {CONDITIONING}")
        if self.conditioning == "dynamic" and "wan" in (self.video_family, self.audio_family):
            raise ValueError("dynamic text conditioning needs sd3_dual towers; wan text is read-only")
        if self.schedule_policy not in SCHEDULE_POLICIES:
            raise ValueError(f"schedule_policy must be one of {SCHEDULE_POLICIES}")
        if self.attn_scale not in ATTN_SCALES:
            raise ValueError(f"attn_scale must be one of {ATTN_SCALES}")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        self.patch_config.check(self.height, self.width)

    @property
    def patch_config(self) -> PatchConfig:
        return PatchConfig(self.patch, self.patch, self.channels, self.dim)

    @property
    def audio_config(self) -> AudioEmbedConfig:
        return AudioEmbedConfig(self.audio_dim, self.dim, self.conv_kernel, self.conv_depth)

    @property
    def rope_layout(self) -> RopeLayout:
        return RopeLayout(self.dim // self.heads, tuple(self.rope_ratios), self.rope_base)

    @property
    def video_tokens(self) -> int:
        return self.patch_config.num_tokens(self.frames, self.height, self.width)


@dataclass(frozen=True)
class BlockSchedule:
    kinds: tuple[str, ...]
    i_v: tuple[int, ...]
    i_a: tuple[int, ...]
    literal: bool = field(default=False)


def build_schedule(n_video: int, n_audio: int, policy: str = "strict_alternate",
                   literal_counters: bool = False) -> BlockSchedule:
    """Interleave ``n_video`` V blocks with ``n_audio`` A blocks.

    Counters are 1-based running counts of each kind up to and including the
    current position. ``literal_counters`` adds one to both (the off-by-one
    convention) and exists for auditing only.
    """
    if n_video < 0 or n_audio < 0:
        raise ValueError("block counts must be nonnegative")
    kinds: list[str] = []
    if policy == "strict_alternate":
        for k in range(max(n_video, n_audio)):
            if k < n_video:
                kinds.append("V")
            if k < n_audio:
                kinds.append("A")
    elif policy == "video_first_ratio":
        nv = na = 0
        while nv < n_video or na < n_audio:
            # pick the tower that is furthest behind in fractional progress, ties to video
            if na >= n_audio or (nv < n_video and (nv + 1) * n_audio <= (na + 1) * n_video):
                kinds.append("V")
                nv += 1
            else:
                kinds.append("A")
                na += 1
    else:
        raise ValueError(f"unknown schedule policy {policy!r}")
    offset = 1 if literal_counters else 0
    i_v, i_a, nv, na = [], [], 0, 0
    for kind in kinds:
        nv += kind == "V"
        na += kind == "A"
        i_v.append(nv + offset)
        i_a.append(na + offset)
    return BlockSchedule(tuple(kinds), tuple(i_v), tuple(i_a), literal_counters)


def _make_block(family: str, cfg: ModelConfig, rng: np.random.Generator, zero_init: bool):
    cls = DualStreamBlock if family == "sd3_dual" else WanBlock
    return cls(cfg.dim, cfg.heads, rng, zero_init=zero_init, attn_scale=cfg.attn_scale)


def _run_block(block, x: Tensor, y: Tensor, t_emb: Tensor, rope: np.ndarray) -> tuple[Tensor, Tensor]:
    if isinstance(block, DualStreamBlock):
        return block(x, y, t_emb, rope)
    return block(x, y, t_emb, rope), y


class VideoTower(Module):
    """Patch embedder, video blocks and the unpatchifying output head."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, zero_init: bool = True):
        self.cfg = cfg
        pc = cfg.patch_config
        self.patch = Linear(pc.patch_dim, cfg.dim, rng)
        self.blocks = [_make_block(cfg.video_family, cfg, rng, zero_init)
                       for _ in range(cfg.video_blocks)]
        self.head = Linear(cfg.dim, pc.patch_dim, rng, zero=zero_init)
        self.rope = build_rope_angles("video3d", cfg.rope_layout, frames=cfg.frames,
                                      rows=cfg.height // cfg.patch, cols=cfg.width // cfg.patch)

    def embed(self, v: Tensor) -> Tensor:
        return patchify_video(v, self.cfg.patch_config, self.patch)

    def step(self, index: int, x: Tensor, y: Tensor, t_emb: Tensor) -> tuple[Tensor, Tensor]:
        return _run_block(self.blocks[index], x, y, t_emb, self.rope)

    def run(self, x: Tensor, y0: Tensor, t_emb: Tensor) -> Tensor:
        for i in range(len(self.blocks)):
            x, _ = self.step(i, x, y0, t_emb)
        return x

    def decode(self, x: Tensor) -> Tensor:
        c = self.cfg
        return unpatchify_video(self.head(x), c.patch_config, c.frames, c.height, c.width)

    def __call__(self, v: Tensor, y0: Tensor, t_emb: Tensor) -> Tensor:
        """Standalone video pathway with static text."""
        return self.decode(self.run(self.embed(v), y0, t_emb))


class AudioTower(Module):
    """Audio embedder, audio blocks with 1D RoPE and a linear head back to ``d_a``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, zero_init: bool = True):
        self.cfg = cfg
        self.embedder = AudioEmbed(cfg.audio_config, rng)
        self.blocks = [_make_block(cfg.audio_family, cfg, rng, zero_init)
                       for _ in range(cfg.audio_blocks)]
        self.head = Linear(cfg.dim, cfg.audio_dim, rng, zero=zero_init)
        self.rope = build_rope_angles("audio1d", cfg.rope_layout, length=cfg.audio_len)

    def embed(self, a: Tensor) -> Tensor:
        return self.embedder(a)

    def step(self, index: int, x: Tensor, y: Tensor, t_emb: Tensor) -> tuple[Tensor, Tensor]:
        return _run_block(self.blocks[index], x, y, t_emb, self.rope)

    def run(self, x: Tensor, y0: Tensor, t_emb: Tensor) -> Tensor:
        for i in range(len(self.blocks)):
            x, _ = self.step(i, x, y0, t_emb)
        return x

    def decode(self, x: Tensor) -> Tensor:
        return self.head(x)


class TriModalDiT(Module):
    """Video tower + isomorphic audio tower + omni-blocks, predicting ``(u_v, u_a)``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, zero_init: bool = True):
        self.cfg = cfg
        self.time_embed = TimeEmbedder(cfg.dim, rng)
        self.text_embed = normal(rng, (cfg.vocab_size, cfg.dim), 1.0)
        self.video = VideoTower(cfg, rng, zero_init)
        self.audio = AudioTower(cfg, rng, zero_init)
        self.omni = [OmniBlock(cfg.dim, cfg.heads, rng, zero_init=zero_init,
                               attn_scale=cfg.attn_scale) for _ in range(cfg.omni_blocks)]
        self.schedule = build_schedule(cfg.video_blocks, cfg.audio_blocks, cfg.schedule_policy)

    def embed_text(self, ids: np.ndarray) -> Tensor:
        """Token ids ``[B, L_y]`` -> text stream ``[B, L_y, D]``."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise GeometryError(f"text ids must be [B, L_y], got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise GeometryError("text id outside vocabulary")
        return self.text_embed[ids]

    def _check_geometry(self, v: Tensor, a: Tensor, y0: Tensor) -> None:
        c = self.cfg
        expected_v = (c.channels, c.frames, c.height, c.width)
        if v.ndim != 5 or v.shape[1:] != expected_v:
            raise GeometryError(f"video latent {v.shape} does not match [B, {expected_v}]")
        if a.ndim != 3 or a.shape[1:] != (c.audio_len, c.audio_dim):
            raise GeometryError(f"audio latent {a.shape} does not match [B, {c.audio_len}, {c.audio_dim}]")
        if y0.ndim != 3 or y0.shape[2] != c.dim:
            raise GeometryError(f"text stream {y0.shape} does not have width {c.dim}")
        if not v.shape[0] == a.shape[0] == y0.shape[0]:
            raise GeometryError("batch sizes differ between modalities")

    def forward(self, v: Tensor, a: Tensor, y0: Tensor, sigma, omni_mode: str = "none",
                omni_target: str | None = None) -> tuple[Tensor, Tensor]:
        self._check_geometry(v, a, y0)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (v.shape[0],))
        t_emb = self.time_embed(sigma)
        x_v = self.video.embed(v)
        x_a = self.audio.embed(a)
        if self.cfg.conditioning == "static":
            x_v = self.video.run(x_v, y0, t_emb)
            x_a = self.audio.run(x_a, y0, t_emb)
            y = y0
        else:
            y = y0
            for kind, iv, ia in zip(self.schedule.kinds, self.schedule.i_v, self.schedule.i_a):
                if kind == "V":
                    x_v, y = self.video.step(iv - 1, x_v, y, t_emb)
                else:
                    x_a, y = self.audio.step(ia - 1, x_a, y, t_emb)
        for block in self.omni:
            x_v, y, x_a = block(x_v, y, x_a, t_emb, self.video.rope, self.audio.rope,
                                mode=omni_mode, target=omni_target)
        return self.video.decode(x_v), self.audio.decode(x_a)

    __call__ = forward

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        """Named weights the optimizer may update; the video backbone drops out when frozen."""
        named = list(self.named_parameters())
        if not self.cfg.frozen_video:
            return named
        return [(n, p) for n, p in named if n.split(".")[0] not in BACKBONE_ROOTS]


def trainable_parameters(model: TriModalDiT) -> list[tuple[str, Tensor]]:
    return model.trainable_parameters()
