"""Joint attention and the three block families (dual-stream, Wan-style, omni)."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .modulation import LN_EPS, ModulationSlots, SlotMLP, gated_residual, modulated_ln
from .nn import MLP, Module, normal, zeros
from .tensor import Tensor, concat, layernorm_noaffine, softmax_lastdim, split
from .tokens import apply_rope

ATTN_SCALES = ("per_head", "full_width")
OMNI_MODES = ("none", "mask", "drop")

RopePlan = Sequence[tuple[tuple[int, int], np.ndarray]]


class AttentionWeights(Module):
    """Bias-free Q/K/V/O projections, each ``[D, D]``."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, zero_out: bool = False,
                 attn_scale: str = "per_head"):
        if dim % n_heads:
            raise ValueError(f"model width {dim} not divisible by {n_heads} heads")
        if attn_scale not in ATTN_SCALES:
            raise ValueError(f"attn_scale must be one of {ATTN_SCALES}")
        self.n_heads = n_heads
        self.attn_scale = attn_scale
        std = 1.0 / np.sqrt(dim)
        self.wq = normal(rng, (dim, dim), std)
        self.wk = normal(rng, (dim, dim), std)
        self.wv = normal(rng, (dim, dim), std)
        self.wo = zeros((dim, dim)) if zero_out else normal(rng, (dim, dim), std)
        # when a list, every attention probability tensor is appended to it
        self.probe: list[np.ndarray] | None = None

    def scale(self, dim: int) -> float:
        d = dim // self.n_heads if self.attn_scale == "per_head" else dim
        return 1.0 / np.sqrt(d)


def _heads(x: Tensor, n_heads: int) -> Tensor:
    b, length, d = x.shape
    return x.reshape(b, length, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _attend(q: Tensor, k: Tensor, v: Tensor, w: AttentionWeights,
            key_mask: np.ndarray | None = None) -> Tensor:
    b, _, lq, dh = q.shape
    dim = dh * w.n_heads
    logits = (q @ k.swapaxes(-1, -2)) * w.scale(dim)
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool).reshape(1, 1, 1, -1)
    probs = softmax_lastdim(logits, mask)
    if w.probe is not None:
        w.probe.append(probs.data)
    h = (probs @ v).transpose(0, 2, 1, 3).reshape(b, lq, dim)
    return h @ w.wo


def joint_attention(z: Tensor, w: AttentionWeights, rope_plan: RopePlan = (),
                    key_mask: np.ndarray | None = None) -> Tensor:
    """Multi-head self-attention over ``z`` with RoPE restricted to the listed spans.

    ``key_mask`` is a boolean ``[L]``; False keys are excluded from every query.
    """
    q = _heads(z @ w.wq, w.n_heads)
    k = _heads(z @ w.wk, w.n_heads)
    v = _heads(z @ w.wv, w.n_heads)
    for span, angles in rope_plan:
        q = apply_rope(q, angles, span)
        k = apply_rope(k, angles, span)
    return _attend(q, k, v, w, key_mask)


def cross_attention(x: Tensor, context: Tensor, w: AttentionWeights) -> Tensor:
    """Queries from LN(x), keys from LN(context), values from the raw context."""
    q = _heads(layernorm_noaffine(x, LN_EPS) @ w.wq, w.n_heads)
    k = _heads(layernorm_noaffine(context, LN_EPS) @ w.wk, w.n_heads)
    v = _heads(context @ w.wv, w.n_heads)
    return _attend(q, k, v, w)


def _stream_update(h: Tensor, attn_out: Tensor, slots: ModulationSlots, mlp: MLP) -> Tensor:
    # the MLP reads the stream after the gated attention residual
    h = gated_residual(h, attn_out, slots.gate_msa)
    hidden = mlp(modulated_ln(h, slots.shift_mlp, slots.scale_mlp))
    return gated_residual(h, hidden, slots.gate_mlp)


# ---- SD3-style dual stream -------------------------------------------------------

class DualStreamBlock(Module):
    """Joint attention over ``[x; y]`` that writes gated residuals to both streams."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, zero_init: bool = True,
                 attn_scale: str = "per_head"):
        self.attn = AttentionWeights(dim, n_heads, rng, attn_scale=attn_scale)
        self.mod_x = SlotMLP(dim, rng, zero=zero_init)
        self.mod_y = SlotMLP(dim, rng, zero=zero_init)
        self.mlp_x = MLP(dim, rng)
        self.mlp_y = MLP(dim, rng)

    def __call__(self, x: Tensor, y: Tensor, t_emb: Tensor,
                 rope_x: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        return dual_stream_block(x, y, self.mod_x(t_emb), self.mod_y(t_emb), rope_x, self)


def dual_stream_block(x: Tensor, y: Tensor, slots_x: ModulationSlots, slots_y: ModulationSlots,
                      rope_x: np.ndarray | None, block: DualStreamBlock) -> tuple[Tensor, Tensor]:
    if x.shape[0] != y.shape[0] or x.shape[2] != y.shape[2]:
        raise ValueError(f"incompatible streams {x.shape} and {y.shape}")
    lx, ly = x.shape[1], y.shape[1]
    z = concat([modulated_ln(x, slots_x.shift_msa, slots_x.scale_msa),
                modulated_ln(y, slots_y.shift_msa, slots_y.scale_msa)], axis=1)
    plan = [] if rope_x is None else [((0, lx), rope_x)]
    o_x, o_y = split(joint_attention(z, block.attn, plan), [lx, ly], axis=1)
    return (_stream_update(x, o_x, slots_x, block.mlp_x),
            _stream_update(y, o_y, slots_y, block.mlp_y))


# ---- Wan-style, read-only text -----------------------------------------------------

class WanBlock(Module):
    """Self-attention, ungated cross-attention to frozen text, AdaLN-MLP.

    ``zero_init`` closes both gates and zeroes the cross-attention output
    projection, which makes a fresh block an exact identity.
    """

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, zero_init: bool = True,
                 attn_scale: str = "per_head"):
        self.self_attn = AttentionWeights(dim, n_heads, rng, attn_scale=attn_scale)
        self.cross_attn = AttentionWeights(dim, n_heads, rng, zero_out=zero_init,
                                           attn_scale=attn_scale)
        self.mod = SlotMLP(dim, rng, zero=zero_init)
        self.mlp = MLP(dim, rng)

    def __call__(self, x: Tensor, y: Tensor, t_emb: Tensor,
                 rope: np.ndarray | None = None) -> Tensor:
        return wan_block(x, y, self.mod(t_emb), rope, self)


def wan_block(x: Tensor, y: Tensor, slots: ModulationSlots, rope: np.ndarray | None,
              block: WanBlock) -> Tensor:
    length = x.shape[1]
    x_msa = modulated_ln(x, slots.shift_msa, slots.scale_msa)
    plan = [] if rope is None else [((0, length), rope)]
    x_tilde = gated_residual(x, joint_attention(x_msa, block.self_attn, plan), slots.gate_msa)
    if y.shape[1] > 0:
        x_hat = x_tilde + cross_attention(x_tilde, y, block.cross_attn)
    else:
        x_hat = x_tilde
    hidden = block.mlp(modulated_ln(x_hat, slots.shift_mlp, slots.scale_mlp))
    return gated_residual(x_hat, hidden, slots.gate_mlp)


# ---- tri-modal omni-block ----------------------------------------------------------

class OmniBlock(Module):
    """Joint attention over ``[v; y; a]`` with per-modality AdaLN slots and MLPs."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, zero_init: bool = True,
                 attn_scale: str = "per_head"):
        self.attn = AttentionWeights(dim, n_heads, rng, attn_scale=attn_scale)
        self.mod_v = SlotMLP(dim, rng, zero=zero_init)
        self.mod_y = SlotMLP(dim, rng, zero=zero_init)
        self.mod_a = SlotMLP(dim, rng, zero=zero_init)
        self.mlp_v = MLP(dim, rng)
        self.mlp_y = MLP(dim, rng)
        self.mlp_a = MLP(dim, rng)

    def __call__(self, v: Tensor, y: Tensor, a: Tensor, t_emb: Tensor,
                 rope_v: np.ndarray | None = None, rope_a: np.ndarray | None = None,
                 mode: str = "none", target: str | None = None) -> tuple[Tensor, Tensor, Tensor]:
        slots = (self.mod_v(t_emb), self.mod_y(t_emb), self.mod_a(t_emb))
        return omni_block(v, y, a, slots, rope_v, rope_a, self, mode=mode, target=target)


def omni_block(v: Tensor, y: Tensor, a: Tensor,
               slots: tuple[ModulationSlots, ModulationSlots, ModulationSlots],
               rope_v: np.ndarray | None, rope_a: np.ndarray | None, block: OmniBlock,
               mode: str = "none", target: str | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """One omni-block step.

    ``mode="mask"`` zeroes the ``target`` span ("audio" or "video") of the
    attention input; ``mode="drop"`` leaves it out of the attention entirely
    and passes that modality through unchanged.
    """
    if mode not in OMNI_MODES:
        raise ValueError(f"omni mode must be one of {OMNI_MODES}, got {mode!r}")
    if mode != "none" and target not in ("audio", "video"):
        raise ValueError(f"{mode} mode removes exactly one of 'audio'/'video', got {target!r}")
    s_v, s_y, s_a = slots
    lv, ly, la = v.shape[1], y.shape[1], a.shape[1]
    m_v = modulated_ln(v, s_v.shift_msa, s_v.scale_msa)
    m_y = modulated_ln(y, s_y.shift_msa, s_y.scale_msa)
    m_a = modulated_ln(a, s_a.shift_msa, s_a.scale_msa)

    if mode == "drop":
        if target == "audio":
            z = concat([m_v, m_y], axis=1)
            plan = [] if rope_v is None else [((0, lv), rope_v)]
            o_v, o_y = split(joint_attention(z, block.attn, plan), [lv, ly], axis=1)
            return (_stream_update(v, o_v, s_v, block.mlp_v),
                    _stream_update(y, o_y, s_y, block.mlp_y), a)
        z = concat([m_y, m_a], axis=1)
        plan = [] if rope_a is None else [((ly, ly + la), rope_a)]
        o_y, o_a = split(joint_attention(z, block.attn, plan), [ly, la], axis=1)
        return (v, _stream_update(y, o_y, s_y, block.mlp_y),
                _stream_update(a, o_a, s_a, block.mlp_a))

    z = concat([m_v, m_y, m_a], axis=1)
    if mode == "mask":
        keep = np.ones((1, lv + ly + la, 1))
        if target == "audio":
            keep[:, lv + ly:] = 0.0
        else:
            keep[:, :lv] = 0.0
        z = z * keep
    plan = []
    if rope_v is not None:
        plan.append(((0, lv), rope_v))
    if rope_a is not None:
        plan.append(((lv + ly, lv + ly + la), rope_a))
    o_v, o_y, o_a = split(joint_attention(z, block.attn, plan), [lv, ly, la], axis=1)
    return (_stream_update(v, o_v, s_v, block.mlp_v),
            _stream_update(y, o_y, s_y, block.mlp_y),
            _stream_update(a, o_a, s_a, block.mlp_a))
