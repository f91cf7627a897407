import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import autograd, numeric_grad
from tridit.nn import Linear
from tridit.tensor import Tensor
from tridit.tokens import (AudioEmbed, AudioEmbedConfig, GeometryError, PatchConfig, RopeLayout,
                           apply_rope, build_rope_angles, patchify_video, unpatchify_video)


def test_patchify_round_trip_and_order(rng):
    cfg = PatchConfig(2, 2, channels=3)
    v = rng.standard_normal((2, 3, 4, 4, 6))
    tok = patchify_video(Tensor(v), cfg)
    assert tok.shape == (2, 4 * 2 * 3, 12)
    # token 1 is frame 0, patch row 0, patch column 1; features are (c, row, col)
    np.testing.assert_array_equal(tok.data[0, 1].reshape(3, 2, 2), v[0, :, 0, 0:2, 2:4])
    # token 3 starts patch row 1 of frame 0, token 6 starts frame 1
    np.testing.assert_array_equal(tok.data[1, 3].reshape(3, 2, 2), v[1, :, 0, 2:4, 0:2])
    np.testing.assert_array_equal(tok.data[0, 6].reshape(3, 2, 2), v[0, :, 1, 0:2, 0:2])
    back = unpatchify_video(tok, cfg, 4, 4, 6)
    np.testing.assert_array_equal(back.data, v)


def test_token_count_for_large_latent():
    cfg = PatchConfig(16, 16, channels=16)
    assert cfg.num_tokens(97, 288, 512) == 55_872


def test_patchify_rejects_bad_geometry(rng):
    with pytest.raises(GeometryError):
        patchify_video(Tensor(rng.standard_normal((1, 4, 2, 5, 4))), PatchConfig())
    with pytest.raises(GeometryError):
        patchify_video(Tensor(rng.standard_normal((1, 3, 2, 4, 4))), PatchConfig())


def test_patch_projection_is_linear_in_tokens(rng):
    cfg = PatchConfig(2, 2, channels=2, dim=5)
    proj = Linear(cfg.patch_dim, 5, rng)
    v = rng.standard_normal((1, 2, 1, 2, 2))
    out = patchify_video(Tensor(v), cfg, proj).data
    np.testing.assert_allclose(out[0, 0], v[0, :, 0].reshape(-1) @ proj.weight.data + proj.bias.data)


def test_audio_embed_starts_as_plain_projection(rng):
    emb = AudioEmbed(AudioEmbedConfig(d_audio=3, dim=4, kernel=3, depth=2), rng)
    a = rng.standard_normal((2, 7, 3))
    out = emb(Tensor(a)).data
    np.testing.assert_array_equal(out, emb.proj(Tensor(a)).data)
    assert out.shape == (2, 7, 4)


def test_audio_positional_encoder_preserves_length_and_grads(rng):
    emb = AudioEmbed(AudioEmbedConfig(d_audio=2, dim=3, kernel=3, depth=2), rng)
    emb.pos[-1].weight.data = rng.standard_normal(emb.pos[-1].weight.shape)
    a = rng.standard_normal((1, 5, 2))
    w = rng.standard_normal((1, 5, 3))
    _, (g,) = autograd(lambda x: (emb(x) * w).sum(), [a])
    (want,) = numeric_grad(lambda x: float((emb(Tensor(x)).data * w).sum()), [a.copy()])
    np.testing.assert_allclose(g, want, rtol=1e-7, atol=1e-8)


def test_rope_split_largest_remainder():
    assert RopeLayout(8).split == (4, 2, 2)
    assert RopeLayout(16).split == (8, 4, 4)
    # five pairs at 1:1:1, leftovers to t then h
    assert RopeLayout(10, (1, 1, 1)).split == (4, 4, 2)
    assert RopeLayout(6, (2, 1, 1)).split == (2, 2, 2)
    assert sum(RopeLayout(12, (3, 2, 1)).split) == 12


def test_rope_position_zero_is_identity(rng):
    layout = RopeLayout(4)
    angles = build_rope_angles("audio1d", layout, length=1)
    x = Tensor(rng.standard_normal((1, 1, 1, 4)))
    np.testing.assert_array_equal(apply_rope(x, angles, (0, 1)).data, x.data)


def test_rope_leaves_outside_span_untouched(rng):
    layout = RopeLayout(4)
    x = Tensor(rng.standard_normal((2, 2, 6, 4)))
    out = apply_rope(x, build_rope_angles("audio1d", layout, length=3), (2, 5)).data
    np.testing.assert_array_equal(out[:, :, :2], x.data[:, :, :2])
    np.testing.assert_array_equal(out[:, :, 5:], x.data[:, :, 5:])
    np.testing.assert_allclose(np.linalg.norm(out, axis=-1), np.linalg.norm(x.data, axis=-1))


def _rotate_by_hand(vec, pos, base=10000.0):
    """Dense 2x2 rotation of adjacent pairs, written independently of apply_rope."""
    out = vec.copy()
    for k in range(len(vec) // 2):
        theta = pos * base ** (-2.0 * k / len(vec))
        c, s = np.cos(theta), np.sin(theta)
        out[2 * k] = c * vec[2 * k] - s * vec[2 * k + 1]
        out[2 * k + 1] = s * vec[2 * k] + c * vec[2 * k + 1]
    return out


def test_rope_matches_hand_rotation_and_depends_only_on_offset(rng):
    layout = RopeLayout(4)
    angles = build_rope_angles("audio1d", layout, length=8)
    q, k = rng.standard_normal(4), rng.standard_normal(4)
    rq = apply_rope(Tensor(np.tile(q, (1, 1, 8, 1))), angles, (0, 8)).data[0, 0]
    rk = apply_rope(Tensor(np.tile(k, (1, 1, 8, 1))), angles, (0, 8)).data[0, 0]
    for m in range(8):
        np.testing.assert_allclose(rq[m], _rotate_by_hand(q, m), atol=1e-12)
    # brute force over every pair of positions 0..7
    by_offset = {}
    for m in range(8):
        for n in range(8):
            by_offset.setdefault(m - n, []).append(rq[m] @ rk[n])
    for vals in by_offset.values():
        np.testing.assert_allclose(vals, vals[0], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(0, 40), n=st.integers(0, 40), s=st.integers(0, 40), seed=st.integers(0, 2 ** 31))
def test_rope_shift_invariance(m, n, s, seed):
    r = np.random.default_rng(seed)
    q, k = r.standard_normal(8), r.standard_normal(8)
    layout = RopeLayout(8)
    angles = build_rope_angles("audio1d", layout, length=81)

    def rot(v, p):
        return apply_rope(Tensor(v.reshape(1, 1, 1, 8)), angles[p:p + 1], (0, 1)).data.ravel()
    assert abs(rot(q, m) @ rot(k, n) - rot(q, m + s) @ rot(k, n + s)) < 1e-9


def test_video_rope_axes_are_separate():
    layout = RopeLayout(8)
    angles = build_rope_angles("video3d", layout, frames=2, rows=2, cols=3)
    assert angles.shape == (12, 4)
    d_t, d_h, _ = layout.split
    # token index = f*6 + i*3 + j; the temporal block only sees f
    np.testing.assert_array_equal(angles[7, :d_t // 2], angles[6, :d_t // 2])
    np.testing.assert_array_equal(angles[0, d_t // 2:], angles[6, d_t // 2:])
    assert angles[0, d_t // 2 + d_h // 2] == 0 and angles[1, d_t // 2 + d_h // 2] == 1.0


def test_rope_gradient(rng):
    angles = build_rope_angles("audio1d", RopeLayout(4), length=3)
    x = rng.standard_normal((1, 1, 4, 4))
    w = rng.standard_normal(x.shape)
    _, (g,) = autograd(lambda t: (apply_rope(t, angles, (1, 4)) * w).sum(), [x])
    (want,) = numeric_grad(lambda a: float((apply_rope(Tensor(a), angles, (1, 4)).data * w).sum()), [x.copy()])
    np.testing.assert_allclose(g, want, atol=1e-8)
