import numpy as np
import pytest

from tridit.flow import Adam, TrainerConfig, train_step
from tridit.model import ModelConfig, TriModalDiT, build_schedule, trainable_parameters
from tridit.tensor import Tensor
from tridit.tokens import GeometryError


def _count(kinds, kind):
    return [sum(k == kind for k in kinds[:i + 1]) for i in range(len(kinds))]


def test_schedule_examples():
    s = build_schedule(2, 2)
    assert s.kinds == ("V", "A", "V", "A")
    assert s.i_v == (1, 1, 2, 2) and s.i_a == (0, 1, 1, 2)
    assert build_schedule(3, 0).kinds == ("V", "V", "V")
    assert build_schedule(2, 4).kinds == ("V", "A", "V", "A", "A", "A")
    literal = build_schedule(2, 2, literal_counters=True)
    assert literal.i_v == (2, 2, 3, 3) and literal.i_a == (1, 2, 2, 3)


@pytest.mark.parametrize("policy", ["strict_alternate", "video_first_ratio"])
@pytest.mark.parametrize("nv,na", [(0, 0), (1, 3), (5, 2), (30, 8), (4, 4)])
def test_schedule_counts_match_counting_oracle(policy, nv, na):
    s = build_schedule(nv, na, policy)
    assert s.kinds.count("V") == nv and s.kinds.count("A") == na
    assert list(s.i_v) == _count(s.kinds, "V") and list(s.i_a) == _count(s.kinds, "A")


def test_ratio_policy_spreads_audio_blocks():
    kinds = build_schedule(30, 8, "video_first_ratio").kinds
    gaps = np.diff([i for i, k in enumerate(kinds) if k == "A"])
    assert kinds[0] == "V" and gaps.max() - gaps.min() <= 1


def _tiny(**kw):
    base = dict(video_blocks=2, audio_blocks=2, omni_blocks=1, dim=8, heads=2, channels=2,
                frames=2, height=2, width=2, patch=1, audio_len=3, audio_dim=2, vocab_size=4)
    base.update(kw)
    return ModelConfig(**base)


def _inputs(cfg, rng, b=2):
    v = Tensor(rng.standard_normal((b, cfg.channels, cfg.frames, cfg.height, cfg.width)))
    a = Tensor(rng.standard_normal((b, cfg.audio_len, cfg.audio_dim)))
    ids = rng.integers(0, cfg.vocab_size, size=(b, cfg.text_len))
    return v, a, ids, rng.uniform(size=b)


def test_output_shapes_match_inputs(rng):
    cfg = _tiny(conditioning="dynamic")
    model = TriModalDiT(cfg, rng, zero_init=False)
    v, a, ids, sigma = _inputs(cfg, rng)
    u_v, u_a = model(v, a, model.embed_text(ids), sigma)
    assert u_v.shape == v.shape and u_a.shape == a.shape


def test_geometry_errors(rng):
    cfg = _tiny()
    model = TriModalDiT(cfg, rng)
    v, a, ids, sigma = _inputs(cfg, rng)
    with pytest.raises(GeometryError):
        model(Tensor(v.data[:, :, :1]), a, model.embed_text(ids), sigma)
    with pytest.raises(GeometryError):
        model(v, Tensor(a.data[:1]), model.embed_text(ids), sigma)
    with pytest.raises(GeometryError):
        model.embed_text(np.array([[0, 99], [0, 1]]))
    with pytest.raises(ValueError):
        _tiny(conditioning="dynamic", video_family="wan")


@pytest.mark.parametrize("family", ["sd3_dual", "wan"])
def test_video_output_ignores_audio_without_omni_blocks(family, rng):
    cfg = _tiny(omni_blocks=0, video_family=family, audio_family=family)
    model = TriModalDiT(cfg, rng, zero_init=False)
    v, a, ids, sigma = _inputs(cfg, rng)
    y0 = model.embed_text(ids)
    u1, _ = model(v, a, y0, sigma)
    u2, _ = model(v, Tensor(rng.standard_normal(a.shape)), y0, sigma)
    np.testing.assert_array_equal(u1.data, u2.data)
    np.testing.assert_array_equal(u1.data, model.video(v, y0, model.time_embed(sigma)).data)


def test_dynamic_equals_static_when_text_gates_are_zero(rng):
    dyn = TriModalDiT(_tiny(conditioning="dynamic"), rng, zero_init=False)
    d = dyn.cfg.dim
    for tower in (dyn.video, dyn.audio):
        for block in tower.blocks:
            w, b = block.mod_y.proj.weight.data, block.mod_y.proj.bias.data
            for k in (2, 5):  # gate_msa, gate_mlp
                w[:, k * d:(k + 1) * d] = 0.0
                b[k * d:(k + 1) * d] = 0.0
    stat = TriModalDiT(_tiny(conditioning="static"), np.random.default_rng(0))
    stat.load_state_dict(dyn.state_dict())
    v, a, ids, sigma = _inputs(dyn.cfg, rng)
    out_d = dyn(v, a, dyn.embed_text(ids), sigma)
    out_s = stat(v, a, stat.embed_text(ids), sigma)
    for x, y in zip(out_d, out_s):
        np.testing.assert_array_equal(x.data, y.data)


def test_dynamic_mode_follows_schedule(rng, monkeypatch):
    cfg = _tiny(conditioning="dynamic", video_blocks=3, audio_blocks=1)
    model = TriModalDiT(cfg, rng)
    calls = []
    for tower, kind in ((model.video, "V"), (model.audio, "A")):
        original = tower.step

        def step(index, x, y, t, original=original, kind=kind):
            calls.append((kind, index))
            return original(index, x, y, t)
        monkeypatch.setattr(tower, "step", step)
    v, a, ids, sigma = _inputs(cfg, rng)
    model(v, a, model.embed_text(ids), sigma)
    assert calls == [("V", 0), ("A", 0), ("V", 1), ("V", 2)]


def test_wan_plug_in_trainable_set(rng):
    cfg = ModelConfig(video_blocks=30, audio_blocks=8, omni_blocks=8, dim=4, heads=1,
                      video_family="wan", audio_family="wan", frozen_video=True, channels=1,
                      frames=1, height=2, width=2, patch=2, audio_len=2, audio_dim=1, vocab_size=2)
    model = TriModalDiT(cfg, rng)
    names = [n for n, _ in trainable_parameters(model)]
    assert not any(n.startswith("video.") for n in names)
    audio_blocks = {n.split(".")[2] for n in names if n.startswith("audio.blocks.")}
    omni = {n.split(".")[1] for n in names if n.startswith("omni.")}
    assert audio_blocks == {str(i) for i in range(8)} and omni == {str(i) for i in range(8)}
    assert any(n.startswith("audio.embedder.") for n in names)
    assert any(n.startswith("audio.head.") for n in names)
    unfrozen = TriModalDiT(_tiny(), rng)
    assert len(trainable_parameters(unfrozen)) == len(list(unfrozen.named_parameters()))


def test_frozen_training_step_leaves_video_bitwise(rng):
    cfg = _tiny(frozen_video=True, conditioning="dynamic")
    model = TriModalDiT(cfg, rng, zero_init=False)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    opt = Adam(model.trainable_parameters(), lr=1e-2)
    batch = {"video": rng.standard_normal((2, 2, 2, 2, 2)), "audio": rng.standard_normal((2, 3, 2)),
             "text": rng.integers(1, 4, size=(2, 2)), "null_text": np.zeros(2, dtype=int)}
    train_step(model, batch, TrainerConfig(), opt, 0, rng)
    moved = []
    for n, p in model.named_parameters():
        if n.split(".")[0] in ("video", "time_embed", "text_embed"):
            assert np.array_equal(p.data, before[n]), n
        else:
            moved.append(not np.array_equal(p.data, before[n]))
    assert sum(moved) > len(moved) // 2


def test_state_dict_round_trip_and_mismatch(rng):
    a = TriModalDiT(_tiny(), rng, zero_init=False)
    b = TriModalDiT(_tiny(), np.random.default_rng(99))
    b.load_state_dict(a.state_dict())
    for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    state = a.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(KeyError):
        b.load_state_dict(state)
