import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tridit.flow import (Adam, caption_dropout, fm_loss, interpolate, loss_weight, make_flow_sample,
                         modality_mask_plan, p_mask, target_velocity)
from tridit.nn import Module, param
from tridit.tensor import Tensor


def test_interpolant_endpoints_and_midpoint(rng):
    v, a = rng.standard_normal((2, 3)), rng.standard_normal((2, 4))
    s0 = make_flow_sample(v, a, rng, sigma=0.0)
    np.testing.assert_array_equal(s0.v_sigma, v)
    np.testing.assert_array_equal(s0.a_sigma, a)
    s1 = make_flow_sample(v, a, rng, sigma=1.0)
    np.testing.assert_array_equal(s1.v_sigma, s1.eps_v)
    np.testing.assert_array_equal(s1.a_sigma, s1.eps_a)
    assert interpolate(np.array([2.0]), np.array([0.0]), 0.5)[0] == 1.0


def test_flow_sample_rejects_non_finite(rng):
    with pytest.raises(ValueError):
        make_flow_sample(np.array([[np.nan]]), np.zeros((1, 1)), rng)


def test_target_velocity_examples(rng):
    s = make_flow_sample(np.array([[3.0]]), np.zeros((1, 2)), rng, sigma=0.3)
    s.eps_v = np.array([[1.0]])
    u_v, u_a = target_velocity(s)
    assert u_v[0, 0] == -2.0
    np.testing.assert_array_equal(u_a, s.eps_a)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-5, 5), e=st.floats(-5, 5), s=st.floats(0.01, 0.99))
def test_target_is_path_derivative(x, e, s):
    h = 1e-6
    deriv = (interpolate(np.array([x]), np.array([e]), s + h) -
             interpolate(np.array([x]), np.array([e]), s - h)) / (2 * h)
    assert abs(deriv[0] - (e - x)) < 1e-6


def test_fm_loss_examples():
    t_v, t_a = np.zeros((1, 1)), np.zeros((1, 1))
    assert float(fm_loss((Tensor(t_v), Tensor(t_a)), (t_v, t_a), np.ones(1)).data) == 0.0
    one = fm_loss((Tensor(np.ones((1, 1))), Tensor(t_a)), (t_v, t_a), np.ones(1))
    assert float(one.data) == 1.0
    half = fm_loss((Tensor(np.ones((1, 1))), Tensor(t_a)), (t_v, t_a), loss_weight(np.array([0.5]), "sigma_one_minus_sigma"))
    assert float(half.data) == 0.25


def test_fm_loss_reduction_and_permutation(rng):
    pv, pa = rng.standard_normal((3, 2, 2)), rng.standard_normal((3, 5))
    tv, ta = rng.standard_normal((3, 2, 2)), rng.standard_normal((3, 5))
    w = rng.uniform(size=3)
    got = float(fm_loss((Tensor(pv), Tensor(pa)), (tv, ta), w).data)
    want = np.mean(w * (((pv - tv) ** 2).reshape(3, -1).mean(1) + ((pa - ta) ** 2).mean(1)))
    assert abs(got - want) < 1e-14
    perm = np.array([2, 0, 1])
    permuted = float(fm_loss((Tensor(pv[perm]), Tensor(pa[perm])), (tv[perm], ta[perm]), w[perm]).data)
    assert abs(permuted - got) < 1e-14
    with pytest.raises(ValueError):
        fm_loss((Tensor(pv), Tensor(pa)), (tv[:2], ta), w)


def test_weighting_values():
    for s in (0.25, 0.5, 0.75):
        assert abs(loss_weight(s, "sigma_one_minus_sigma") - s * (1 - s)) <= 1e-12
    assert np.all(loss_weight(np.linspace(0.01, 0.99, 9), "sigma_one_minus_sigma") > 0)
    assert loss_weight(0.3) == 1.0


def test_zero_predictor_loss_matches_closed_form(rng):
    # data ~ N(0,1), noise ~ N(0,1): target eps - x has variance 2 per element, per modality
    v = rng.standard_normal((4000, 6))
    a = rng.standard_normal((4000, 3))
    s = make_flow_sample(v, a, rng)
    tv, ta = target_velocity(s)
    loss = float(fm_loss((Tensor(np.zeros_like(tv)), Tensor(np.zeros_like(ta))), (tv, ta), np.ones(4000)).data)
    assert abs(loss - 4.0) < 0.1


def test_caption_dropout_extremes_and_rate(rng):
    cond, null = np.arange(1, 7).reshape(3, 2), np.zeros(2, dtype=int)
    out, m = caption_dropout(cond, null, 0.0, rng)
    np.testing.assert_array_equal(out, cond)
    assert not m.any()
    out, m = caption_dropout(cond, null, 1.0, rng)
    assert not out.any() and m.all()
    _, m = caption_dropout(np.ones((10_000, 2)), np.zeros(2), 0.5, np.random.default_rng(5))
    assert abs(m.mean() - 0.5) <= 0.02


def test_mask_schedule():
    assert p_mask(0, 500) == 1.0 and p_mask(250, 500) == 0.5
    assert p_mask(500, 500) == 0.0 and p_mask(900, 500) == 0.0
    r = np.random.default_rng(0)
    assert all(modality_mask_plan(600, "mask", 500, r) == ("none", None) for _ in range(50))
    plans = [modality_mask_plan(0, "drop", 500, r) for _ in range(400)]
    assert all(mode == "drop" for mode, _ in plans)
    frac_audio = np.mean([t == "audio" for _, t in plans])
    assert 0.4 < frac_audio < 0.6
    hits = np.mean([modality_mask_plan(250, "mask", 500, r)[0] == "mask" for _ in range(4000)])
    assert abs(hits - 0.5) < 0.03
    assert modality_mask_plan(0, "none", 500, r) == ("none", None)


class _Scalar(Module):
    def __init__(self):
        self.theta = param(np.array([0.0]))


def test_adam_decreases_convex_loss():
    m = _Scalar()
    opt = Adam(list(m.named_parameters()), lr=0.05)
    losses = []
    for _ in range(30):
        m.zero_grad()
        loss = ((m.theta - 2.0) ** 2).sum()
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_first_step_is_lr_times_sign_and_warmup():
    m = _Scalar()
    opt = Adam(list(m.named_parameters()), lr=0.1, warmup=4)
    assert opt.current_lr() == pytest.approx(0.025)
    ((m.theta - 5.0) ** 2).sum().backward()
    opt.step()
    assert m.theta.data[0] == pytest.approx(0.025, rel=1e-6)
    assert opt.current_lr(10) == 0.1
