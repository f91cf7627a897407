"""Property suite run by ``tridit check`` and by the acceptance tests.

Each check returns a :class:`CheckResult`; none of them raise on failure.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .blocks import DualStreamBlock, OmniBlock, WanBlock
from .flow import fm_loss, interpolate, loss_weight
from .metrics import av_align, frechet_distance, frechet_from_embeddings
from .model import ModelConfig, TriModalDiT, build_schedule
from .sampler import SamplerConfig, integrate
from .tensor import RngStream, Tensor
from .tokens import RopeLayout, build_rope_angles


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - start)


def _rng(seed: int, name: str, i: int = 0) -> np.random.Generator:
    return RngStream(seed, name).generator(i)


# ---- zero-gate identity ---------------------------------------------------------

def _block_case(family: str, rng: np.random.Generator, zero_init: bool, dim: int = 8, heads: int = 2):
    b, lx, ly, la = 2, int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(2, 6))
    x = Tensor(rng.standard_normal((b, lx, dim)))
    y = Tensor(rng.standard_normal((b, ly, dim)))
    a = Tensor(rng.standard_normal((b, la, dim)))
    t_emb = Tensor(rng.standard_normal((b, dim)))
    layout = RopeLayout(dim // heads)
    rope_x = build_rope_angles("audio1d", layout, length=lx)
    rope_a = build_rope_angles("audio1d", layout, length=la)
    if family == "sd3_dual":
        block = DualStreamBlock(dim, heads, rng, zero_init=zero_init)
        run = lambda: block(x, y, t_emb, rope_x)  # noqa: E731
        inputs = (x, y)
    elif family == "wan":
        block = WanBlock(dim, heads, rng, zero_init=zero_init)
        run = lambda: (block(x, y, t_emb, rope_x),)  # noqa: E731
        inputs = (x,)
    else:
        block = OmniBlock(dim, heads, rng, zero_init=zero_init)
        run = lambda: block(x, y, a, t_emb, rope_x, rope_a)  # noqa: E731
        inputs = (x, y, a)
    return block, run, inputs, (x, y, a, t_emb)


FAMILIES = ("sd3_dual", "wan", "omni")


def check_zero_gate_identity(instances: int = 50, seed: int = 0) -> CheckResult:
    def body():
        for i in range(instances):
            for family in FAMILIES:
                _, run, inputs, _ = _block_case(family, _rng(seed, f"zero-gate-{family}", i), True)
                for out, inp in zip(run(), inputs):
                    if not np.array_equal(out.data, inp.data):
                        return False, f"{family} instance {i} changed its input"
        return True, f"{instances} instances x {len(FAMILIES)} families bitwise identical"
    return _timed("zero_gate_identity", body)


# ---- plug-in orthogonality --------------------------------------------------------

def _orthogonality_config(rng: np.random.Generator) -> ModelConfig:
    family = ("sd3_dual", "wan")[int(rng.integers(2))]
    return ModelConfig(video_blocks=int(rng.integers(1, 3)), audio_blocks=int(rng.integers(0, 3)),
                       omni_blocks=0, dim=16, heads=2, video_family=family,
                       audio_family=family, conditioning="static", channels=2,
                       frames=int(rng.integers(1, 5)), height=4, width=4, patch=2,
                       audio_len=int(rng.integers(2, 9)), audio_dim=3, text_len=2, vocab_size=5)


def check_orthogonality(instances: int = 20, seed: int = 0) -> CheckResult:
    def body():
        for i in range(instances):
            rng = _rng(seed, "orthogonality", i)
            cfg = _orthogonality_config(rng)
            model = TriModalDiT(cfg, rng, zero_init=False)
            b = 2
            v = Tensor(rng.standard_normal((b, cfg.channels, cfg.frames, cfg.height, cfg.width)))
            a = Tensor(rng.standard_normal((b, cfg.audio_len, cfg.audio_dim)))
            ids = rng.integers(0, cfg.vocab_size, size=(b, cfg.text_len))
            sigma = rng.uniform(size=b)
            y0 = model.embed_text(ids)
            joint_v, _ = model(v, a, y0, sigma)
            alone = model.video(v, y0, model.time_embed(sigma))
            if not np.array_equal(joint_v.data, alone.data):
                return False, f"instance {i}: joint video output differs from standalone tower"
        return True, f"{instances} random models: joint video == standalone tower bitwise"
    return _timed("plug_in_orthogonality", body)


# ---- gradients ---------------------------------------------------------------------

def _directional_check(loss_fn: Callable[[], Tensor], groups: list[tuple[str, list[Tensor]]],
                       rng: np.random.Generator, h: float = 1e-3) -> tuple[float, str]:
    """Worst relative error between ``grad . d`` and a finite difference along random ``d``.

    Each group of tensors is perturbed jointly. The difference uses the
    fourth-order five-point stencil, which keeps both truncation and
    round-off far below the tolerance for small directional derivatives.
    """
    for _, ts in groups:
        for t in ts:
            t.grad = None
            t.requires_grad = True
    loss = loss_fn()
    loss.backward()
    worst, worst_name = 0.0, ""
    for name, ts in groups:
        dirs = [rng.standard_normal(t.shape) for t in ts]
        analytic = sum(float(np.sum(t.grad * d)) for t, d in zip(ts, dirs) if t.grad is not None)
        bases = [t.data.copy() for t in ts]
        vals = {}
        for k in (-2, -1, 1, 2):
            for t, base, d in zip(ts, bases, dirs):
                t.data = base + k * h * d
            vals[k] = float(loss_fn().data)
        for t, base in zip(ts, bases):
            t.data = base
        numeric = (vals[-2] - 8 * vals[-1] + 8 * vals[1] - vals[2]) / (12 * h)
        scale = max(abs(analytic), abs(numeric), 1e-6)
        err = abs(analytic - numeric) / scale
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name


def _group_by_prefix(named: list[tuple[str, Tensor]], depth: int) -> list[tuple[str, list[Tensor]]]:
    groups: dict[str, list[Tensor]] = {}
    for name, t in named:
        groups.setdefault(".".join(name.split(".")[:depth]), []).append(t)
    return list(groups.items())


def _weighted_sum(outputs, weights) -> Tensor:
    total = None
    for o, w in zip(outputs, weights):
        term = (o * w).sum()
        total = term if total is None else total + term
    return total


def tiny_model_config() -> ModelConfig:
    return ModelConfig(video_blocks=2, audio_blocks=2, omni_blocks=1, dim=8, heads=1,
                       conditioning="dynamic", channels=2, frames=2, height=2, width=2, patch=1,
                       audio_len=4, audio_dim=2, text_len=2, vocab_size=4)


def check_gradients(instances: int = 10, seed: int = 0, tol: float = 1e-5) -> CheckResult:
    def body():
        worst_all = 0.0
        for i in range(instances):
            for family in FAMILIES:
                rng = _rng(seed, f"grad-{family}", i)
                block, run, _, inputs = _block_case(family, rng, zero_init=False)
                weights = [rng.standard_normal(o.shape) for o in run()]
                named = list(block.named_parameters()) + [(f"input{k}", t) for k, t in enumerate(inputs)]
                err, where = _directional_check(lambda: _weighted_sum(run(), weights),
                                                [(n, [t]) for n, t in named], rng)
                worst_all = max(worst_all, err)
                if err > tol:
                    return False, f"{family} instance {i}: relative error {err:.2e} at {where}"
            rng = _rng(seed, "grad-model", i)
            cfg = tiny_model_config()
            model = TriModalDiT(cfg, rng, zero_init=False)
            v = Tensor(rng.standard_normal((2, cfg.channels, cfg.frames, cfg.height, cfg.width)))
            a = Tensor(rng.standard_normal((2, cfg.audio_len, cfg.audio_dim)))
            ids = rng.integers(0, cfg.vocab_size, size=(2, cfg.text_len))
            sigma = rng.uniform(size=2)
            run = lambda: model(v, a, model.embed_text(ids), sigma)  # noqa: E731
            weights = [rng.standard_normal(o.shape) for o in run()]
            # one joint direction per sub-module; single tensors are covered per block above
            named = list(model.named_parameters()) + [("video_in", v), ("audio_in", a)]
            err, where = _directional_check(lambda: _weighted_sum(run(), weights),
                                            _group_by_prefix(named, 3), rng)
            worst_all = max(worst_all, err)
            if err > tol:
                return False, f"model instance {i}: relative error {err:.2e} at {where}"
        return True, f"worst relative error {worst_all:.2e} < {tol:g}"
    return _timed("gradient_check", body)


# ---- sampler order --------------------------------------------------------------------

ORDER_STEPS = (8, 16, 32, 64)


def sampler_errors(solver: str, steps=ORDER_STEPS) -> list[float]:
    """Relative final error on dx/dsigma = x from sigma=1 to 0, whose exact answer is x(1)/e."""
    x1 = np.array([1.0, -2.0, 0.5])
    exact = x1 * math.exp(-1.0)
    errs = []
    for n in steps:
        (x0,) = integrate(lambda s, sig: (s[0],), (x1,), SamplerConfig(steps=n, solver=solver))
        errs.append(float(np.linalg.norm(x0 - exact) / np.linalg.norm(exact)))
    return errs


def convergence_order(errors, steps=ORDER_STEPS) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(steps, dtype=float)), np.log(errors), 1)
    return float(-slope)


def check_sampler_order() -> CheckResult:
    def body():
        e_euler, e_heun = sampler_errors("euler"), sampler_errors("heun")
        p_euler, p_heun = convergence_order(e_euler), convergence_order(e_heun)
        ok = 0.9 <= p_euler <= 1.1 and 1.8 <= p_heun <= 2.2 and e_heun[-1] < 1e-4
        return ok, f"euler order {p_euler:.3f}, heun order {p_heun:.3f}, heun error@64 {e_heun[-1]:.2e}"
    return _timed("sampler_order", body)


# ---- flow-matching contract ------------------------------------------------------------

def check_flow_contract(seed: int = 0) -> CheckResult:
    def body():
        rng = _rng(seed, "flow")
        x = rng.standard_normal((3, 5))
        eps = rng.standard_normal((3, 5))
        if not (np.array_equal(interpolate(x, eps, 0.0), x) and np.array_equal(interpolate(x, eps, 1.0), eps)):
            return False, "interpolant endpoints are not exact"
        v_t = rng.standard_normal((2, 2, 3, 2, 2))
        a_t = rng.standard_normal((2, 4, 3))
        zero = fm_loss((Tensor(v_t), Tensor(a_t)), (v_t, a_t), np.ones(2))
        if float(zero.data) != 0.0:
            return False, f"loss at perfect prediction is {float(zero.data)}"
        for s in (0.25, 0.5, 0.75):
            if abs(float(loss_weight(s, "sigma_one_minus_sigma")) - s * (1 - s)) > 1e-12:
                return False, f"weighting mismatch at sigma={s}"
        return True, "endpoints exact, zero loss at target, weighting matches"
    return _timed("flow_contract", body)


# ---- metric oracles --------------------------------------------------------------------

def check_frechet(seed: int = 0) -> CheckResult:
    def body():
        shift = frechet_distance([0.0], [[1.0]], [1.0], [[1.0]])
        spread = frechet_distance([0.0], [[1.0]], [0.0], [[4.0]])
        rows = _rng(seed, "frechet").standard_normal((200, 4))
        same = frechet_from_embeddings(rows, rows)
        other = _rng(seed, "frechet", 1).standard_normal((200, 4)) + 0.3
        asym = abs(frechet_from_embeddings(rows, other) - frechet_from_embeddings(other, rows))
        ok = abs(shift - 1) <= 1e-6 and abs(spread - 1) <= 1e-6 and same < 1e-8 and asym < 1e-8
        return ok, f"shift {shift:.9f}, spread {spread:.9f}, self {same:.1e}, asymmetry {asym:.1e}"
    return _timed("frechet_oracle", body)


def check_av_align(seed: int = 0) -> CheckResult:
    def body():
        cases = [(av_align([3, 9], [3, 9], 0), 1.0), (av_align([1, 2], [7, 8], 0), 0.0),
                 (av_align([1, 2], [2, 3], 0), 1 / 3)]
        for got, want in cases:
            if abs(got - want) > 1e-12:
                return False, f"got {got}, expected {want}"
        rng = _rng(seed, "av-align")
        pa, pv = np.array([2, 5, 11, 20]), np.array([3, 9, 11, 21, 30])
        base = av_align(pa, pv, 1)
        for _ in range(100):
            k = int(rng.integers(-50, 50))
            if av_align(pa + k, pv + k, 1) != base:
                return False, f"offset {k} changed the score"
        return True, "hand cases exact, invariant under 100 offsets"
    return _timed("av_align_oracle", body)


def count_oracle(kinds, kind: str) -> list[int]:
    return [sum(1 for k in kinds[:pos + 1] if k == kind) for pos in range(len(kinds))]


def check_counters() -> CheckResult:
    def body():
        sched = build_schedule(2, 2)
        literal = build_schedule(2, 2, literal_counters=True)
        if sched.kinds != ("V", "A", "V", "A"):
            return False, f"schedule {sched.kinds}"
        want_v, want_a = count_oracle(sched.kinds, "V"), count_oracle(sched.kinds, "A")
        ok = (list(sched.i_v) == want_v == [1, 1, 2, 2] and list(sched.i_a) == want_a == [0, 1, 1, 2]
              and list(literal.i_v) == [c + 1 for c in want_v]
              and list(literal.i_a) == [c + 1 for c in want_a])
        return ok, f"i_v={list(sched.i_v)} i_a={list(sched.i_a)} literal i_v={list(literal.i_v)}"
    return _timed("schedule_counters", body)


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check_zero_gate_identity(seed=seed), check_orthogonality(seed=seed),
            check_gradients(seed=seed), check_sampler_order(), check_flow_contract(seed),
            check_frechet(seed), check_av_align(seed), check_counters()]
