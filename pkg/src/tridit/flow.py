"""Rectified-flow objective, conditioning dropout schedules and the training step."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Module
from .tensor import Tensor

WEIGHTINGS = ("constant_one", "sigma_one_minus_sigma")
MODALITY_MODES = ("mask", "drop", "none")


@dataclass
class FlowSample:
    v_gt: np.ndarray
    a_gt: np.ndarray
    eps_v: np.ndarray
    eps_a: np.ndarray
    sigma: np.ndarray
    v_sigma: np.ndarray
    a_sigma: np.ndarray


def _per_sample(sigma: np.ndarray, x: np.ndarray) -> np.ndarray:
    return sigma.reshape((-1,) + (1,) * (x.ndim - 1))


def interpolate(x_gt: np.ndarray, eps: np.ndarray, sigma) -> np.ndarray:
    s = _per_sample(np.asarray(sigma, dtype=np.float64), x_gt)
    return (1.0 - s) * x_gt + s * eps


def make_flow_sample(v_gt: np.ndarray, a_gt: np.ndarray, rng: np.random.Generator,
                     sigma=None) -> FlowSample:
    """Draw independent unit noise per modality and a uniform flow time per sample."""
    v_gt = np.asarray(v_gt, dtype=np.float64)
    a_gt = np.asarray(a_gt, dtype=np.float64)
    if not (np.isfinite(v_gt).all() and np.isfinite(a_gt).all()):
        raise ValueError("clean latents must be finite")
    batch = v_gt.shape[0]
    sigma = rng.uniform(0.0, 1.0, size=batch) if sigma is None else np.broadcast_to(
        np.asarray(sigma, dtype=np.float64), (batch,)).copy()
    eps_v = rng.standard_normal(v_gt.shape)
    eps_a = rng.standard_normal(a_gt.shape)
    return FlowSample(v_gt, a_gt, eps_v, eps_a, sigma,
                      interpolate(v_gt, eps_v, sigma), interpolate(a_gt, eps_a, sigma))


def target_velocity(sample: FlowSample) -> tuple[np.ndarray, np.ndarray]:
    return sample.eps_v - sample.v_gt, sample.eps_a - sample.a_gt


def loss_weight(sigma, weighting: str = "constant_one") -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if weighting == "constant_one":
        return np.ones_like(sigma)
    if weighting == "sigma_one_minus_sigma":
        return sigma * (1.0 - sigma)
    raise ValueError(f"unknown weighting {weighting!r}")


def fm_loss(pred: tuple[Tensor, Tensor], target: tuple[np.ndarray, np.ndarray],
            weight: np.ndarray) -> Tensor:
    """Weighted velocity regression.

    Per sample: mean squared error over the video elements plus the same for
    audio, times ``weight[b]``; then averaged over the batch.
    """
    u_v, u_a = pred
    t_v, t_a = target
    if u_v.shape != np.shape(t_v) or u_a.shape != np.shape(t_a):
        raise ValueError("prediction and target shapes differ")
    batch = u_v.shape[0]
    w = np.asarray(weight, dtype=np.float64).reshape(batch)
    dv = u_v - t_v
    da = u_a - t_a
    per_v = (dv * dv).reshape(batch, -1).mean(axis=1)
    per_a = (da * da).reshape(batch, -1).mean(axis=1)
    return ((per_v + per_a) * w).mean()


def caption_dropout(y_cond: np.ndarray, y_uncond: np.ndarray, p_cap: float,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Swap whole samples to the unconditional text with probability ``p_cap``.

    Works on token ids or embeddings alike; returns the batch and the 0/1 mask.
    """
    if not 0.0 <= p_cap <= 1.0:
        raise ValueError("p_cap must lie in [0, 1]")
    y_cond = np.asarray(y_cond)
    batch = y_cond.shape[0]
    mask = (rng.uniform(size=batch) < p_cap).astype(np.int8)
    y_uncond = np.broadcast_to(np.asarray(y_uncond), y_cond.shape)
    sel = mask.reshape((-1,) + (1,) * (y_cond.ndim - 1)).astype(bool)
    return np.where(sel, y_uncond, y_cond), mask


def p_mask(step: int, s_max: int) -> float:
    if step < 0:
        raise ValueError("step must be nonnegative")
    return max(0.0, 1.0 - step / s_max)


def modality_mask_plan(step: int, mode: str, s_max: int,
                       rng: np.random.Generator) -> tuple[str, str | None]:
    """Pick (omni mode, removed modality) for one training step; never removes both."""
    if mode not in MODALITY_MODES:
        raise ValueError(f"modality mode must be one of {MODALITY_MODES}")
    p = p_mask(step, s_max)
    hit = rng.uniform() < p
    target = "audio" if rng.uniform() < 0.5 else "video"
    if mode == "none" or not hit:
        return "none", None
    return mode, target


# ---- optimizer ----------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    def __init__(self, params: list[tuple[str, Tensor]], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, warmup: int = 0):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.warmup = warmup
        self.state = AdamState()

    def current_lr(self, step: int | None = None) -> float:
        step = self.state.step if step is None else step
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(1.0, (step + 1) / self.warmup)

    def step(self) -> None:
        b1, b2 = self.betas
        lr = self.current_lr()
        self.state.step += 1
        t = self.state.step
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.state.m.get(name)
            v = self.state.v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.state.m[name], self.state.v[name] = m, v
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


# ---- training step ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainerConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    warmup: int = 0
    weighting: str = "constant_one"
    p_cap: float = 0.1
    s_max: int = 500
    modality_mode: str = "mask"
    log_every: int = 1

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.modality_mode not in MODALITY_MODES:
            raise ValueError(f"modality_mode must be one of {MODALITY_MODES}")
        if not 0.0 <= self.p_cap <= 1.0:
            raise ValueError("p_cap must lie in [0, 1]")
        if self.s_max <= 0 or self.batch_size <= 0 or self.steps < 0:
            raise ValueError("s_max and batch_size must be positive, steps nonnegative")


@dataclass
class StepResult:
    loss: float
    p_mask: float
    lr: float
    omni_mode: str
    omni_target: str | None


def train_step(model: Module, batch: dict, cfg: TrainerConfig, optimizer: Adam, step: int,
               rng: np.random.Generator) -> StepResult:
    """One forward/backward/update on ``batch`` (keys ``video``, ``audio``, ``text``, ``null_text``).

    All randomness (flow time, noise, caption dropout, modality masking) is
    drawn from ``rng`` in a fixed order.
    """
    sample = make_flow_sample(batch["video"], batch["audio"], rng)
    ids, _ = caption_dropout(batch["text"], batch["null_text"], cfg.p_cap, rng)
    mode, target = modality_mask_plan(step, cfg.modality_mode, cfg.s_max, rng)
    lr = optimizer.current_lr()

    model.zero_grad()
    y0 = model.embed_text(ids)
    pred = model(Tensor(sample.v_sigma), Tensor(sample.a_sigma), y0, sample.sigma,
                 omni_mode=mode, omni_target=target)
    loss = fm_loss(pred, target_velocity(sample), loss_weight(sample.sigma, cfg.weighting))
    loss.backward()
    optimizer.step()
    return StepResult(float(loss.data), p_mask(step, cfg.s_max), lr, mode, target)
