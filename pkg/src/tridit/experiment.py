"""Train / sample / evaluate pipeline on synthetic coupled audio-video scenes.

Every random draw comes from a named counter-based stream keyed by the
experiment seed, so a (config, seed) pair fixes every artifact byte.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import io, metrics
from .config import ExperimentConfig
from .flow import Adam, train_step
from .model import TriModalDiT
from .sampler import generate
from .synthetic import NULL_TOKEN, generate_synthetic_pair, latent_audio_peaks, latent_video_peaks, make_batch
from .tensor import RngStream

CHECKPOINT_NAME = "checkpoint.ckp"
LOG_NAME = "train.log"
SAMPLES_NAME = "samples.tns"
SIDECAR_NAME = "samples.txt"
REPORT_NAME = "metrics.txt"


class MissingArtifact(FileNotFoundError):
    pass


def build_model(cfg: ExperimentConfig) -> TriModalDiT:
    return TriModalDiT(cfg.model_config(), RngStream(cfg.seed, "init").generator())


def _header(cfg: ExperimentConfig, **extra) -> str:
    # out_dir is left out so artifacts do not depend on where they are written
    lines = [ln for ln in cfg.to_text().splitlines() if not ln.startswith("out_dir")]
    lines += [f"# {k} = {v}" for k, v in extra.items()]
    return "\n".join(lines) + "\n"


# ---- training -------------------------------------------------------------------

@dataclass
class TrainResult:
    losses: list[float]
    checkpoint: Path


def train(cfg: ExperimentConfig, out_dir: str | Path,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train for ``cfg.train.steps`` steps, writing a loss log and a final checkpoint.

    With zero steps only the initial weights are written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = cfg.train
    model = build_model(cfg)
    trainable = model.trainable_parameters()
    keep = {id(p) for _, p in trainable}
    for _, p in model.named_parameters():
        p.requires_grad = id(p) in keep
    opt = Adam(trainable, tc.lr, warmup=tc.warmup)

    data = RngStream(cfg.seed, "data")
    noise = RngStream(cfg.seed, "train")
    losses: list[float] = []
    with open(out / LOG_NAME, "w", encoding="utf-8") as log:
        log.write("step,loss,p_mask,lr\n")
        for step in range(tc.steps):
            batch = make_batch(cfg.scene, data.generator(step), tc.batch_size)
            res = train_step(model, batch, tc, opt, step, noise.generator(step))
            losses.append(res.loss)
            if step % tc.log_every == 0 or step == tc.steps - 1:
                log.write(f"{step},{res.loss:.9e},{res.p_mask:.6g},{res.lr:.6g}\n")
            if on_step is not None:
                on_step(step, res.loss)

    path = out / CHECKPOINT_NAME
    io.save_checkpoint(path, io.Checkpoint(_header(cfg), model.state_dict(), cfg.seed,
                                           tc.steps, tc.steps))
    return TrainResult(losses, path)


def load_model(cfg: ExperimentConfig, path: str | Path) -> TriModalDiT:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"checkpoint not found: {path}")
    ckpt = io.load_checkpoint(path)
    model = build_model(cfg)
    model.load_state_dict(ckpt.weights)
    return model


# ---- sampling -------------------------------------------------------------------

def prompt_set(cfg: ExperimentConfig, n: int, stream: str = "prompts") -> list:
    rng = RngStream(cfg.seed, stream).generator()
    return [generate_synthetic_pair(cfg.scene, rng) for _ in range(n)]


def sample(cfg: ExperimentConfig, checkpoint: str | Path, out_dir: str | Path,
           n: int | None = None, batch: int = 8) -> Path:
    """Generate ``n`` (default ``eval.samples``) latent pairs for held-out prompts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(cfg, checkpoint)
    n = cfg.eval.samples if n is None else n
    prompts = np.stack([p.tokens for p in prompt_set(cfg, n)])
    null = np.full(cfg.scene.text_len, NULL_TOKEN)
    videos, audios = [], []
    for i, start in enumerate(range(0, n, batch)):
        v, a = generate(model, prompts[start:start + batch], null, cfg.sample,
                        seed=int(RngStream(cfg.seed, "sample").key(i)))
        videos.append(v)
        audios.append(a)
    path = out / SAMPLES_NAME
    tensors = {"video": np.concatenate(videos), "audio": np.concatenate(audios),
               "text": prompts.astype(np.float32)}
    header = _header(cfg, guidance=cfg.sample.guidance, samples=n)
    io.save_tensors(path, tensors, header)
    (out / SIDECAR_NAME).write_text(header, encoding="utf-8")
    return path


# ---- evaluation -----------------------------------------------------------------

def projection(cfg: ExperimentConfig, name: str, d_in: int) -> np.ndarray:
    """Seeded fixed random linear feature map ``d_in -> eval.feature_dim``."""
    rng = RngStream(cfg.seed, f"features-{name}").generator()
    return rng.standard_normal((d_in, cfg.eval.feature_dim)) / np.sqrt(d_in)


def synchrony(videos: np.ndarray, audios: np.ndarray, cfg: ExperimentConfig) -> tuple[float, float]:
    """Mean AV-Align of matched pairs and of a cyclically shuffled pairing."""
    tol = cfg.eval.tolerance
    vp = [latent_video_peaks(v) for v in videos]
    ap = [latent_audio_peaks(a, cfg.scene) for a in audios]
    n = len(vp)
    matched = np.mean([metrics.av_align(ap[i], vp[i], tol) for i in range(n)])
    shuffled = np.mean([metrics.av_align(ap[i], vp[(i + 1) % n], tol) for i in range(n)])
    return float(matched), float(shuffled)


def _frame_features(cfg: ExperimentConfig, videos: np.ndarray) -> np.ndarray:
    s = cfg.scene
    frames = np.moveaxis(videos, 2, 1).reshape(len(videos), s.frames, -1)
    return frames @ projection(cfg, "frame", frames.shape[-1])


def _audio_window_features(cfg: ExperimentConfig, audio: np.ndarray,
                           bounds: list[tuple[int, int]]) -> np.ndarray:
    s = cfg.scene
    proj = projection(cfg, "audio-window", s.audio_per_frame * s.audio_dim)
    per_frame = audio.reshape(s.frames, -1)
    return np.stack([per_frame[a:b].mean(axis=0) @ proj for a, b in bounds])


def evaluate(cfg: ExperimentConfig, samples: str | Path, out_dir: str | Path) -> dict[str, float]:
    """Fréchet, synchrony and cosine metrics of generated samples vs a held-out reference set."""
    samples = Path(samples)
    if not samples.is_file():
        raise MissingArtifact(f"samples not found: {samples}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, gen = io.load_tensors(samples)
    g_v = gen["video"].astype(np.float64)
    g_a = gen["audio"].astype(np.float64)
    ref = prompt_set(cfg, len(g_v), stream="reference")
    r_v = np.stack([p.video for p in ref])
    r_a = np.stack([p.audio for p in ref])

    flat = lambda x: x.reshape(len(x), -1)  # noqa: E731
    pv = projection(cfg, "video", flat(g_v).shape[1])
    pa = projection(cfg, "audio", flat(g_a).shape[1])
    feats = {"gen_video": flat(g_v) @ pv, "gen_audio": flat(g_a) @ pa,
             "ref_video": flat(r_v) @ pv, "ref_audio": flat(r_a) @ pa}
    for name, rows in feats.items():
        io.save_embeddings(out / f"{name}.emb", rows, name.split("_")[1])

    report: dict[str, float] = {}
    report["fvd"] = metrics.frechet_from_embeddings(feats["gen_video"], feats["ref_video"])
    report["fad"] = metrics.frechet_from_embeddings(feats["gen_audio"], feats["ref_audio"])
    report["av_align"], report["av_align_shuffled"] = synchrony(g_v, g_a, cfg)
    report["av_align_reference"], _ = synchrony(r_v, r_a, cfg)
    report["ib_av"] = metrics.cosine_agg("ib_av", feats["gen_video"], feats["gen_audio"])

    frames = _frame_features(cfg, g_v)
    win = max(1, round(cfg.eval.window_s * cfg.scene.fps))
    hop = max(1, round(cfg.eval.hop_s * cfg.scene.fps))
    bounds = metrics.window_bounds(cfg.scene.frames, win, hop)
    whole = [(0, cfg.scene.frames)]
    avh, javis = [], []
    for f, a in zip(frames, g_a):
        avh.append(metrics.avh_score(f, _audio_window_features(cfg, a, whole)[0]))
        javis.append(metrics.javis_score(f, _audio_window_features(cfg, a, bounds), win, hop,
                                         cfg.eval.bottom_fraction))
    report["avh"] = float(np.mean(avh))
    report["javis"] = float(np.mean(javis))

    write_report(out / REPORT_NAME, report)
    return report


def embedding_report(pairs: list[tuple[str | Path, str | Path]]) -> dict[str, float]:
    """Fréchet distance for each (generated, reference) pair of embedding files."""
    report: dict[str, float] = {}
    for gen_path, ref_path in pairs:
        for p in (gen_path, ref_path):
            if not Path(p).is_file():
                raise MissingArtifact(f"embedding file not found: {p}")
        gen, role_g = io.load_embeddings(gen_path)
        ref, role_r = io.load_embeddings(ref_path)
        if role_g != role_r:
            raise io.ContainerError(f"role mismatch: {role_g} vs {role_r}")
        report[f"frechet_{role_g}"] = metrics.frechet_from_embeddings(gen, ref)
    return report


def write_report(path: str | Path, report: dict[str, float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, value in report.items():
            fh.write(f"{name}={value:.6g}\n")
