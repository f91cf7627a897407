"""Distribution, cosine-alignment and temporal-synchrony metrics.

All functions operate on plain numpy arrays of embeddings or signals; the
encoders that produce those embeddings live outside this package.
"""
from __future__ import annotations

import math

import numpy as np

EIG_FLOOR = 1e-10


class MetricError(ValueError):
    pass


# ---- Frechet distance ---------------------------------------------------------

def gaussian_stats(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased (N-1) covariance of an ``N x d`` embedding matrix."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise MetricError(f"need an N x d matrix with N >= 2, got shape {rows.shape}")
    if not np.isfinite(rows).all():
        raise MetricError("embeddings contain non-finite values")
    mu = rows.mean(axis=0)
    centered = rows - mu
    cov = centered.T @ centered / (rows.shape[0] - 1)
    return mu, 0.5 * (cov + cov.T)


def psd_sqrt(mat: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Symmetric square root via eigendecomposition, eigenvalues clamped at ``floor``."""
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    sym = 0.5 * (mat + mat.T)
    try:
        w, q = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"eigendecomposition failed: {exc}") from None
    if not np.isfinite(w).all():
        raise MetricError("eigendecomposition failed")
    w = np.clip(w, floor, None)
    return (q * np.sqrt(w)) @ q.T


def frechet_distance(mu_g, sigma_g, mu_r, sigma_r) -> float:
    """Squared mean difference plus the trace term of the Gaussian 2-Wasserstein distance."""
    mu_g, mu_r = np.atleast_1d(mu_g).astype(np.float64), np.atleast_1d(mu_r).astype(np.float64)
    sigma_g = np.atleast_2d(sigma_g).astype(np.float64)
    sigma_r = np.atleast_2d(sigma_r).astype(np.float64)
    if mu_g.shape != mu_r.shape or sigma_g.shape != sigma_r.shape:
        raise MetricError("statistics have mismatched dimensions")
    root_g = psd_sqrt(sigma_g)
    cross = psd_sqrt(root_g @ sigma_r @ root_g)
    diff = mu_g - mu_r
    value = float(diff @ diff + np.trace(sigma_g) + np.trace(sigma_r) - 2.0 * np.trace(cross))
    if not math.isfinite(value):
        raise MetricError("Frechet distance is not finite")
    return max(value, 0.0)


def frechet_from_embeddings(gen: np.ndarray, ref: np.ndarray) -> float:
    return frechet_distance(*gaussian_stats(gen), *gaussian_stats(ref))


# ---- cosine scores -------------------------------------------------------------

def l2_normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    if np.any(norm == 0):
        raise MetricError("cannot normalize a zero embedding")
    return x / norm


def cosine(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Cosine similarity along the last axis, clipped to [-1, 1]."""
    return np.clip((l2_normalize(p) * l2_normalize(q)).sum(axis=-1), -1.0, 1.0)


def sample_frame_indices(n_frames: int, k: int = 48) -> np.ndarray:
    """``k`` linearly spaced frame indices over a clip of ``n_frames``."""
    return np.round(np.linspace(0, n_frames - 1, k)).astype(int)


def clip_score(frame_emb: np.ndarray, text_emb: np.ndarray) -> float:
    """Mean over samples of the mean frame-to-text cosine; ``frame_emb`` is ``[G, K, d]``."""
    frame_emb = np.asarray(frame_emb)
    text_emb = np.asarray(text_emb)
    return float(cosine(frame_emb, text_emb[:, None, :]).mean(axis=1).mean())


def paired_cosine_score(first: np.ndarray, second: np.ndarray) -> float:
    """Dataset mean of per-sample cosines between paired global embeddings ``[G, d]``."""
    first, second = np.asarray(first), np.asarray(second)
    if first.shape != second.shape:
        raise MetricError(f"paired embeddings differ in shape: {first.shape} vs {second.shape}")
    return float(cosine(first, second).mean())


COSINE_MODES = ("clip_video", "clap_audio", "ib_av", "cavp")


def cosine_agg(mode: str, first: np.ndarray, second: np.ndarray) -> float:
    """Dispatch for the cosine-aggregated scores.

    ``clip_video`` takes per-sample frame embeddings ``[G, K, d]`` and text
    ``[G, d]``; the other modes take two paired ``[G, d]`` sets
    (text/audio, video/audio, video/audio respectively).
    """
    if mode == "clip_video":
        return clip_score(first, second)
    if mode in COSINE_MODES:
        return paired_cosine_score(first, second)
    raise MetricError(f"unknown cosine mode {mode!r}")


def avh_score(frame_emb: np.ndarray, audio_emb: np.ndarray) -> float:
    """Mean cosine between each frame embedding ``[T, d]`` and one audio embedding ``[d]``."""
    frame_emb = np.atleast_2d(frame_emb)
    if frame_emb.shape[0] < 1:
        raise MetricError("need at least one frame")
    return float(cosine(frame_emb, np.asarray(audio_emb)[None, :]).mean())


def window_bounds(n_frames: int, window: int, hop: int) -> list[tuple[int, int]]:
    """Overlapping ``[start, end)`` frame windows; a clip shorter than one window is one window."""
    if window <= 0 or hop <= 0:
        raise MetricError("window and hop must be positive")
    if n_frames <= window:
        return [(0, n_frames)]
    starts = range(0, n_frames - window + 1, hop)
    return [(s, s + window) for s in starts]


def bottom_fraction_mean(values: np.ndarray, fraction: float) -> float:
    if not 0.0 < fraction <= 1.0:
        raise MetricError("bottom fraction must lie in (0, 1]")
    values = np.sort(np.asarray(values, dtype=np.float64))
    k = max(1, math.ceil(fraction * len(values) - 1e-9))
    return float(values[:k].mean())


def javis_score(frame_emb: np.ndarray, audio_window_emb: np.ndarray, window: int, hop: int,
                bottom_fraction: float = 0.4) -> float:
    """Windowed frame/audio cosine, averaging the lowest ``bottom_fraction`` per window.

    ``frame_emb`` is ``[T, d]``; ``audio_window_emb`` holds one audio
    embedding per window from :func:`window_bounds`.
    """
    frame_emb = np.atleast_2d(frame_emb)
    bounds = window_bounds(frame_emb.shape[0], window, hop)
    audio_window_emb = np.atleast_2d(audio_window_emb)
    if audio_window_emb.shape[0] != len(bounds):
        raise MetricError(f"expected {len(bounds)} audio window embeddings, got {audio_window_emb.shape[0]}")
    scores = [bottom_fraction_mean(cosine(frame_emb[s:e], audio_window_emb[i][None, :]), bottom_fraction)
              for i, (s, e) in enumerate(bounds)]
    return float(np.mean(scores))


def javis_windows_from_seconds(n_frames: int, fps: float, window_s: float = 2.0,
                               hop_s: float = 1.0) -> list[tuple[int, int]]:
    return window_bounds(n_frames, max(1, round(window_s * fps)), max(1, round(hop_s * fps)))


# ---- peak detection and AV-Align ------------------------------------------------

def pick_peaks(signal: np.ndarray, k_mad: float = 3.0, min_separation: int = 1,
               floor: float = 1e-9) -> np.ndarray:
    """Local maxima above ``median + k_mad * MAD`` (and above ``floor``).

    Candidates are accepted greedily from the tallest down; a candidate closer
    than ``min_separation`` samples to an accepted peak is discarded.
    """
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    if len(x) == 0:
        return np.zeros(0, dtype=int)
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    threshold = max(med + k_mad * mad, floor)
    left = np.concatenate([[-np.inf], x[:-1]])
    right = np.concatenate([x[1:], [-np.inf]])
    # plateaus count once, at their first sample
    cand = np.flatnonzero((x > left) & (x >= right) & (x > threshold))
    order = sorted(cand, key=lambda i: (-x[i], i))
    accepted: list[int] = []
    for i in order:
        if all(abs(i - j) >= min_separation for j in accepted):
            accepted.append(int(i))
    return np.array(sorted(accepted), dtype=int)


def detect_audio_peaks(signal: np.ndarray, sample_rate: float, fps: float, window: int = 1,
                       hop: int | None = None, k_mad: float = 3.0,
                       min_separation: int = 1) -> np.ndarray:
    """Short-time energy peaks of a 1-D signal, returned as sorted video frame indices.

    ``min_separation`` is measured in envelope frames.
    """
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    hop = window if hop is None else hop
    if len(x) < window:
        raise MetricError(f"signal of length {len(x)} shorter than window {window}")
    starts = np.arange(0, len(x) - window + 1, hop)
    energy = np.array([np.mean(x[s:s + window] ** 2) for s in starts])
    peaks = pick_peaks(energy, k_mad, min_separation)
    times = starts[peaks] / sample_rate
    return np.unique(np.round(times * fps).astype(int))


def motion_signal(frames: np.ndarray) -> np.ndarray:
    """Mean absolute difference between consecutive frames; frame 0 gets 0.

    ``frames`` is ``[F, ...]`` (time first).
    """
    frames = np.asarray(frames, dtype=np.float64)
    flat = frames.reshape(frames.shape[0], -1)
    diff = np.abs(np.diff(flat, axis=0)).mean(axis=1)
    return np.concatenate([[0.0], diff])


def detect_video_peaks(motion: np.ndarray, k_mad: float = 3.0,
                       min_separation: int = 1) -> np.ndarray:
    """Peaks of a per-frame nonnegative motion-intensity signal (frame indices)."""
    motion = np.asarray(motion, dtype=np.float64).reshape(-1)
    if len(motion) < 3:
        raise MetricError("need at least 3 frames")
    if np.any(motion < 0):
        raise MetricError("motion intensity must be nonnegative")
    return pick_peaks(motion, k_mad, min_separation)


def av_align(audio_peaks, video_peaks, tolerance: int = 1) -> float:
    """IoU of two peak-frame sets; peaks within ``tolerance`` frames count as shared.

    Matching is one-to-one. Two empty sets score 1.
    """
    pa = np.unique(np.asarray(audio_peaks, dtype=int))
    pv = np.unique(np.asarray(video_peaks, dtype=int))
    if len(pa) == 0 and len(pv) == 0:
        return 1.0
    i = j = matched = 0
    while i < len(pa) and j < len(pv):
        if abs(pa[i] - pv[j]) <= tolerance:
            matched += 1
            i += 1
            j += 1
        elif pa[i] < pv[j]:
            i += 1
        else:
            j += 1
    return matched / (len(pa) + len(pv) - matched)
