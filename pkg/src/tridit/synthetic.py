"""Synthetic coupled audio-video latents with known event timing.

Each clip carries a few discrete events. An event shows up in the video
latent as a localized brightness pulse (sharp onset, decaying tail) and in
the audio latent as an energy burst with a type-specific spectral profile.
With coupling 1 the audio bursts start on exactly the video pulse frames;
with coupling 0 their frames are drawn independently.

Text is two tokens: ``[event type, event count]``. Token 0 is the null
(unconditional) token.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import detect_audio_peaks, detect_video_peaks, motion_signal

NULL_TOKEN = 0
VIDEO_DECAY = (1.0, 0.6, 0.3, 0.1)
AUDIO_DECAY = (1.0, 0.6, 0.36, 0.2)


@dataclass(frozen=True)
class SyntheticSceneConfig:
    frames: int = 16
    height: int = 4
    width: int = 4
    channels: int = 4
    audio_per_frame: int = 1
    audio_dim: int = 8
    min_events: int = 1
    max_events: int = 1
    min_gap: int = 4
    coupling: float = 1.0
    n_types: int = 3
    amplitude: float = 2.0
    background: float = 0.5
    fps: float = 8.0
    pulse_size: int = 4

    def __post_init__(self):
        if not 0.0 <= self.coupling <= 1.0:
            raise ValueError("coupling must lie in [0, 1]")
        if not 0 <= self.min_events <= self.max_events:
            raise ValueError("need 0 <= min_events <= max_events")
        if self.frames < 3 or self.min_gap < 1:
            raise ValueError("need at least 3 frames and a positive gap")
        if self.pulse_size < 1 or self.height % self.pulse_size or self.width % self.pulse_size:
            raise ValueError("pulse_size must divide the frame height and width")
        if self.max_events and 1 + (self.max_events - 1) * self.min_gap > self.frames - 1:
            raise ValueError("max_events cannot fit in the clip with the requested gap")

    @property
    def audio_len(self) -> int:
        return self.frames * self.audio_per_frame

    @property
    def audio_rate(self) -> float:
        return self.fps * self.audio_per_frame

    @property
    def vocab_size(self) -> int:
        return 1 + self.n_types + self.max_events + 1

    @property
    def text_len(self) -> int:
        return 2

    def type_token(self, kind: int) -> int:
        return 1 + kind

    def count_token(self, count: int) -> int:
        return 1 + self.n_types + count


@dataclass
class SyntheticPair:
    video: np.ndarray          # [C, F, H, W]
    audio: np.ndarray          # [L_a, d_a]
    tokens: np.ndarray         # [2]
    video_peaks: np.ndarray    # frame indices
    audio_peaks: np.ndarray    # frame indices


def draw_event_frames(cfg: SyntheticSceneConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` sorted frames in ``[1, F-1]`` pairwise at least ``min_gap`` apart (rejection)."""
    if count == 0:
        return np.zeros(0, dtype=int)
    while True:
        frames = np.sort(rng.choice(np.arange(1, cfg.frames), size=count, replace=False))
        if count == 1 or np.min(np.diff(frames)) >= cfg.min_gap:
            return frames.astype(int)


def _type_patterns(cfg: SyntheticSceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed per-type channel weights for video and spectral profile for audio."""
    rng = np.random.default_rng(12345)
    chan = np.abs(rng.standard_normal((cfg.n_types, cfg.channels))) + 0.25
    chan /= np.linalg.norm(chan, axis=1, keepdims=True)
    spec = rng.standard_normal((cfg.n_types, cfg.audio_dim))
    spec /= np.linalg.norm(spec, axis=1, keepdims=True) / np.sqrt(cfg.audio_dim)
    return chan, spec


def generate_synthetic_pair(cfg: SyntheticSceneConfig, rng: np.random.Generator) -> SyntheticPair:
    chan, spec = _type_patterns(cfg)
    kind = int(rng.integers(cfg.n_types))
    count = int(rng.integers(cfg.min_events, cfg.max_events + 1))
    v_frames = draw_event_frames(cfg, count, rng)
    coupled = rng.uniform() < cfg.coupling
    a_frames = v_frames.copy() if coupled else draw_event_frames(cfg, count, rng)

    video = np.zeros((cfg.channels, cfg.frames, cfg.height, cfg.width))
    video += cfg.background * chan[kind][:, None, None, None]
    for f in v_frames:
        # pulses sit on a grid of pulse_size cells so they line up with patches
        size = cfg.pulse_size
        r = size * int(rng.integers(0, cfg.height // size))
        c = size * int(rng.integers(0, cfg.width // size))
        for k, g in enumerate(VIDEO_DECAY):
            if f + k < cfg.frames:
                video[:, f + k, r:r + size, c:c + size] += cfg.amplitude * g * chan[kind][:, None, None]

    audio = np.zeros((cfg.audio_len, cfg.audio_dim))
    for f in a_frames:
        start = f * cfg.audio_per_frame
        for k, g in enumerate(AUDIO_DECAY):
            if start + k < cfg.audio_len:
                audio[start + k] += cfg.amplitude * g * spec[kind]

    tokens = np.array([cfg.type_token(kind), cfg.count_token(count)], dtype=np.int64)
    return SyntheticPair(video, audio, tokens, v_frames, np.sort(a_frames))


def make_batch(cfg: SyntheticSceneConfig, rng: np.random.Generator, batch: int) -> dict:
    pairs = [generate_synthetic_pair(cfg, rng) for _ in range(batch)]
    return {
        "video": np.stack([p.video for p in pairs]),
        "audio": np.stack([p.audio for p in pairs]),
        "text": np.stack([p.tokens for p in pairs]),
        "null_text": np.full(cfg.text_len, NULL_TOKEN, dtype=np.int64),
        "video_peaks": [p.video_peaks for p in pairs],
        "audio_peaks": [p.audio_peaks for p in pairs],
    }


def audio_envelope(audio: np.ndarray) -> np.ndarray:
    """Per-step RMS over the latent channels of ``[L_a, d_a]``."""
    return np.sqrt(np.mean(np.asarray(audio, dtype=np.float64) ** 2, axis=-1))


def latent_video_peaks(video: np.ndarray, k_mad: float = 3.0, min_separation: int = 2) -> np.ndarray:
    """Peaks of the mean absolute inter-frame difference of a ``[C, F, H, W]`` latent."""
    frames = np.moveaxis(np.asarray(video), 1, 0)
    return detect_video_peaks(motion_signal(frames), k_mad, min_separation)


def latent_audio_peaks(audio: np.ndarray, cfg: SyntheticSceneConfig, k_mad: float = 3.0,
                       min_separation: int = 2) -> np.ndarray:
    return detect_audio_peaks(audio_envelope(audio), cfg.audio_rate, cfg.fps, window=1,
                              k_mad=k_mad, min_separation=min_separation * cfg.audio_per_frame)
