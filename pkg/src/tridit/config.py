"""Experiment configuration and the flat ``key = value`` file format.

Keys are ``section.field`` (``model``, ``train``, ``sample``, ``scene``,
``eval``) plus the top-level ``seed`` and ``out_dir``. ``#`` starts a
comment. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .flow import TrainerConfig
from .model import ModelConfig
from .sampler import SamplerConfig
from .synthetic import SyntheticSceneConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    """Architecture knobs; latent geometry comes from the scene.

    Two heads and a RoPE base of 100 give the omni-block temporal
    frequencies whose periods exceed the clip length, so video frames and
    audio steps can be aligned without aliasing.
    """

    video_blocks: int = 2
    audio_blocks: int = 2
    omni_blocks: int = 1
    dim: int = 32
    heads: int = 2
    video_family: str = "sd3_dual"
    audio_family: str = "sd3_dual"
    conditioning: str = "dynamic"
    frozen_video: bool = False
    schedule_policy: str = "strict_alternate"
    attn_scale: str = "per_head"
    patch: int = 2
    rope_ratios: tuple[float, float, float] = (2.0, 1.0, 1.0)
    rope_base: float = 100.0


@dataclass(frozen=True)
class EvalConfig:
    samples: int = 32
    tolerance: int = 1
    feature_dim: int = 16
    window_s: float = 2.0
    hop_s: float = 1.0
    bottom_fraction: float = 0.4


@dataclass(frozen=True)
class ExperimentConfig:
    model: ArchConfig = field(default_factory=ArchConfig)
    train: TrainerConfig = field(default_factory=TrainerConfig)
    sample: SamplerConfig = field(default_factory=SamplerConfig)
    scene: SyntheticSceneConfig = field(default_factory=SyntheticSceneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    def model_config(self) -> ModelConfig:
        s = self.scene
        arch = dataclasses.asdict(self.model)
        arch["rope_ratios"] = tuple(arch["rope_ratios"])
        return ModelConfig(**arch, channels=s.channels, frames=s.frames, height=s.height,
                           width=s.width, audio_len=s.audio_len, audio_dim=s.audio_dim,
                           text_len=s.text_len, vocab_size=s.vocab_size)

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}", f"out_dir = {self.out_dir}"]
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


SECTIONS = ("model", "train", "sample", "scene", "eval")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse_value(raw: str, annotation):
    hint = annotation if not isinstance(annotation, str) else eval(annotation, vars(typing))  # noqa: S307
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if raw.lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _parse_value(raw, inner)
    if origin is tuple:
        elem = args[0]
        return tuple(_parse_value(p.strip(), elem) for p in raw.split(",") if p.strip())
    if hint is bool:
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is str:
        return raw
    raise ValueError(f"unsupported field type {hint!r}")


def _field_types(cls) -> dict[str, object]:
    return typing.get_type_hints(cls)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    top: dict[str, object] = {}
    sections: dict[str, dict[str, object]] = {s: {} for s in SECTIONS}
    seen: set[str] = set()
    top_types = {"seed": int, "out_dir": str}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'key = value', got {body!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        seen.add(key)
        try:
            if key in top_types:
                top[key] = _parse_value(raw, top_types[key])
                continue
            section, _, name = key.partition(".")
            if section not in sections or not name:
                raise ConfigError(f"{where}: unknown key {key!r}")
            cls = type(getattr(ExperimentConfig(), section))
            types = _field_types(cls)
            if name not in types:
                raise ConfigError(f"{where}: unknown key {key!r}")
            sections[section][name] = _parse_value(raw, types[name])
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    base = ExperimentConfig()
    try:
        built = {s: replace(getattr(base, s), **vals) for s, vals in sections.items()}
        cfg = ExperimentConfig(**built, **top)
        cfg.model_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: invalid configuration: {exc}") from None
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
