"""Run configuration: nested dataclasses with JSON round-trip and dotted overrides.

Every default lives here. Unknown keys are rejected at load time.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class SignalConfig:
    sample_rate: int = 16000
    hop_length: int = 160
    win_length: int = 640
    n_fft: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5


@dataclass
class FeaturesConfig:
    backend: str = "standin"  # standin | external
    checkpoint: str | None = None
    layer: int | None = None
    dim: int = 512
    frame_hop_s: float = 0.010
    context: int = 2
    projection_seed: int = 1234


@dataclass
class BottleneckConfig:
    k: int = 100
    stats_subset: int = 1000
    eps: float = 1e-8
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0


@dataclass
class StyleConfig:
    conv_channels: list[int] = field(default_factory=lambda: [32, 32, 64, 64, 128, 128])
    kernel_size: int = 9
    stride: int = 2
    lstm_hidden: int = 256
    embed_dim: int = 512
    n_sublayers: int = 3
    n_tokens: int = 5
    attn_dim: int = 128
    token_std: float = 0.3


@dataclass
class ContentConfig:
    conv_channels: list[int] = field(default_factory=lambda: [32, 32, 64, 64, 128, 128])
    kernel_size: int = 9
    stride: int = 1  # 1 keeps one vector per 10 ms; 2 mirrors the reference encoder
    lstm_hidden: int = 256
    embed_dim: int = 512


@dataclass
class DecoderConfig:
    prenet_sizes: list[int] = field(default_factory=lambda: [256, 256])
    prenet_dropout: float = 0.5
    attention_rnn_dim: int = 1024
    decoder_rnn_dim: int = 1024
    attention_dim: int = 128
    location_filters: int = 32
    location_kernel: int = 31
    postnet_channels: int = 512
    postnet_kernel: int = 5
    postnet_layers: int = 5
    rnn_dropout: float = 0.1
    stop_weight: float = 1.0
    stop_pos_weight: float = 5.0
    stop_threshold: float = 0.5
    max_steps_factor: float = 2.0


@dataclass
class VocoderConfig:
    backend: str = "griffinlim"  # griffinlim | external
    checkpoint: str | None = None
    n_iter: int = 60


@dataclass
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 32
    max_lr: float = 6e-4
    grad_clip_norm: float = 1.0
    warmup_frac: float = 0.3
    final_div: float = 100.0
    crop_start_s: float = 0.6
    crop_end_s: float = 10.2
    crop_jitter: float = 0.20
    val_crop_s: float = 4.0
    max_steps: int | None = None
    seed: int = 0


@dataclass
class SpecAugmentConfig:
    freq_mask_param: int = 27
    n_freq_masks: int = 2
    time_mask_param: int = 100
    n_time_masks: int = 2
    time_mask_ratio: float = 1.0
    time_warp_param: int = 80


@dataclass
class AugmentConfig:
    method: str = "vc"  # vc | specaug | vc_then_specaug
    ratio_percent: float = 100.0
    gender_filter: str = "none"  # none | female_only | male_only
    chunk_s: float = 7.0
    crossfade_ms: float = 0.0
    workers: int = 1
    seed: int = 0
    specaug: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)


@dataclass
class EvalConfig:
    asr: str = "mock"  # mock | tone | command
    asr_command: str | None = None
    mock_corruption: float = 0.0
    seed: int = 0


@dataclass
class RunConfig:
    signal: SignalConfig = field(default_factory=SignalConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    bottleneck: BottleneckConfig = field(default_factory=BottleneckConfig)
    style: StyleConfig = field(default_factory=StyleConfig)
    content: ContentConfig = field(default_factory=ContentConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    vocoder: VocoderConfig = field(default_factory=VocoderConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """Return a copy with dotted-path overrides applied, e.g. ``{"training.max_lr": 3e-4}``."""
        data = self.to_dict()
        for dotted, value in overrides.items():
            node = data
            parts = dotted.split(".")
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config key: {dotted}")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key: {dotted}")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)

    def validate(self) -> None:
        if self.style.embed_dim != self.content.embed_dim:
            raise ConfigError("style.embed_dim and content.embed_dim must match (content is summed with style)")
        if len(self.style.conv_channels) != len(self.content.conv_channels):
            raise ConfigError("style and content conv stacks must have the same depth")
        if self.content.stride not in (1, 2):
            raise ConfigError("content.stride must be 1 or 2")
        if not 0 <= self.training.crop_jitter < 1:
            raise ConfigError("training.crop_jitter must lie in [0, 1)")
        if self.training.crop_start_s >= self.training.crop_end_s:
            raise ConfigError("training.crop_start_s must be below training.crop_end_s")
        if self.features.backend not in ("standin", "external"):
            raise ConfigError(f"features.backend must be standin or external, got {self.features.backend!r}")
        if self.vocoder.backend not in ("griffinlim", "external"):
            raise ConfigError(f"vocoder.backend must be griffinlim or external, got {self.vocoder.backend!r}")
        if self.augment.method not in ("vc", "specaug", "vc_then_specaug"):
            raise ConfigError(f"unknown augment.method {self.augment.method!r}")
        if self.augment.gender_filter not in ("none", "female_only", "male_only"):
            raise ConfigError(f"unknown augment.gender_filter {self.augment.gender_filter!r}")
        if self.augment.ratio_percent <= 0:
            raise ConfigError("augment.ratio_percent must be positive")
        if self.bottleneck.k < 1:
            raise ConfigError("bottleneck.k must be >= 1")


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {prefix or '<root>'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        names = ", ".join(sorted(prefix + k for k in unknown))
        raise ConfigError(f"unknown config key(s): {names}")
    kwargs = {}
    for name, value in data.items():
        sub = _dataclass_type(cls, name)
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{prefix}{name}.")
        else:
            kwargs[name] = copy.deepcopy(value)
    return cls(**kwargs)


def _dataclass_type(cls, name: str):
    default = cls()
    value = getattr(default, name)
    return type(value) if dataclasses.is_dataclass(value) else None


def tiny_preset(base: RunConfig | None = None) -> RunConfig:
    """Small widths for tests and desk-scale smoke runs. Feature width stays 512."""
    cfg = copy.deepcopy(base) if base is not None else RunConfig()
    cfg.style.conv_channels = [32] * 6
    cfg.style.lstm_hidden = 32
    cfg.style.embed_dim = 32
    cfg.style.attn_dim = 32
    cfg.content.conv_channels = [32] * 6
    cfg.content.lstm_hidden = 32
    cfg.content.embed_dim = 32
    cfg.decoder.prenet_sizes = [32, 32]
    cfg.decoder.attention_rnn_dim = 32
    cfg.decoder.decoder_rnn_dim = 32
    cfg.decoder.attention_dim = 32
    cfg.decoder.location_filters = 32
    cfg.decoder.postnet_channels = 32
    cfg.validate()
    return cfg


def parse_override_value(text: str) -> Any:
    """CLI override values are JSON when they parse, plain strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text
