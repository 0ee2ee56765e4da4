"""Speech encoder backends: one 512-d feature vector per 10 ms of 16 kHz audio."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FeaturesConfig, SignalConfig
from .errors import BackendError, ConfigError, ValidationError
from .signal import Waveform, melspec

MIN_DURATION_S = 0.025


@dataclass(frozen=True)
class FeatureSequence:
    vectors: np.ndarray  # [T, D]
    frame_hop_s: float = 0.010
    source_utterance_id: str | None = None

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValidationError(f"feature matrix must be [T>=1, D], got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature matrix contains non-finite values")
        object.__setattr__(self, "vectors", v)

    @property
    def n_frames(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def replace(self, vectors: np.ndarray) -> "FeatureSequence":
        return FeatureSequence(vectors, self.frame_hop_s, self.source_utterance_id)


class SpeechEncoderBackend:
    """Base class for speech encoders. Subclasses implement :meth:`_encode`."""

    name: str = "base"
    deterministic: bool = True
    dim: int = 512
    frame_hop_s: float = 0.010

    def _encode(self, w: Waveform) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, w: Waveform) -> np.ndarray:
        return self._encode(w)


class StandinBackend(SpeechEncoderBackend):
    """Deterministic desk-scale encoder.

    Log-mel frames are stacked with ``context`` neighbours on each side
    (edge frames replicated) and lifted to ``dim`` by a fixed random
    projection with orthonormal rows where possible.
    """

    name = "standin"
    deterministic = True

    def __init__(self, signal_cfg: SignalConfig | None = None, dim: int = 512, context: int = 2, seed: int = 1234):
        self.signal_cfg = signal_cfg or SignalConfig()
        self.dim = dim
        self.context = context
        self.frame_hop_s = self.signal_cfg.hop_length / self.signal_cfg.sample_rate
        in_dim = self.signal_cfg.n_mels * (2 * context + 1)
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((max(dim, in_dim), min(dim, in_dim))))
        # [in_dim, dim]
        self.projection = np.ascontiguousarray(q.T if dim >= in_dim else q)
        self.projection.setflags(write=False)

    def _encode(self, w: Waveform) -> np.ndarray:
        mel = melspec(w, self.signal_cfg).frames
        # Centre the log-floor so silence maps near the origin.
        x = (mel - np.log(self.signal_cfg.log_floor)) / 4.0
        c = self.context
        padded = np.pad(x, ((c, c), (0, 0)), mode="edge")
        stacked = np.concatenate([padded[i : i + len(x)] for i in range(2 * c + 1)], axis=1)
        return stacked @ self.projection


class ExternalBackend(SpeechEncoderBackend):
    """TorchScript speech encoder loaded from ``checkpoint``.

    The scripted module maps a float32 waveform ``[1, N]`` to features
    ``[1, T, D]`` (it may accept a ``layer`` keyword). A JSON sidecar
    ``<checkpoint>.json`` must declare ``frame_hop_s`` and ``dim``; the hop is
    checked against the 10 ms contract at load.
    """

    name = "external"

    def __init__(self, checkpoint: str | Path, layer: int | None = None, expected_hop_s: float = 0.010):
        import torch

        path = Path(checkpoint)
        meta_path = path.with_suffix(path.suffix + ".json")
        if not path.exists():
            raise ConfigError(f"speech encoder checkpoint not found: {path}")
        if not meta_path.exists():
            raise ConfigError(f"speech encoder checkpoint needs a sidecar {meta_path} declaring frame_hop_s and dim")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        try:
            self.frame_hop_s = float(meta["frame_hop_s"])
            self.dim = int(meta["dim"])
        except KeyError as exc:
            raise ConfigError(f"{meta_path} is missing {exc}") from exc
        if abs(self.frame_hop_s - expected_hop_s) > 1e-9:
            raise ConfigError(f"external encoder hop {self.frame_hop_s}s does not match the required {expected_hop_s}s")
        self.deterministic = bool(meta.get("deterministic", True))
        self.layer = layer
        self.module = torch.jit.load(str(path), map_location="cpu").eval()
        self._torch = torch

    def _encode(self, w: Waveform) -> np.ndarray:
        torch = self._torch
        x = torch.as_tensor(w.samples, dtype=torch.float32)[None]
        try:
            with torch.no_grad():
                out = self.module(x) if self.layer is None else self.module(x, self.layer)
        except Exception as exc:  # noqa: BLE001 - scripted modules raise arbitrary errors
            raise BackendError(f"external speech encoder failed: {exc}") from exc
        out = out.squeeze(0).double().numpy()
        if out.ndim != 2 or out.shape[1] != self.dim:
            raise BackendError(f"external speech encoder returned shape {out.shape}, expected [T, {self.dim}]")
        return out


def build_backend(cfg: FeaturesConfig, signal_cfg: SignalConfig | None = None) -> SpeechEncoderBackend:
    if cfg.backend == "standin":
        return StandinBackend(signal_cfg, dim=cfg.dim, context=cfg.context, seed=cfg.projection_seed)
    if cfg.backend == "external":
        if not cfg.checkpoint:
            raise ConfigError("features.backend=external requires features.checkpoint")
        return ExternalBackend(cfg.checkpoint, cfg.layer, cfg.frame_hop_s)
    raise ConfigError(f"unknown features.backend {cfg.backend!r}")


def encode(w: Waveform, backend: SpeechEncoderBackend, utterance_id: str | None = None) -> FeatureSequence:
    if w.duration_s < MIN_DURATION_S:
        raise ValidationError(f"audio of {w.duration_s * 1000:.1f} ms is shorter than the {MIN_DURATION_S * 1000:.0f} ms minimum")
    vectors = backend(w)
    return FeatureSequence(vectors, backend.frame_hop_s, utterance_id)


@dataclass
class FeatureCache:
    """Memoises encoder output per utterance id; valid because encoders are frozen."""

    backend: SpeechEncoderBackend
    _store: dict[str, FeatureSequence] = field(default_factory=dict)

    def get(self, utt_id: str, w: Waveform) -> FeatureSequence:
        if utt_id not in self._store:
            self._store[utt_id] = encode(w, self.backend, utt_id)
        return self._store[utt_id]
