"""Mel-spectrogram to waveform: Griffin-Lim fallback and a TorchScript neural plug-in."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import SignalConfig, VocoderConfig
from .errors import BackendError, ConfigError, ValidationError
from .signal import MelSpectrogram, Waveform, istft, mel_filterbank, stft


class VocoderBackend:
    name = "base"

    def __init__(self, sample_rate: int, hop_length: int, n_mels: int):
        self.expects = (sample_rate, hop_length, n_mels)

    def check(self, mel: MelSpectrogram) -> None:
        rate, hop, n_mels = self.expects
        if mel.n_mels != n_mels or abs(mel.hop_s - hop / rate) > 1e-9:
            raise ValidationError(
                f"{self.name} vocoder expects {n_mels} mels at {hop / rate * 1000:g} ms hop, "
                f"got {mel.n_mels} mels at {mel.hop_s * 1000:g} ms"
            )

    def _vocode(self, mel: MelSpectrogram) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, mel: MelSpectrogram) -> Waveform:
        self.check(mel)
        samples = np.clip(np.nan_to_num(self._vocode(mel)), -1.0, 1.0)
        return Waveform(samples, self.expects[0])


class GriffinLimVocoder(VocoderBackend):
    """Pseudo-inverse of the mel filterbank, then Griffin-Lim from zero phase."""

    name = "griffinlim"

    def __init__(self, signal_cfg: SignalConfig | None = None, n_iter: int = 60):
        self.cfg = signal_cfg or SignalConfig()
        super().__init__(self.cfg.sample_rate, self.cfg.hop_length, self.cfg.n_mels)
        self.n_iter = n_iter
        fb = mel_filterbank(self.cfg.sample_rate, self.cfg.n_fft, self.cfg.n_mels, self.cfg.fmin, self.cfg.fmax)
        self.inverse = np.linalg.pinv(fb)

    def linear_magnitude(self, mel: MelSpectrogram) -> np.ndarray:
        floor = np.log(self.cfg.log_floor)
        energy = np.where(mel.frames <= floor + 1e-6, 0.0, np.exp(mel.frames))
        return np.maximum(energy @ self.inverse.T, 0.0)

    def _vocode(self, mel: MelSpectrogram) -> np.ndarray:
        mag = self.linear_magnitude(mel)
        length = self.cfg.hop_length * (mel.n_frames - 1)
        if length == 0:
            return np.zeros(self.cfg.hop_length)
        phase = np.ones_like(mag, dtype=np.complex128)
        for _ in range(self.n_iter):
            wav = istft(mag * phase, self.cfg, length)
            rebuilt = stft(wav, self.cfg)
            norm = np.abs(rebuilt)
            phase = np.where(norm > 1e-12, rebuilt / np.maximum(norm, 1e-12), 1.0)
        return istft(mag * phase, self.cfg, length)


class ExternalVocoder(VocoderBackend):
    """TorchScript vocoder mapping log-mel ``[1, n_mels, T]`` to audio ``[1, N]`` (or ``[1, 1, N]``).

    A sidecar ``<checkpoint>.json`` declares ``sample_rate``, ``hop_length`` and ``n_mels``.
    """

    name = "external"

    def __init__(self, checkpoint: str | Path):
        import torch

        path = Path(checkpoint)
        meta_path = path.with_suffix(path.suffix + ".json")
        if not path.exists() or not meta_path.exists():
            raise ConfigError(f"vocoder checkpoint {path} and sidecar {meta_path} are both required")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        try:
            super().__init__(int(meta["sample_rate"]), int(meta["hop_length"]), int(meta["n_mels"]))
        except KeyError as exc:
            raise ConfigError(f"{meta_path} is missing {exc}") from exc
        self.module = torch.jit.load(str(path), map_location="cpu").eval()
        self._torch = torch

    def _vocode(self, mel: MelSpectrogram) -> np.ndarray:
        torch = self._torch
        x = torch.as_tensor(mel.frames.T, dtype=torch.float32)[None]
        try:
            with torch.no_grad():
                out = self.module(x)
        except Exception as exc:  # noqa: BLE001
            raise BackendError(f"external vocoder failed: {exc}") from exc
        return out.reshape(-1).double().numpy()


def build_vocoder(cfg: VocoderConfig, signal_cfg: SignalConfig | None = None) -> VocoderBackend:
    if cfg.backend == "griffinlim":
        return GriffinLimVocoder(signal_cfg, cfg.n_iter)
    if cfg.backend == "external":
        if not cfg.checkpoint:
            raise ConfigError("vocoder.backend=external requires vocoder.checkpoint")
        return ExternalVocoder(cfg.checkpoint)
    raise ConfigError(f"unknown vocoder.backend {cfg.backend!r}")


def vocode(mel: MelSpectrogram, backend: VocoderBackend) -> Waveform:
    return backend(mel)
