"""Audio I/O, resampling, STFT and log-mel spectrograms.

All frame-level representations in the package use a 10 ms hop at 16 kHz so
that mel frames and speech-encoder frames line up one to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gcd
from pathlib import Path

import numpy as np
import scipy.signal
import soundfile

from .config import SignalConfig
from .errors import ValidationError


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValidationError(f"waveform must be 1-d, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel energies, shape ``[T, n_mels]``."""

    frames: np.ndarray
    hop_s: float = 0.010

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValidationError(f"mel frames must be [T>=1, n_mels], got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("mel spectrogram contains non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def resample(samples: np.ndarray, orig_rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling. Output length is ``ceil(len * target / orig)``."""
    if orig_rate == target_rate:
        return samples
    g = gcd(int(orig_rate), int(target_rate))
    up, down = int(target_rate) // g, int(orig_rate) // g
    return scipy.signal.resample_poly(samples, up, down)


def load_audio(path: str | Path, target_rate: int = 16000) -> Waveform:
    """Read WAV/FLAC as mono float64 at ``target_rate``. Multichannel input is averaged."""
    try:
        data, rate = soundfile.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError, soundfile.LibsndfileError) as exc:
        raise OSError(f"cannot read audio file {path}: {exc}") from exc
    if data.shape[0] == 0:
        raise ValidationError(f"audio file {path} is empty")
    mono = data.mean(axis=1)
    return Waveform(resample(mono, rate, target_rate), target_rate)


def save_audio(path: str | Path, w: Waveform) -> None:
    """Write PCM16 WAV (or FLAC when the suffix says so). Samples are clipped to [-1, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    soundfile.write(str(path), np.clip(w.samples, -1.0, 1.0), w.sample_rate, subtype="PCM_16")


# -- spectral helpers -------------------------------------------------------


def _hz_to_mel(freqs):
    # Slaney scale: linear below 1 kHz, logarithmic above.
    freqs = np.asarray(freqs, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = freqs / f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(freqs >= min_log_hz, min_log_mel + np.log(np.maximum(freqs, 1e-12) / min_log_hz) / logstep, mels)


def _mel_to_hz(mels):
    mels = np.asarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    freqs = f_sp * mels
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(mels >= min_log_mel, min_log_hz * np.exp(logstep * (mels - min_log_mel)), freqs)


def mel_center_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Slaney-normalised triangular filterbank, shape ``[n_mels, n_fft // 2 + 1]``."""
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


@lru_cache(maxsize=8)
def _window(win_length: int, n_fft: int) -> np.ndarray:
    win = scipy.signal.get_window("hann", win_length, fftbins=True)
    pad = (n_fft - win_length) // 2
    out = np.zeros(n_fft)
    out[pad : pad + win_length] = win
    out.setflags(write=False)
    return out


def num_frames(n_samples: int, hop_length: int) -> int:
    return 1 + n_samples // hop_length


def stft(samples: np.ndarray, cfg: SignalConfig) -> np.ndarray:
    """Centered STFT, shape ``[T, n_fft // 2 + 1]`` complex, ``T = 1 + len // hop``."""
    pad = cfg.n_fft // 2
    mode = "reflect" if len(samples) > pad else "constant"
    padded = np.pad(np.asarray(samples, dtype=np.float64), pad, mode=mode)
    n = num_frames(len(samples), cfg.hop_length)
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft)[:: cfg.hop_length][:n]
    return np.fft.rfft(frames * _window(cfg.win_length, cfg.n_fft), axis=1)


def istft(spec: np.ndarray, cfg: SignalConfig, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    win = _window(cfg.win_length, cfg.n_fft)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1) * win
    n = spec.shape[0]
    total = cfg.n_fft + cfg.hop_length * (n - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    sq = win**2
    for i in range(n):
        start = i * cfg.hop_length
        out[start : start + cfg.n_fft] += frames[i]
        norm[start : start + cfg.n_fft] += sq
    out = np.where(norm > 1e-8, out / np.maximum(norm, 1e-8), 0.0)
    pad = cfg.n_fft // 2
    out = out[pad:]
    if length is None:
        length = cfg.hop_length * (n - 1)
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out[:length]


def melspec(w: Waveform, cfg: SignalConfig | None = None) -> MelSpectrogram:
    """Natural-log mel magnitude spectrogram with an additive floor, shape ``[T, n_mels]``."""
    cfg = cfg or SignalConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ValidationError(f"expected {cfg.sample_rate} Hz audio, got {w.sample_rate} Hz")
    if len(w) == 0:
        raise ValidationError("cannot compute a spectrogram of empty audio")
    mag = np.abs(stft(w.samples, cfg))
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
    mel = mag @ fb.T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), hop_s=cfg.hop_length / cfg.sample_rate)
