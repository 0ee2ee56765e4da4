"""Synthetic tone-language corpus for desk-scale runs.

Each word is a steady tone at a fixed frequency, so content is recoverable
from the spectrum (see ``evalsuite.ToneAsr``). Speakers differ in a low
harmonic hum (pitch by gender), an overtone above each word tone, and level.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import Manifest, Record
from .signal import Waveform, save_audio

VOCAB = {
    "ba": 600.0,
    "de": 800.0,
    "gi": 1050.0,
    "ko": 1350.0,
    "mu": 1750.0,
    "pa": 2250.0,
    "si": 2900.0,
    "tu": 3700.0,
}


@dataclass(frozen=True)
class Speaker:
    id: str
    gender: str
    f0: float
    overtone_gain: float
    level: float


def make_speakers(n: int, seed: int = 0) -> list[Speaker]:
    rng = np.random.default_rng(seed)
    speakers = []
    for i in range(n):
        gender = "female" if i % 2 == 0 else "male"
        f0 = rng.uniform(180, 260) if gender == "female" else rng.uniform(90, 140)
        speakers.append(Speaker(f"spk{i:02d}", gender, float(f0), float(rng.uniform(0.05, 0.5)), float(rng.uniform(0.6, 1.0))))
    return speakers


def _fade(n: int, sr: int, fade_s: float = 0.02) -> np.ndarray:
    env = np.ones(n)
    k = min(int(fade_s * sr), n // 2)
    if k > 0:
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, k))
        env[:k] = ramp
        env[-k:] = ramp[::-1]
    return env


def synth_utterance(words: list[str], speaker: Speaker, rng: np.random.Generator, sr: int = 16000) -> np.ndarray:
    pieces = [np.zeros(int(0.1 * sr))]
    for w in words:
        n = int(rng.uniform(0.18, 0.30) * sr)
        t = np.arange(n) / sr
        f = VOCAB[w]
        tone = 0.3 * np.sin(2 * np.pi * f * t) + 0.3 * speaker.overtone_gain * np.sin(2 * np.pi * 1.5 * f * t)
        pieces.append(tone * _fade(n, sr))
        pieces.append(np.zeros(int(rng.uniform(0.06, 0.12) * sr)))
    pieces.append(np.zeros(int(0.1 * sr)))
    x = np.concatenate(pieces)
    t = np.arange(len(x)) / sr
    hum = 0.05 * np.sin(2 * np.pi * speaker.f0 * t) + 0.025 * np.sin(2 * np.pi * 2 * speaker.f0 * t)
    x = speaker.level * (x + hum) + 0.002 * rng.standard_normal(len(x))
    return np.clip(x, -1.0, 1.0)


def make_corpus(
    out_dir: str | Path,
    n_utterances: int = 8,
    n_speakers: int = 4,
    words_per_utt: tuple[int, int] = (4, 7),
    seed: int = 0,
    language: str = "synth",
    sr: int = 16000,
) -> Manifest:
    """Write ``n_utterances`` WAV files under ``out_dir/audio`` and return (and save) their manifest."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    speakers = make_speakers(n_speakers, seed)
    vocab = list(VOCAB)
    records = []
    for i in range(n_utterances):
        spk = speakers[i % n_speakers]
        words = [vocab[j] for j in rng.integers(0, len(vocab), rng.integers(words_per_utt[0], words_per_utt[1] + 1))]
        samples = synth_utterance(words, spk, rng, sr)
        rel = f"audio/utt{i:04d}.wav"
        save_audio(out_dir / rel, Waveform(samples, sr))
        records.append(
            Record(
                id=f"utt{i:04d}",
                audio_path=rel,
                speaker_id=spk.id,
                gender=spk.gender,
                language=language,
                transcript=" ".join(words),
                duration_s=len(samples) / sr,
            )
        )
    manifest = Manifest(records, root=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest
