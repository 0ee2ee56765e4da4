"""Frozen front end shared by training and conversion: encoder features, quantised features, mel targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bottleneck import Codebook, NormalizationStats, fit_stats, normalize, quantize
from .config import RunConfig
from .features import FeatureSequence, SpeechEncoderBackend, build_backend, encode
from .signal import Waveform, melspec


@dataclass
class Prepared:
    """Frame-aligned views of one utterance (all ``[T, ·]`` float32)."""

    id: str
    feats: np.ndarray
    qfeats: np.ndarray
    mel: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.feats.shape[0]


class FrontEnd:
    def __init__(self, cfg: RunConfig, backend: SpeechEncoderBackend, codebook: Codebook, train_stats: NormalizationStats | None = None):
        self.cfg = cfg
        self.backend = backend
        self.codebook = codebook
        self.train_stats = train_stats

    @classmethod
    def from_config(cls, cfg: RunConfig, codebook: Codebook, train_stats: NormalizationStats | None = None) -> "FrontEnd":
        return cls(cfg, build_backend(cfg.features, cfg.signal), codebook, train_stats)

    def features(self, w: Waveform, utt_id: str | None = None) -> FeatureSequence:
        return encode(w, self.backend, utt_id)

    def source_stats(self, f: FeatureSequence) -> NormalizationStats:
        """Inference-time normalisation statistics: the single source utterance."""
        return fit_stats([f])

    def quantize(self, f: FeatureSequence, stats: NormalizationStats) -> FeatureSequence:
        return quantize(normalize(f, stats, self.cfg.bottleneck.eps), self.codebook)

    def prepare(self, w: Waveform, utt_id: str, stats: NormalizationStats | None = None) -> Prepared:
        """Training view. ``stats`` defaults to the training-subset statistics."""
        stats = stats or self.train_stats
        if stats is None:
            raise ValueError("no normalisation statistics available")
        f = self.features(w, utt_id)
        q = self.quantize(f, stats)
        mel = melspec(w, self.cfg.signal).frames
        t = min(f.n_frames, mel.shape[0])
        as32 = lambda a: np.ascontiguousarray(a[:t], dtype=np.float32)  # noqa: E731
        return Prepared(utt_id, as32(f.vectors), as32(q.vectors), as32(mel))
