"""End-to-end conversion: source + reference utterance -> converted waveform, in fixed-length chunks."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_config, load_model_state, load_quantizer
from .config import RunConfig
from .errors import ValidationError
from .features import MIN_DURATION_S
from .frontend import FrontEnd
from .model import VcModel
from .signal import MelSpectrogram, Waveform
from .style import StyleVector
from .vocoder import VocoderBackend, build_vocoder

log = logging.getLogger(__name__)


@dataclass
class Utterance:
    id: str
    waveform: Waveform
    transcript: str = ""
    speaker_id: str = ""
    gender: str = "unknown"


@dataclass
class ConversionRequest:
    source: Utterance
    reference: Utterance
    chunk_s: float = 7.0
    crossfade_ms: float = 0.0

    def __post_init__(self):
        if self.chunk_s <= 0:
            raise ValidationError("chunk_s must be positive")
        if self.crossfade_ms < 0:
            raise ValidationError("crossfade_ms must be nonnegative")


@dataclass
class ConversionResult:
    waveform: Waveform | None
    per_chunk_frames: list[int]
    style: StyleVector
    transcript: str
    mels: list[MelSpectrogram] = field(default_factory=list)
    truncated: list[bool] = field(default_factory=list)
    real_time_factor: float = float("nan")


def chunk(w: Waveform, chunk_s: float) -> list[Waveform]:
    """Greedy split into ``chunk_s`` pieces; the last piece holds the remainder."""
    if len(w) == 0:
        raise ValidationError("cannot chunk empty audio")
    n = max(1, int(round(chunk_s * w.sample_rate)))
    return [Waveform(w.samples[i : i + n], w.sample_rate) for i in range(0, len(w), n)]


def stitch(pieces: list[np.ndarray], crossfade: int = 0) -> np.ndarray:
    """Concatenate, optionally with a linear crossfade of ``crossfade`` samples at each seam."""
    if not pieces:
        return np.zeros(0)
    out = pieces[0]
    for nxt in pieces[1:]:
        k = min(crossfade, len(out), len(nxt))
        if k == 0:
            out = np.concatenate([out, nxt])
            continue
        ramp = np.linspace(0.0, 1.0, k + 2)[1:-1]
        seam = out[-k:] * (1 - ramp) + nxt[:k] * ramp
        out = np.concatenate([out[:-k], seam, nxt[k:]])
    return out


class Converter:
    """Read-only bundle of front end, trained model and vocoder."""

    def __init__(self, cfg: RunConfig, frontend: FrontEnd, model: VcModel, vocoder: VocoderBackend):
        self.cfg = cfg
        self.frontend = frontend
        self.model = model.eval()
        self.vocoder = vocoder

    @classmethod
    def from_checkpoint(cls, ckpt_dir: str | Path, best: bool = False, cfg: RunConfig | None = None) -> "Converter":
        cfg = cfg or load_config(ckpt_dir)
        stats, codebook = load_quantizer(ckpt_dir)
        model = VcModel(cfg)
        model.load_state_dict(load_model_state(ckpt_dir, best))
        return cls(cfg, FrontEnd.from_config(cfg, codebook, stats), model, build_vocoder(cfg.vocoder, cfg.signal))

    def _tensor(self, a: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(a, dtype=torch.float32)[None]

    def style_of(self, reference: Utterance) -> StyleVector:
        f = self.frontend.features(reference.waveform, reference.id)
        need = self.model.min_reference_frames
        if f.n_frames < need:
            raise ValidationError(
                f"reference {reference.id!r} is {reference.waveform.duration_s:.3f} s; the style encoder needs at least "
                f"{need} frames ({need * self.frontend.backend.frame_hop_s:.2f} s)"
            )
        with torch.no_grad():
            s = self.model.style(self._tensor(f.vectors))
        return StyleVector(s[0].double().numpy(), reference.id)

    def _chunks(self, w: Waveform, chunk_s: float) -> list[Waveform]:
        pieces = chunk(w, chunk_s)
        hop = self.frontend.backend.frame_hop_s
        min_s = max(MIN_DURATION_S, self.model.content_encoder.min_frames * hop)
        if len(pieces) > 1 and pieces[-1].duration_s < min_s:
            # Too short to encode on its own; fold into the previous chunk.
            tail = pieces.pop()
            pieces[-1] = Waveform(np.concatenate([pieces[-1].samples, tail.samples]), w.sample_rate)
        return pieces

    def convert(self, req: ConversionRequest, vocode: bool = True) -> ConversionResult:
        """Style is computed once from the whole reference; normalisation stats once from the whole source."""
        t0 = time.perf_counter()
        style = self.style_of(req.reference)
        s = self._tensor(style.s)
        full = self.frontend.features(req.source.waveform, req.source.id)
        stats = self.frontend.source_stats(full)
        mels, frames, truncated, audio = [], [], [], []
        for piece in self._chunks(req.source.waveform, req.chunk_s):
            f = self.frontend.features(piece, req.source.id)
            q = self.frontend.quantize(f, stats)
            out = self.model.generate(s, self._tensor(q.vectors))
            n = int(out.lengths[0])
            mel = MelSpectrogram(out.mel[0, :n].double().numpy(), hop_s=self.cfg.signal.hop_length / self.cfg.signal.sample_rate)
            mels.append(mel)
            frames.append(n)
            truncated.append(out.truncated[0])
            if vocode:
                audio.append(self.vocoder(mel).samples)
        waveform = None
        if vocode:
            fade = int(round(req.crossfade_ms * self.cfg.signal.sample_rate / 1000))
            waveform = Waveform(stitch(audio, fade), self.cfg.signal.sample_rate)
        elapsed = time.perf_counter() - t0
        rtf = req.source.waveform.duration_s / elapsed if elapsed > 0 else float("inf")
        log.info("converted %s -> %s at %.2fx real time", req.source.id, req.reference.id, rtf)
        return ConversionResult(waveform, frames, style, req.source.transcript, mels, truncated, rtf)
