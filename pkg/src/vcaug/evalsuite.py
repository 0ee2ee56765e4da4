"""Intelligibility and speaker-similarity measurements for converted speech.

* Word/character error rates, pooled over a corpus.
* Re-synthesis: run ASR on original and converted audio and report the drop.
* Speaker similarity: a converted utterance is an error when its speaker
  embedding is at least as close (cosine) to the source as to the reference.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import select_reference
from .convert import Utterance
from .errors import BackendError, ValidationError
from .manifest import Manifest
from .signal import SignalConfig, Waveform, load_audio, mel_center_frequencies, melspec, save_audio
from .synthetic import VOCAB

# -- edit distance ----------------------------------------------------------


@dataclass(frozen=True)
class EditCounts:
    distance: int
    substitutions: int
    insertions: int
    deletions: int


def edit_distance(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Unit-cost Levenshtein alignment with a substitution/insertion/deletion breakdown."""
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    i, j = n, m
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(int(d[n, m]), s, ins, dels)


def words(text: str) -> list[str]:
    return text.split()


def chars(text: str) -> list[str]:
    return list(" ".join(text.split()))


@dataclass
class ErrorRateReport:
    wer: float
    cer: float
    n_utterances: int
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int
    ref_chars: int
    char_errors: int

    @property
    def word_errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def error_rates(pairs: Sequence[tuple[str, str]]) -> ErrorRateReport:
    """Corpus-pooled rates: total edits over total reference length, at word and character level."""
    if not pairs:
        raise ValidationError("error_rates needs at least one (reference, hypothesis) pair")
    s = i = d = n_words = n_chars = char_errs = 0
    for ref, hyp in pairs:
        wc = edit_distance(words(ref), words(hyp))
        s, i, d = s + wc.substitutions, i + wc.insertions, d + wc.deletions
        n_words += len(words(ref))
        char_errs += edit_distance(chars(ref), chars(hyp)).distance
        n_chars += len(chars(ref))
    if n_words == 0 or n_chars == 0:
        raise ValidationError("all reference transcripts are empty")
    return ErrorRateReport((s + i + d) / n_words, char_errs / n_chars, len(pairs), s, i, d, n_words, n_chars, char_errs)


# -- ASR backends -----------------------------------------------------------


class AsrBackend:
    name = "base"

    def transcribe(self, w: Waveform, utt_id: str) -> str:
        raise NotImplementedError


class MockAsr(AsrBackend):
    """Returns stored transcripts, replacing each word with ``<unk>`` at ``corruption_rate``.

    Corruption is a deterministic function of ``(seed, utt_id)``.
    """

    name = "mock"

    def __init__(self, transcripts: dict[str, str], corruption_rate: float = 0.0, seed: int = 0):
        self.transcripts = dict(transcripts)
        self.corruption_rate = corruption_rate
        self.seed = seed

    def transcribe(self, w: Waveform, utt_id: str) -> str:
        if utt_id not in self.transcripts:
            raise BackendError(f"mock ASR has no transcript for {utt_id!r}")
        digest = hashlib.sha256(f"{self.seed}:{utt_id}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        out = [("<unk>" if rng.random() < self.corruption_rate else tok) for tok in words(self.transcripts[utt_id])]
        return " ".join(out)


class ToneAsr(AsrBackend):
    """Recogniser for the synthetic tone corpus.

    A frame is voiced when its strongest mel bin above the hum band is within
    ``rel_log`` natural-log units of the utterance peak and clear of the
    log floor by the same margin. Each voiced run of at
    least ``min_run`` frames becomes the vocabulary word with the nearest bin.
    """

    name = "tone"

    def __init__(self, signal_cfg: SignalConfig | None = None, min_run: int = 5, floor_hz: float = 540.0, rel_log: float = 3.0):
        self.cfg = signal_cfg or SignalConfig()
        self.min_run = min_run
        centers = mel_center_frequencies(self.cfg.n_mels, self.cfg.fmin, self.cfg.fmax)
        self.band = np.flatnonzero(centers >= floor_hz)
        self.centers = centers
        self.rel = rel_log
        self.vocab = list(VOCAB)
        self.vocab_bins = np.array([int(np.argmin(np.abs(centers - f))) for f in VOCAB.values()])

    def transcribe(self, w: Waveform, utt_id: str = "") -> str:
        mel = melspec(w, self.cfg).frames[:, self.band]
        peak_bin = self.band[mel.argmax(axis=1)]
        peak_val = mel.max(axis=1)
        # Frames at the log floor carry no tone, whatever the utterance peak is.
        voiced = (peak_val >= peak_val.max() - self.rel) & (peak_val > np.log(self.cfg.log_floor) + self.rel)
        labels = np.where(voiced, np.abs(peak_bin[:, None] - self.vocab_bins[None, :]).argmin(axis=1), -1)
        out, run_label, run_len = [], -1, 0
        for lab in list(labels) + [-1]:
            if lab == run_label:
                run_len += 1
                continue
            if run_label >= 0 and run_len >= self.min_run:
                out.append(self.vocab[run_label])
            run_label, run_len = lab, 1
        return " ".join(out)


class CommandAsr(AsrBackend):
    """Runs ``command <wav>`` per utterance and reads the hypothesis from standard output."""

    name = "command"

    def __init__(self, command: str, timeout_s: float = 600.0):
        self.argv = shlex.split(command)
        self.timeout_s = timeout_s

    def transcribe(self, w: Waveform, utt_id: str) -> str:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / f"{utt_id or 'utt'}.wav"
            save_audio(path, w)
            try:
                proc = subprocess.run(self.argv + [str(path)], capture_output=True, text=True, timeout=self.timeout_s)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise BackendError(f"ASR command failed for {utt_id}: {exc}") from exc
        if proc.returncode != 0:
            raise BackendError(f"ASR command exited {proc.returncode} for {utt_id}: {proc.stderr.strip()}")
        return " ".join(proc.stdout.split())


# -- re-synthesis -----------------------------------------------------------


@dataclass
class ResynthesisReport:
    original: ErrorRateReport | None
    converted: ErrorRateReport | None
    failed_ids: list[str] = field(default_factory=list)
    hypotheses: list[dict] = field(default_factory=list)

    @property
    def wer_drop(self) -> float:
        return self.converted.wer - self.original.wer

    @property
    def cer_drop(self) -> float:
        return self.converted.cer - self.original.cer

    def to_dict(self) -> dict:
        out = {
            "original": asdict(self.original) if self.original else None,
            "converted": asdict(self.converted) if self.converted else None,
            "failed_ids": self.failed_ids,
            "hypotheses": self.hypotheses,
        }
        if self.original and self.converted:
            out["wer_drop"] = self.wer_drop
            out["cer_drop"] = self.cer_drop
        return out

    def table(self, label: str = "") -> str:
        head = f"{'':<16}{'WER':>8}{'CER':>8}"
        rows = [head]
        for name, rep in (("Original data", self.original), ("Converted", self.converted)):
            if rep is not None:
                rows.append(f"{name:<16}{100 * rep.wer:>8.1f}{100 * rep.cer:>8.1f}")
        if label:
            rows.insert(0, label)
        return "\n".join(rows)


ConvertFn = Callable[[Utterance, Utterance], Waveform]


def resynthesis_eval(
    test: Manifest,
    convert_fn: ConvertFn,
    asr: AsrBackend,
    reference_pool: Manifest | None = None,
    gender_filter: str = "none",
    seed: int = 0,
    sample_rate: int = 16000,
) -> ResynthesisReport:
    """Convert every test utterance to a randomly drawn reference speaker and score ASR on both versions."""
    pool = reference_pool if reference_pool is not None else test
    rng = np.random.default_rng(seed)
    orig_pairs, conv_pairs, failed, hyps = [], [], [], []
    for rec in test:
        ref_rec = select_reference(pool, gender_filter, rng)
        try:
            src = Utterance(rec.id, load_audio(test.audio_path(rec), sample_rate), rec.transcript, rec.speaker_id, rec.gender)
            ref = Utterance(ref_rec.id, load_audio(pool.audio_path(ref_rec), sample_rate), ref_rec.transcript)
            converted = convert_fn(src, ref)
            hyp_orig = asr.transcribe(src.waveform, rec.id)
            hyp_conv = asr.transcribe(converted, rec.id)
        except (BackendError, OSError) as exc:
            failed.append(rec.id)
            hyps.append({"id": rec.id, "error": str(exc)})
            continue
        orig_pairs.append((rec.transcript, hyp_orig))
        conv_pairs.append((rec.transcript, hyp_conv))
        hyps.append({"id": rec.id, "reference_id": ref_rec.id, "original": hyp_orig, "converted": hyp_conv})
    if not orig_pairs:
        return ResynthesisReport(None, None, failed, hyps)
    return ResynthesisReport(error_rates(orig_pairs), error_rates(conv_pairs), failed, hyps)


# -- speaker similarity -----------------------------------------------------


@dataclass
class TripleResult:
    cos_to_source: float
    cos_to_reference: float
    is_error: bool


@dataclass
class SpeakerSimilarityReport:
    error_rate: float
    n_triples: int
    per_triple: list[TripleResult]

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self, label: str = "") -> str:
        rows = [f"{'':<16}{'Error rate (%)':>16}", f"{label or 'VC model':<16}{100 * self.error_rate:>16.1f}"]
        return "\n".join(rows)


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise ValidationError("speaker embeddings must be finite and nonzero")
    return v / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.clip(_unit(a) @ _unit(b), -1.0, 1.0))


def speaker_similarity_eval(triples: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> SpeakerSimilarityReport:
    """Each triple is ``(converted, source, reference)``; ties count as errors."""
    if not triples:
        raise ValidationError("speaker_similarity_eval needs at least one triple")
    results = []
    for conv, src, ref in triples:
        if not (np.shape(conv) == np.shape(src) == np.shape(ref)):
            raise ValidationError("embeddings in a triple must share one dimension")
        c_src, c_ref = cosine(conv, src), cosine(conv, ref)
        results.append(TripleResult(c_src, c_ref, c_src >= c_ref))
    errors = sum(r.is_error for r in results)
    return SpeakerSimilarityReport(errors / len(results), len(results), results)


class SpeakerEmbedder:
    name = "base"

    def embed(self, w: Waveform) -> np.ndarray:
        raise NotImplementedError


class MelStatsEmbedder(SpeakerEmbedder):
    """Stand-in speaker embedding: per-bin mean and standard deviation of the log-mel."""

    name = "melstats"

    def __init__(self, signal_cfg: SignalConfig | None = None):
        self.cfg = signal_cfg or SignalConfig()

    def embed(self, w: Waveform) -> np.ndarray:
        mel = melspec(w, self.cfg).frames - np.log(self.cfg.log_floor)
        return np.concatenate([mel.mean(axis=0), mel.std(axis=0)]) + 1e-6


def load_triples(path: str | Path) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """``.npz`` with arrays ``converted``, ``source``, ``reference`` of shape ``[N, D]``."""
    with np.load(path) as data:
        conv, src, ref = data["converted"], data["source"], data["reference"]
    if not (conv.shape == src.shape == ref.shape) or conv.ndim != 2:
        raise ValidationError("triples file needs equal-shape [N, D] arrays converted/source/reference")
    return list(zip(conv, src, ref))


def embed_triples(pairs_path: str | Path, embedder: SpeakerEmbedder, sample_rate: int = 16000):
    """Line-delimited JSON with ``converted``, ``source``, ``reference`` audio paths per line."""
    pairs_path = Path(pairs_path)
    triples = []
    for line in pairs_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        vecs = []
        for key in ("converted", "source", "reference"):
            p = Path(row[key])
            vecs.append(embedder.embed(load_audio(p if p.is_absolute() else pairs_path.parent / p, sample_rate)))
        triples.append(tuple(vecs))
    return triples
