"""Dataset augmentation: voice conversion, SpecAugment, and VC followed by SpecAugment."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import AugmentConfig, RunConfig, SignalConfig, SpecAugmentConfig
from .convert import ConversionRequest, Converter, Utterance, stitch
from .errors import ConfigError, ValidationError
from .manifest import Manifest, Record
from .signal import MelSpectrogram, Waveform, load_audio, melspec, save_audio
from .vocoder import VocoderBackend

log = logging.getLogger(__name__)

METHOD_TAGS = {"vc": "vc", "specaug": "sa", "vc_then_specaug": "vcsa"}


@dataclass(frozen=True)
class Mask:
    axis: str  # "freq" | "time"
    start: int
    width: int


def _time_warp(x: np.ndarray, w_param: int, rng: np.random.Generator) -> np.ndarray:
    t = x.shape[0]
    if w_param <= 0 or t <= 2 * w_param:
        return x
    center = int(rng.integers(w_param, t - w_param))
    dist = int(rng.integers(-w_param, w_param + 1))
    if dist == 0:
        return x
    # Piecewise-linear map of output frame -> source frame, moving `center` to `center + dist`.
    dest = np.arange(t, dtype=np.float64)
    new_center = center + dist
    src = np.where(
        dest <= new_center,
        dest * center / new_center,
        center + (dest - new_center) * (t - 1 - center) / (t - 1 - new_center),
    )
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, t - 1)
    frac = (src - lo)[:, None]
    return x[lo] * (1 - frac) + x[hi] * frac


def spec_augment_with_masks(mel: MelSpectrogram, cfg: SpecAugmentConfig, rng: np.random.Generator) -> tuple[MelSpectrogram, list[Mask]]:
    """Time warp, then frequency and time masks filled with the spectrogram mean."""
    x = np.array(mel.frames, dtype=np.float64, copy=True)
    n_frames, n_bins = x.shape
    x = _time_warp(x, cfg.time_warp_param, rng)
    fill = x.mean()
    masks = []
    for _ in range(cfg.n_freq_masks):
        f = min(int(rng.integers(0, cfg.freq_mask_param + 1)), n_bins)
        f0 = int(rng.integers(0, n_bins - f + 1))
        x[:, f0 : f0 + f] = fill
        masks.append(Mask("freq", f0, f))
    upper = min(cfg.time_mask_param, int(math.floor(cfg.time_mask_ratio * n_frames)))
    for _ in range(cfg.n_time_masks):
        t = min(int(rng.integers(0, max(upper, 0) + 1)), n_frames)
        t0 = int(rng.integers(0, n_frames - t + 1))
        x[t0 : t0 + t] = fill
        masks.append(Mask("time", t0, t))
    return MelSpectrogram(x.astype(mel.frames.dtype, copy=False), mel.hop_s), masks


def spec_augment(mel: MelSpectrogram, cfg: SpecAugmentConfig, rng: np.random.Generator) -> MelSpectrogram:
    return spec_augment_with_masks(mel, cfg, rng)[0]


def filter_pool(pool: Manifest, gender_filter: str) -> Manifest:
    if gender_filter == "none":
        return pool
    wanted = {"female_only": "female", "male_only": "male"}.get(gender_filter)
    if wanted is None:
        raise ConfigError(f"unknown gender filter {gender_filter!r}")
    return pool.filter(lambda r: r.gender == wanted)


def select_reference(pool: Manifest, gender_filter: str, rng: np.random.Generator) -> Record:
    """Uniform draw from the pool after gender filtering."""
    candidates = filter_pool(pool, gender_filter)
    if len(candidates) == 0:
        raise ConfigError(f"reference pool is empty after applying gender filter {gender_filter!r}")
    return candidates[int(rng.integers(0, len(candidates)))]


@dataclass
class AugmentPlan:
    method: str = "vc"
    ratio_percent: float = 100.0
    reference_pool: Manifest | None = None
    gender_filter: str = "none"
    seed: int = 0
    specaug: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    chunk_s: float = 7.0
    crossfade_ms: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHOD_TAGS:
            raise ConfigError(f"unknown augmentation method {self.method!r}")
        if not self.ratio_percent > 0:
            raise ConfigError("ratio_percent must be positive")

    @classmethod
    def from_config(cls, cfg: AugmentConfig, reference_pool: Manifest | None = None) -> "AugmentPlan":
        return cls(
            cfg.method,
            cfg.ratio_percent,
            reference_pool,
            cfg.gender_filter,
            cfg.seed,
            cfg.specaug,
            cfg.chunk_s,
            cfg.crossfade_ms,
            cfg.workers,
        )

    @classmethod
    def load(cls, path: str | Path, base: AugmentConfig | None = None) -> "AugmentPlan":
        """Read a JSON plan; keys mirror the ``augment`` config section plus an optional ``reference_pool`` manifest path."""
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read plan {path}: {exc}") from exc
        pool_path = data.pop("reference_pool", None)
        merged = dataclasses.asdict(base or AugmentConfig())
        merged["specaug"].update(data.pop("specaug", {}))
        merged.update(data)
        cfg = RunConfig.from_dict({"augment": merged}).augment
        pool = None
        if pool_path is not None:
            pool_path = Path(pool_path)
            pool = Manifest.load(pool_path if pool_path.is_absolute() else path.parent / pool_path)
        return cls.from_config(cfg, pool)


def generated_count(n: int, ratio_percent: float) -> int:
    """``round(ratio / 100 * n)`` with halves rounded up."""
    return int(math.floor(ratio_percent / 100.0 * n + 0.5))


@dataclass
class _Job:
    index: int
    source: Record
    reference: Record | None
    new_id: str
    seed: int


def augment_dataset(
    original: Manifest,
    plan: AugmentPlan,
    out_dir: str | Path,
    converter: Converter | None = None,
    vocoder: VocoderBackend | None = None,
    signal_cfg: SignalConfig | None = None,
    spec_augment_fn: Callable[[MelSpectrogram, SpecAugmentConfig, np.random.Generator], MelSpectrogram] = spec_augment,
) -> Manifest:
    """Return ``original`` plus ``round(ratio/100 * N)`` generated records, writing audio under ``out_dir/audio``.

    Sources are taken in manifest order, cycling when more than ``N``
    records are requested. References are drawn uniformly with replacement
    from the gender-filtered pool using ``plan.seed``.
    """
    if len(original) == 0:
        raise ValidationError("cannot augment an empty manifest")
    original.check()
    out_dir = Path(out_dir)
    signal_cfg = signal_cfg or (converter.cfg.signal if converter is not None else SignalConfig())
    uses_vc = plan.method in ("vc", "vc_then_specaug")
    uses_specaug = plan.method in ("specaug", "vc_then_specaug")
    if uses_vc and converter is None:
        raise ConfigError(f"method {plan.method!r} needs a trained checkpoint")
    if uses_specaug and vocoder is None:
        vocoder = converter.vocoder if converter is not None else None
        if vocoder is None:
            raise ConfigError("SpecAugment output needs a vocoder")

    pool = plan.reference_pool if plan.reference_pool is not None else original
    rng = np.random.default_rng(plan.seed)
    if uses_vc:
        filtered = filter_pool(pool, plan.gender_filter)
        if len(filtered) == 0:
            raise ConfigError(f"reference pool is empty after applying gender filter {plan.gender_filter!r}")

    n = len(original)
    tag = METHOD_TAGS[plan.method]
    existing = {r.id for r in original}
    jobs = []
    for i in range(generated_count(n, plan.ratio_percent)):
        src = original[i % n]
        ref = select_reference(filtered, "none", rng) if uses_vc else None
        new_id = f"{src.id}-{tag}{i // n:03d}"
        if new_id in existing:
            raise ValidationError(f"generated id {new_id!r} collides with an existing record")
        existing.add(new_id)
        seed = int(np.random.SeedSequence([plan.seed, i]).generate_state(1)[0])
        jobs.append(_Job(i, src, ref, new_id, seed))

    def load(manifest: Manifest, rec: Record) -> Utterance:
        w = load_audio(manifest.audio_path(rec), signal_cfg.sample_rate)
        return Utterance(rec.id, w, rec.transcript, rec.speaker_id, rec.gender)

    def run(job: _Job) -> Record:
        src = load(original, job.source)
        rec = job.source.with_(id=job.new_id)
        if plan.method == "specaug":
            mel = spec_augment_fn(melspec(src.waveform, signal_cfg), plan.specaug, np.random.default_rng(job.seed))
            wav = vocoder(mel)
            prov = {"kind": "specaug", "source_id": job.source.id, "seed": job.seed}
        else:
            ref = load(pool, job.reference)
            req = ConversionRequest(src, ref, plan.chunk_s, plan.crossfade_ms)
            if plan.method == "vc":
                wav = converter.convert(req).waveform
                prov = {"kind": "vc", "source_id": job.source.id, "reference_id": job.reference.id}
            else:
                result = converter.convert(req, vocode=False)
                sa_rng = np.random.default_rng(job.seed)
                pieces = [vocoder(spec_augment_fn(m, plan.specaug, sa_rng)).samples for m in result.mels]
                fade = int(round(plan.crossfade_ms * signal_cfg.sample_rate / 1000))
                wav = Waveform(stitch(pieces, fade), signal_cfg.sample_rate)
                prov = {"kind": "chain", "source_id": job.source.id, "reference_id": job.reference.id, "seed": job.seed}
            rec = rec.with_(speaker_id=job.reference.speaker_id, gender=job.reference.gender)
        rel = f"audio/{job.new_id}.wav"
        save_audio(out_dir / rel, wav)
        return rec.with_(audio_path=rel, duration_s=max(wav.duration_s, 1.0 / wav.sample_rate), provenance=prov)

    if plan.workers > 1:
        with ThreadPoolExecutor(plan.workers) as pool_exec:
            generated = list(pool_exec.map(run, jobs))
    else:
        generated = [run(j) for j in jobs]
    generated.sort(key=lambda r: r.id)

    originals = [r.with_(audio_path=str(original.audio_path(r).resolve())) for r in original]
    result = Manifest(originals + generated, root=out_dir)
    result.check()
    result.save(out_dir / "manifest.jsonl")
    log.info("augmented %d records with %d %s records", n, len(generated), plan.method)
    return result
