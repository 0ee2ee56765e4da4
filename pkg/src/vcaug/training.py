"""Reconstruction training of the style encoder, content encoder and decoder.

The speech encoder and the normalisation/quantisation block stay frozen.
Batches are random crops whose base length grows linearly over training;
each step feeds the same crop to both the style and the content path.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import OneCycleLR

from .checkpoint import atomic_torch_save, load_quantizer, write_run_metadata
from .config import RunConfig, TrainingConfig
from .decoder import ReconstructionLoss, reconstruction_loss
from .errors import ValidationError, VcaugError
from .frontend import FrontEnd, Prepared
from .manifest import Manifest
from .model import VcModel
from .signal import load_audio

log = logging.getLogger(__name__)


class TrainingError(VcaugError):
    """Training diverged (non-finite loss)."""


def crop_base(step: int, total_steps: int, cfg: TrainingConfig) -> float:
    """Base crop length in seconds, linear from ``crop_start_s`` at step 0 to ``crop_end_s`` at ``total_steps``."""
    if total_steps <= 0:
        return cfg.crop_end_s
    frac = min(max(step / total_steps, 0.0), 1.0)
    return cfg.crop_start_s + (cfg.crop_end_s - cfg.crop_start_s) * frac


def crop_schedule(step: int, total_steps: int, cfg: TrainingConfig, rng: np.random.Generator) -> float:
    base = crop_base(step, total_steps, cfg)
    return float(rng.uniform((1 - cfg.crop_jitter) * base, (1 + cfg.crop_jitter) * base))


def make_scheduler(optimizer, cfg: TrainingConfig, total_steps: int) -> OneCycleLR:
    div = 25.0
    return OneCycleLR(
        optimizer,
        max_lr=cfg.max_lr,
        total_steps=total_steps,
        pct_start=cfg.warmup_frac,
        anneal_strategy="cos",
        div_factor=div,
        final_div_factor=cfg.final_div / div,
    )


@dataclass
class Batch:
    ids: list[str]
    feats: torch.Tensor  # [B, T, D]
    qfeats: torch.Tensor
    mel: torch.Tensor  # [B, T, n_mels]
    lengths: torch.Tensor
    starts: list[int]


def make_batch(items: Sequence[Prepared], crop_frames: int | None, rng: np.random.Generator | None) -> Batch:
    """Crop each utterance once and slice features, quantised features and mel at the same offset.

    Utterances no longer than the crop are used whole; the batch is zero
    padded to its longest member.
    """
    segs, starts = [], []
    for p in items:
        n = p.n_frames
        if crop_frames is None or n <= crop_frames:
            start, length = 0, n
        else:
            start = int(rng.integers(0, n - crop_frames + 1)) if rng is not None else (n - crop_frames) // 2
            length = crop_frames
        starts.append(start)
        segs.append((p.feats[start : start + length], p.qfeats[start : start + length], p.mel[start : start + length]))
    t_max = max(s[0].shape[0] for s in segs)

    def stack(k):
        out = np.zeros((len(segs), t_max, segs[0][k].shape[1]), dtype=np.float32)
        for i, s in enumerate(segs):
            out[i, : s[k].shape[0]] = s[k]
        return torch.from_numpy(out)

    lengths = torch.tensor([s[0].shape[0] for s in segs], dtype=torch.long)
    return Batch([p.id for p in items], stack(0), stack(1), stack(2), lengths, starts)


@dataclass
class StepResult:
    loss: ReconstructionLoss
    lr: float
    crop_base_s: float
    crop_s: float
    grad_norm: float
    clipped_grad_norm: float

    def as_record(self, step: int, epoch: int) -> dict:
        rec = {"step": step, "epoch": epoch, "lr": self.lr, "crop_base": self.crop_base_s, "crop_s": self.crop_s}
        rec.update(self.loss.as_dict())
        rec.update({"grad_norm": self.grad_norm, "clipped_grad_norm": self.clipped_grad_norm})
        return rec


@dataclass
class TrainState:
    model: VcModel
    optimizer: Adam
    scheduler: OneCycleLR
    rng: np.random.Generator
    total_steps: int
    step: int = 0
    epoch: int = 0
    batch_index: int = 0
    epoch_order: list[int] | None = None
    best_val_loss: float = math.inf
    history: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, cfg: RunConfig, n_train: int, total_steps: int | None = None) -> "TrainState":
        tc = cfg.training
        torch.manual_seed(tc.seed)
        model = VcModel(cfg)
        optimizer = Adam(model.parameters(), lr=tc.max_lr)
        if total_steps is None:
            total_steps = tc.max_steps or tc.epochs * math.ceil(n_train / tc.batch_size)
        scheduler = make_scheduler(optimizer, tc, total_steps)
        return cls(model, optimizer, scheduler, np.random.default_rng(tc.seed), total_steps)

    def state_dict(self) -> dict:
        return {
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "total_steps": self.total_steps,
            "step": self.step,
            "epoch": self.epoch,
            "batch_index": self.batch_index,
            "epoch_order": self.epoch_order,
            "best_val_loss": self.best_val_loss,
        }

    def load_state_dict(self, data: dict) -> None:
        self.model.load_state_dict(data["model"])
        self.optimizer.load_state_dict(data["optimizer"])
        self.scheduler.load_state_dict(data["scheduler"])
        self.rng.bit_generator.state = data["rng"]
        torch.set_rng_state(data["torch_rng"])
        self.total_steps = data["total_steps"]
        self.step = data["step"]
        self.epoch = data["epoch"]
        self.batch_index = data["batch_index"]
        self.epoch_order = data["epoch_order"]
        self.best_val_loss = data["best_val_loss"]

    def save(self, ckpt_dir: str | Path) -> None:
        ckpt_dir = Path(ckpt_dir)
        atomic_torch_save(self.model.state_dict(), ckpt_dir / "model.pt")
        atomic_torch_save(self.state_dict(), ckpt_dir / "train_state.pt")

    @classmethod
    def load(cls, cfg: RunConfig, ckpt_dir: str | Path) -> "TrainState":
        data = torch.load(Path(ckpt_dir) / "train_state.pt", map_location="cpu", weights_only=False)
        state = cls.create(cfg, 1, data["total_steps"])
        state.load_state_dict(data)
        return state


def train_step(batch_items: Sequence[Prepared], state: TrainState, cfg: RunConfig) -> tuple[TrainState, StepResult]:
    """One optimizer step on a freshly cropped batch."""
    if not batch_items:
        raise ValidationError("empty training batch")
    tc = cfg.training
    hop_s = cfg.signal.hop_length / cfg.signal.sample_rate
    base = crop_base(state.step, state.total_steps, tc)
    crop_s = crop_schedule(state.step, state.total_steps, tc, state.rng)
    # The reference encoder needs at least 2**n_layers frames.
    crop_frames = max(int(round(crop_s / hop_s)), state.model.min_reference_frames)
    batch = make_batch(batch_items, crop_frames, state.rng)

    model = state.model
    model.train()
    state.optimizer.zero_grad(set_to_none=True)
    out, _ = model(batch.feats, batch.qfeats, batch.lengths, batch.mel)
    loss = reconstruction_loss(out, batch.mel, batch.lengths, cfg.decoder.stop_weight, cfg.decoder.stop_pos_weight)
    if not torch.isfinite(loss.total):
        raise TrainingError(f"non-finite loss at step {state.step}; batch ids: {', '.join(batch.ids)}")
    loss.total.backward()
    params = [p for p in model.parameters() if p.grad is not None]
    grad_norm = float(torch.nn.utils.clip_grad_norm_(params, tc.grad_clip_norm))
    clipped = float(torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(p.grad) for p in params])))
    lr = float(state.optimizer.param_groups[0]["lr"])
    state.optimizer.step()
    if state.step < state.total_steps - 1:
        state.scheduler.step()
    state.step += 1
    result = StepResult(
        ReconstructionLoss(loss.l2_term.detach(), loss.stop_term.detach(), loss.total.detach()),
        lr,
        base,
        crop_s,
        grad_norm,
        clipped,
    )
    return state, result


@torch.no_grad()
def validation_loss(model: VcModel, items: Sequence[Prepared], cfg: RunConfig) -> float:
    """Teacher-forced loss on fixed centre crops of ``val_crop_s``."""
    if not items:
        return math.nan
    hop_s = cfg.signal.hop_length / cfg.signal.sample_rate
    crop = max(int(round(cfg.training.val_crop_s / hop_s)), model.min_reference_frames)
    model.eval()
    total, count = 0.0, 0
    bs = cfg.training.batch_size
    for i in range(0, len(items), bs):
        chunk = items[i : i + bs]
        b = make_batch(chunk, crop, None)
        out, _ = model(b.feats, b.qfeats, b.lengths, b.mel)
        loss = reconstruction_loss(out, b.mel, b.lengths, cfg.decoder.stop_weight, cfg.decoder.stop_pos_weight)
        total += float(loss.total) * len(chunk)
        count += len(chunk)
    return total / count


class Trainer:
    """Owns the prepared data and a :class:`TrainState`; ``run`` advances by whole steps."""

    def __init__(self, cfg: RunConfig, train: Sequence[Prepared], val: Sequence[Prepared] = (), state: TrainState | None = None):
        min_frames = 2 ** len(cfg.style.conv_channels)
        kept = [p for p in train if p.n_frames >= min_frames]
        if len(kept) < len(train):
            log.warning("dropping %d training utterances shorter than %d frames", len(train) - len(kept), min_frames)
        if not kept:
            raise ValidationError("no training utterances long enough for the reference encoder")
        self.cfg = cfg
        self.train = list(kept)
        self.val = [p for p in val if p.n_frames >= min_frames]
        self.state = state or TrainState.create(cfg, len(self.train))

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.train) / self.cfg.training.batch_size)

    def next_batch(self) -> list[Prepared]:
        st = self.state
        bs = self.cfg.training.batch_size
        if st.epoch_order is None:
            st.epoch_order = st.rng.permutation(len(self.train)).tolist()
            st.batch_index = 0
        idx = st.epoch_order[st.batch_index * bs : (st.batch_index + 1) * bs]
        st.batch_index += 1
        return [self.train[i] for i in idx]

    def end_of_epoch(self) -> bool:
        return self.state.batch_index >= self.steps_per_epoch

    def run(self, n_steps: int | None = None, ckpt_dir: str | Path | None = None, log_path: str | Path | None = None) -> list[StepResult]:
        st = self.state
        target = st.total_steps if n_steps is None else min(st.total_steps, st.step + n_steps)
        results = []
        log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
        try:
            while st.step < target:
                items = self.next_batch()
                _, res = train_step(items, st, self.cfg)
                results.append(res)
                record = res.as_record(st.step, st.epoch)
                st.history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                if self.end_of_epoch():
                    self._finish_epoch(ckpt_dir, log_fh)
        finally:
            if log_fh:
                log_fh.close()
        return results

    def _finish_epoch(self, ckpt_dir, log_fh) -> None:
        st = self.state
        val = validation_loss(st.model, self.val, self.cfg) if self.val else math.nan
        improved = self.val and val < st.best_val_loss
        if improved:
            st.best_val_loss = val
        if log_fh:
            record = {"epoch": st.epoch, "step": st.step, "val_loss": None if math.isnan(val) else val}
            log_fh.write(json.dumps(record) + "\n")
        log.info("epoch %d done at step %d, val loss %.4f", st.epoch, st.step, val)
        st.epoch += 1
        st.epoch_order = None
        st.batch_index = 0
        if ckpt_dir is not None:
            st.save(ckpt_dir)
            if improved:
                atomic_torch_save(st.model.state_dict(), Path(ckpt_dir) / "best" / "model.pt")


def prepare_manifest(manifest: Manifest, frontend: FrontEnd) -> list[Prepared]:
    rate = frontend.cfg.signal.sample_rate
    return [frontend.prepare(load_audio(manifest.audio_path(r), rate), r.id) for r in manifest]


def fit(
    train_manifest: Manifest,
    val_manifest: Manifest | None,
    cfg: RunConfig,
    ckpt_dir: str | Path,
    resume: bool = False,
) -> TrainState:
    """Train from the quantizer stored in ``ckpt_dir``; checkpoints each epoch and on best validation loss."""
    ckpt_dir = Path(ckpt_dir)
    stats, codebook = load_quantizer(ckpt_dir)
    frontend = FrontEnd.from_config(cfg, codebook, stats)
    train = prepare_manifest(train_manifest, frontend)
    val = prepare_manifest(val_manifest, frontend) if val_manifest is not None else []
    state = None
    if resume and (ckpt_dir / "train_state.pt").exists():
        state = TrainState.load(cfg, ckpt_dir)
    trainer = Trainer(cfg, train, val, state)
    write_run_metadata(ckpt_dir, cfg)
    trainer.run(ckpt_dir=ckpt_dir, log_path=ckpt_dir / "train_log.jsonl")
    trainer.state.save(ckpt_dir)
    return trainer.state
