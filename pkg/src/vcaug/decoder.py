"""Tacotron 2 style autoregressive mel decoder, style fusion and reconstruction loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .config import DecoderConfig
from .errors import ValidationError


@dataclass
class ContentSequence:
    vectors: np.ndarray  # [T', D]
    frame_hop_s: float = 0.010

    def __post_init__(self):
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("content sequence is not finite")


def fuse(content, s):
    """Add the style vector to every content frame. Works on numpy arrays, tensors and ``ContentSequence``."""
    wrap = isinstance(content, ContentSequence)
    c = content.vectors if wrap else content
    sv = s.s if hasattr(s, "s") else s
    if c.shape[-1] != sv.shape[-1]:
        raise ValidationError(f"content dim {c.shape[-1]} does not match style dim {sv.shape[-1]}")
    if isinstance(c, Tensor) and sv.ndim == 2:
        out = c + sv[:, None, :]
    else:
        out = c + sv
    return ContentSequence(out, content.frame_hop_s) if wrap else out


@dataclass
class DecoderOutput:
    mel: Tensor  # [B, T_out, n_mels], after postnet
    stop_logits: Tensor  # [B, T_out]
    alignment: Tensor | None = None  # [B, T_out, T']
    mel_pre: Tensor | None = None  # before postnet
    lengths: Tensor | None = None
    truncated: list[bool] = field(default_factory=list)

    @property
    def stop_probs(self) -> Tensor:
        return torch.sigmoid(self.stop_logits)


@dataclass
class ReconstructionLoss:
    l2_term: Tensor
    stop_term: Tensor
    total: Tensor

    def as_dict(self) -> dict[str, float]:
        return {"loss": float(self.total), "l2": float(self.l2_term), "stop": float(self.stop_term)}


def _frame_mask(lengths: Tensor, t_max: int) -> Tensor:
    return torch.arange(t_max)[None, :] < lengths[:, None]


def reconstruction_loss(
    pred: DecoderOutput,
    target: Tensor,
    lengths: Tensor | None = None,
    stop_weight: float = 1.0,
    stop_pos_weight: float = 5.0,
) -> ReconstructionLoss:
    """Masked MSE on the mel (plus the pre-postnet mel when present) and weighted stop-token BCE."""
    if target.ndim == 2:
        target = target[None]
    if pred.mel.shape != target.shape:
        raise ValidationError(f"predicted mel {tuple(pred.mel.shape)} does not match target {tuple(target.shape)}")
    b, t, n_mels = target.shape
    if lengths is None:
        lengths = torch.full((b,), t, dtype=torch.long)
    mask = _frame_mask(lengths, t).to(target.dtype)
    n_valid = mask.sum()

    def mse(m):
        return (((m - target) ** 2) * mask[..., None]).sum() / (n_valid * n_mels)

    l2 = mse(pred.mel)
    if pred.mel_pre is not None:
        l2 = l2 + mse(pred.mel_pre)
    stop_target = (torch.arange(t)[None, :] == (lengths - 1)[:, None]).to(target.dtype)
    bce = F.binary_cross_entropy_with_logits(
        pred.stop_logits,
        stop_target,
        pos_weight=torch.tensor(stop_pos_weight, dtype=target.dtype),
        reduction="none",
    )
    stop = (bce * mask).sum() / n_valid
    return ReconstructionLoss(l2, stop, l2 + stop_weight * stop)


class Prenet(nn.Module):
    def __init__(self, in_dim: int, sizes: list[int], dropout: float):
        super().__init__()
        dims = [in_dim] + list(sizes)
        self.layers = nn.ModuleList(nn.Linear(a, b, bias=False) for a, b in zip(dims[:-1], dims[1:]))
        self.dropout = dropout

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = F.dropout(F.relu(layer(x)), p=self.dropout, training=self.training)
        return x


class LocationSensitiveAttention(nn.Module):
    def __init__(self, query_dim: int, memory_dim: int, attn_dim: int, n_filters: int, kernel_size: int):
        super().__init__()
        self.query_layer = nn.Linear(query_dim, attn_dim, bias=False)
        self.memory_layer = nn.Linear(memory_dim, attn_dim, bias=False)
        self.location_conv = nn.Conv1d(2, n_filters, kernel_size, padding=kernel_size // 2, bias=False)
        self.location_dense = nn.Linear(n_filters, attn_dim, bias=False)
        self.v = nn.Linear(attn_dim, 1, bias=False)  # a bias would shift every score equally and cancel in the softmax

    def forward(self, query: Tensor, processed_memory: Tensor, memory: Tensor, weights_cat: Tensor, mask: Tensor):
        loc = self.location_dense(self.location_conv(weights_cat).transpose(1, 2))
        energies = self.v(torch.tanh(self.query_layer(query)[:, None, :] + loc + processed_memory)).squeeze(-1)
        energies = energies.masked_fill(~mask, float("-inf"))
        weights = F.softmax(energies, dim=1)
        context = torch.bmm(weights[:, None, :], memory).squeeze(1)
        return context, weights


class Postnet(nn.Module):
    def __init__(self, n_mels: int, channels: int, kernel_size: int, n_layers: int):
        super().__init__()
        dims = [n_mels] + [channels] * (n_layers - 1) + [n_mels]
        self.convs = nn.ModuleList()
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.convs.append(nn.Sequential(nn.Conv1d(a, b, kernel_size, padding=kernel_size // 2), nn.BatchNorm1d(b)))
        self.dropout = 0.5

    def forward(self, x: Tensor) -> Tensor:
        h = x.transpose(1, 2)
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = torch.tanh(h)
            h = F.dropout(h, self.dropout, self.training)
        return h.transpose(1, 2)


class Decoder(nn.Module):
    """Attention LSTM + decoder LSTM over a fused content memory, reduction factor 1."""

    def __init__(self, memory_dim: int, n_mels: int, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.n_mels = n_mels
        self.memory_dim = memory_dim
        self.prenet = Prenet(n_mels, cfg.prenet_sizes, cfg.prenet_dropout)
        self.attention_rnn = nn.LSTMCell(cfg.prenet_sizes[-1] + memory_dim, cfg.attention_rnn_dim)
        self.attention = LocationSensitiveAttention(
            cfg.attention_rnn_dim, memory_dim, cfg.attention_dim, cfg.location_filters, cfg.location_kernel
        )
        self.decoder_rnn = nn.LSTMCell(cfg.attention_rnn_dim + memory_dim, cfg.decoder_rnn_dim)
        self.mel_proj = nn.Linear(cfg.decoder_rnn_dim + memory_dim, n_mels)
        self.stop_proj = nn.Linear(cfg.decoder_rnn_dim + memory_dim, 1)
        self.postnet = Postnet(n_mels, cfg.postnet_channels, cfg.postnet_kernel, cfg.postnet_layers)

    def _init_state(self, memory: Tensor):
        b, t, _ = memory.shape
        z = memory.new_zeros
        return {
            "att_h": z(b, self.cfg.attention_rnn_dim),
            "att_c": z(b, self.cfg.attention_rnn_dim),
            "dec_h": z(b, self.cfg.decoder_rnn_dim),
            "dec_c": z(b, self.cfg.decoder_rnn_dim),
            "weights": z(b, t),
            "weights_cum": z(b, t),
            "context": z(b, self.memory_dim),
        }

    def _step(self, x: Tensor, st: dict, memory: Tensor, processed: Tensor, mask: Tensor):
        p = self.cfg.rnn_dropout
        att_h, att_c = self.attention_rnn(torch.cat([x, st["context"]], -1), (st["att_h"], st["att_c"]))
        att_h = F.dropout(att_h, p, self.training)
        weights_cat = torch.stack([st["weights"], st["weights_cum"]], dim=1)
        context, weights = self.attention(att_h, processed, memory, weights_cat, mask)
        dec_h, dec_c = self.decoder_rnn(torch.cat([att_h, context], -1), (st["dec_h"], st["dec_c"]))
        dec_h = F.dropout(dec_h, p, self.training)
        out = torch.cat([dec_h, context], -1)
        st = {
            "att_h": att_h,
            "att_c": att_c,
            "dec_h": dec_h,
            "dec_c": dec_c,
            "weights": weights,
            "weights_cum": st["weights_cum"] + weights,
            "context": context,
        }
        return self.mel_proj(out), self.stop_proj(out).squeeze(-1), weights, st

    def forward(
        self,
        memory: Tensor,
        memory_lengths: Tensor | None = None,
        teacher: Tensor | None = None,
        max_steps: int | None = None,
    ) -> DecoderOutput:
        """Teacher-forced when ``teacher`` (``[B, T, n_mels]``) is given, free-running otherwise."""
        if memory.ndim != 3 or memory.shape[1] == 0:
            raise ValidationError("decoder memory must be a nonempty [B, T', D] tensor")
        b, t_mem, _ = memory.shape
        if memory_lengths is None:
            memory_lengths = torch.full((b,), t_mem, dtype=torch.long)
        mask = _frame_mask(memory_lengths, t_mem)
        processed = self.attention.memory_layer(memory)
        st = self._init_state(memory)
        go = memory.new_zeros(b, 1, self.n_mels)
        mels, stops, aligns = [], [], []
        truncated = [False] * b
        if teacher is not None:
            inputs = self.prenet(torch.cat([go, teacher[:, :-1]], dim=1))
            for t in range(teacher.shape[1]):
                mel, stop, w, st = self._step(inputs[:, t], st, memory, processed, mask)
                mels.append(mel)
                stops.append(stop)
                aligns.append(w)
            lengths = torch.full((b,), teacher.shape[1], dtype=torch.long)
        else:
            if max_steps is None:
                max_steps = max(1, int(self.cfg.max_steps_factor * int(memory_lengths.max())))
            lengths = torch.full((b,), max_steps, dtype=torch.long)
            done = torch.zeros(b, dtype=torch.bool)
            prev = go[:, 0]
            for t in range(max_steps):
                mel, stop, w, st = self._step(self.prenet(prev), st, memory, processed, mask)
                mels.append(mel)
                stops.append(stop)
                aligns.append(w)
                prev = mel
                newly = (torch.sigmoid(stop) > self.cfg.stop_threshold) & ~done
                lengths[newly] = t + 1
                done |= newly
                if bool(done.all()):
                    break
            truncated = [not bool(d) for d in done]
        mel_pre = torch.stack(mels, dim=1)
        mel_post = mel_pre + self.postnet(mel_pre)
        return DecoderOutput(
            mel=mel_post,
            stop_logits=torch.stack(stops, dim=1),
            alignment=torch.stack(aligns, dim=1),
            mel_pre=mel_pre,
            lengths=lengths,
            truncated=truncated,
        )
