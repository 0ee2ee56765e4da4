"""Style encoder: a reference encoder followed by a hierarchical style-token layer.

The token layer is the speaker-information bottleneck. Sublayer ``i``
approximates its input ``r_i`` as a convex combination ``c_i`` of its ``h``
tokens and passes the residual ``r_{i+1} = r_i - c_i`` on. The style vector
is the sum of the approximations, so ``r_1 = s + r_{l+1}`` holds exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .config import StyleConfig
from .errors import ValidationError


@dataclass(frozen=True)
class StyleVector:
    s: np.ndarray
    reference_utterance_id: str | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.s)):
            raise ValidationError("style vector is not finite")


class ConvStack(nn.Module):
    """1-d conv layers with batch norm and ReLU, on ``[B, T, C]`` inputs."""

    def __init__(self, in_dim: int, channels: Sequence[int], kernel_size: int = 9, stride: int = 1):
        super().__init__()
        layers = []
        prev = in_dim
        for ch in channels:
            layers += [
                nn.Conv1d(prev, ch, kernel_size, stride=stride, padding=kernel_size // 2),
                nn.BatchNorm1d(ch),
                nn.ReLU(),
            ]
            prev = ch
        self.net = nn.Sequential(*layers)
        self.n_layers = len(channels)
        self.stride = stride
        self.out_dim = prev

    @property
    def min_frames(self) -> int:
        return self.stride**self.n_layers

    def output_lengths(self, lengths: Tensor) -> Tensor:
        for _ in range(self.n_layers):
            lengths = torch.div(lengths - 1, self.stride, rounding_mode="floor") + 1
        return lengths

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x.transpose(1, 2)).transpose(1, 2)


def _check_lengths(x: Tensor, lengths: Tensor | None, min_frames: int, what: str) -> Tensor:
    if lengths is None:
        lengths = torch.full((x.shape[0],), x.shape[1], dtype=torch.long)
    shortest = int(lengths.min())
    if shortest < min_frames:
        raise ValidationError(f"{what} needs at least {min_frames} frames ({min_frames * 10} ms), got {shortest}")
    return lengths


class ReferenceEncoder(nn.Module):
    """Conv stack -> LSTM -> linear projection of the final hidden state."""

    def __init__(self, in_dim: int, cfg: StyleConfig):
        super().__init__()
        self.convs = ConvStack(in_dim, cfg.conv_channels, cfg.kernel_size, cfg.stride)
        self.lstm = nn.LSTM(self.convs.out_dim, cfg.lstm_hidden, batch_first=True)
        self.proj = nn.Linear(cfg.lstm_hidden, cfg.embed_dim)

    @property
    def min_frames(self) -> int:
        return self.convs.min_frames

    def forward(self, x: Tensor, lengths: Tensor | None = None) -> Tensor:
        lengths = _check_lengths(x, lengths, self.min_frames, "reference encoder")
        h = self.convs(x)
        out_lengths = self.convs.output_lengths(lengths)
        packed = nn.utils.rnn.pack_padded_sequence(h, out_lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, (hn, _) = self.lstm(packed)
        return self.proj(hn[-1])


class HierarchicalStyleTokens(nn.Module):
    """``n_sublayers`` sublayers of ``n_tokens`` trainable vectors with scaled dot-product scoring."""

    def __init__(self, dim: int, n_sublayers: int = 3, n_tokens: int = 5, attn_dim: int = 128, token_std: float = 0.3):
        super().__init__()
        self.dim = dim
        self.attn_dim = attn_dim
        self.tokens = nn.Parameter(torch.randn(n_sublayers, n_tokens, dim) * token_std)
        self.query = nn.ModuleList(nn.Linear(dim, attn_dim, bias=False) for _ in range(n_sublayers))
        self.key = nn.ModuleList(nn.Linear(dim, attn_dim, bias=False) for _ in range(n_sublayers))

    @classmethod
    def from_config(cls, cfg: StyleConfig) -> "HierarchicalStyleTokens":
        return cls(cfg.embed_dim, cfg.n_sublayers, cfg.n_tokens, cfg.attn_dim, cfg.token_std)

    @property
    def n_sublayers(self) -> int:
        return self.tokens.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[1]

    def attention(self, i: int, r: Tensor) -> Tensor:
        q = self.query[i](r)  # [B, A]
        k = self.key[i](self.tokens[i])  # [h, A]
        return F.softmax(q @ k.T / math.sqrt(self.attn_dim), dim=-1)

    def forward(self, r: Tensor, weights: Sequence[Tensor] | None = None) -> tuple[Tensor, list[Tensor], list[Tensor]]:
        """Return ``(s, residuals, weights)`` for ``r`` of shape ``[B, dim]``.

        ``weights`` overrides the learned scoring with fixed per-sublayer
        convex weights, which is handy for analysis and oracles.
        """
        residual = r
        s = torch.zeros_like(r)
        residuals, alphas = [], []
        for i in range(self.n_sublayers):
            alpha = self.attention(i, residual) if weights is None else weights[i].expand(r.shape[0], -1)
            c = alpha @ self.tokens[i]
            s = s + c
            residual = residual - c
            residuals.append(residual)
            alphas.append(alpha)
        return s, residuals, alphas


def hgst_forward(r: np.ndarray | Tensor, g: HierarchicalStyleTokens):
    """Numpy-friendly wrapper: one or many ``r`` vectors in, ``(s, residuals, weights)`` out."""
    t = torch.as_tensor(r, dtype=g.tokens.dtype)
    squeeze = t.ndim == 1
    if squeeze:
        t = t[None]
    with torch.no_grad():
        s, residuals, weights = g(t)
    conv = (lambda a: a[0].numpy()) if squeeze else (lambda a: a.numpy())
    return conv(s), [conv(x) for x in residuals], [conv(x) for x in weights]


class StyleEncoder(nn.Module):
    def __init__(self, in_dim: int, cfg: StyleConfig):
        super().__init__()
        self.reference = ReferenceEncoder(in_dim, cfg)
        self.hgst = HierarchicalStyleTokens.from_config(cfg)

    @property
    def min_frames(self) -> int:
        return self.reference.min_frames

    def forward(self, x: Tensor, lengths: Tensor | None = None) -> Tensor:
        s, _, _ = self.hgst(self.reference(x, lengths))
        return s

    def inspect(self, x: Tensor) -> tuple[Tensor, list[Tensor], list[Tensor]]:
        return self.hgst(self.reference(x))
