"""The trainable part of the converter: style encoder, content encoder and decoder."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import RunConfig
from .content import ContentEncoder
from .decoder import Decoder, DecoderOutput, fuse
from .style import StyleEncoder


class VcModel(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        feat_dim = cfg.features.dim
        self.style_encoder = StyleEncoder(feat_dim, cfg.style)
        self.content_encoder = ContentEncoder(feat_dim, cfg.content)
        self.decoder = Decoder(cfg.content.embed_dim, cfg.signal.n_mels, cfg.decoder)

    @property
    def min_reference_frames(self) -> int:
        return self.style_encoder.min_frames

    def style(self, feats: Tensor, lengths: Tensor | None = None) -> Tensor:
        return self.style_encoder(feats, lengths)

    def content(self, qfeats: Tensor, lengths: Tensor | None = None) -> tuple[Tensor, Tensor]:
        return self.content_encoder(qfeats, lengths)

    def forward(
        self,
        feats: Tensor,
        qfeats: Tensor,
        lengths: Tensor,
        teacher: Tensor,
    ) -> tuple[DecoderOutput, Tensor]:
        """Reconstruction pass: style and content both come from the same (cropped) utterance."""
        s = self.style(feats, lengths)
        content, content_lengths = self.content(qfeats, lengths)
        out = self.decoder(fuse(content, s), content_lengths, teacher=teacher)
        return out, s

    @torch.no_grad()
    def generate(self, s: Tensor, qfeats: Tensor, max_steps: int | None = None) -> DecoderOutput:
        """Free-running decode of one source (``qfeats`` ``[1, T, D]``) in the voice given by ``s`` ``[1, E]``."""
        content, content_lengths = self.content(qfeats)
        return self.decoder(fuse(content, s), content_lengths, max_steps=max_steps)
