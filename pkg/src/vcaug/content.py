"""Content encoder: same layer types as the reference encoder, but every LSTM state is kept."""

from __future__ import annotations

from torch import Tensor, nn

from .config import ContentConfig
from .style import ConvStack, _check_lengths


class ContentEncoder(nn.Module):
    """Quantised features ``[B, T, D]`` -> content vectors ``[B, T', embed_dim]``.

    With ``stride=1`` (default) ``T' = T``, one content vector per 10 ms frame.
    With ``stride=2`` the stack downsamples like the reference encoder and
    ``T' = ceil(T / 2**n_layers)``.
    """

    def __init__(self, in_dim: int, cfg: ContentConfig):
        super().__init__()
        self.convs = ConvStack(in_dim, cfg.conv_channels, cfg.kernel_size, cfg.stride)
        self.lstm = nn.LSTM(self.convs.out_dim, cfg.lstm_hidden, batch_first=True)
        self.proj = nn.Linear(cfg.lstm_hidden, cfg.embed_dim)

    @property
    def min_frames(self) -> int:
        return self.convs.min_frames

    def output_lengths(self, lengths: Tensor) -> Tensor:
        return self.convs.output_lengths(lengths)

    def forward(self, x: Tensor, lengths: Tensor | None = None) -> tuple[Tensor, Tensor]:
        lengths = _check_lengths(x, lengths, self.min_frames, "content encoder")
        h = self.convs(x)
        out_lengths = self.output_lengths(lengths)
        packed = nn.utils.rnn.pack_padded_sequence(h, out_lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=h.shape[1])
        return self.proj(out), out_lengths
