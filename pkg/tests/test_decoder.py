import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vcaug.config import ContentConfig, DecoderConfig
from vcaug.content import ContentEncoder
from vcaug.decoder import ContentSequence, Decoder, DecoderOutput, fuse, reconstruction_loss
from vcaug.errors import ValidationError
from vcaug.style import StyleVector


def small_decoder_cfg(width=8, dropout=0.0):
    return DecoderConfig(
        prenet_sizes=[width, width],
        prenet_dropout=dropout,
        attention_rnn_dim=width,
        decoder_rnn_dim=width,
        attention_dim=width,
        location_filters=4,
        location_kernel=3,
        postnet_channels=width,
        postnet_kernel=3,
        postnet_layers=5,
        rnn_dropout=dropout,
    )


def make_decoder(mem_dim=8, n_mels=6, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return Decoder(mem_dim, n_mels, small_decoder_cfg()).to(dtype).eval()


# -- fuse -------------------------------------------------------------------


def test_fuse_identity_and_broadcast():
    c = np.random.default_rng(0).standard_normal((5, 4))
    np.testing.assert_array_equal(fuse(c, np.zeros(4)), c)
    v = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(fuse(np.zeros((3, 4)), v), np.tile(v, (3, 1)))


def test_fuse_matches_elementwise_oracle():
    r = np.random.default_rng(1)
    c, s = r.standard_normal((7, 5)), r.standard_normal(5)
    out = fuse(ContentSequence(c), StyleVector(s))
    assert isinstance(out, ContentSequence)
    for t in range(7):
        for d in range(5):
            assert out.vectors[t, d] == c[t, d] + s[d]


def test_fuse_batched_tensor():
    c, s = torch.randn(2, 3, 4), torch.randn(2, 4)
    out = fuse(c, s)
    assert torch.equal(out[1, 2], c[1, 2] + s[1])


def test_fuse_dimension_mismatch():
    with pytest.raises(ValidationError):
        fuse(np.zeros((3, 4)), np.zeros(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_fuse_linear(seed):
    r = np.random.default_rng(seed)
    # Integer-valued inputs keep float addition exact, so equality is bitwise.
    c = r.integers(-100, 100, (4, 3)).astype(float)
    s1, s2 = r.integers(-100, 100, 3).astype(float), r.integers(-100, 100, 3).astype(float)
    np.testing.assert_array_equal(fuse(c, s1 + s2), fuse(fuse(c, s1), s2))


# -- decoder ----------------------------------------------------------------


def test_teacher_forced_length_and_ranges():
    dec = make_decoder(dtype=torch.float32)
    memory = torch.randn(2, 30, 8)
    teacher = torch.randn(2, 120, 6)
    out = dec(memory, torch.tensor([30, 22]), teacher=teacher)
    assert out.mel.shape == (2, 120, 6)
    probs = out.stop_probs
    assert ((probs >= 0) & (probs <= 1)).all()
    rows = out.alignment.sum(-1)
    assert torch.allclose(rows, torch.ones_like(rows), atol=1e-5)
    # Masked memory frames get no attention.
    assert out.alignment[1, :, 22:].abs().max() == 0


def test_free_running_bound_and_truncation():
    dec = make_decoder(dtype=torch.float32)
    with torch.no_grad():
        dec.stop_proj.bias.fill_(-1e3)
        out = dec(torch.randn(1, 50, 8))
    assert out.mel.shape[1] == 100
    assert out.truncated == [True]
    with torch.no_grad():
        dec.stop_proj.bias.fill_(1e3)
        out = dec(torch.randn(1, 50, 8))
    assert out.mel.shape[1] == 1 and out.truncated == [False] and int(out.lengths[0]) == 1


def test_teacher_forcing_deterministic():
    dec = make_decoder()
    memory = torch.randn(1, 9, 8, dtype=torch.float64)
    teacher = torch.randn(1, 12, 6, dtype=torch.float64)
    a = reconstruction_loss(dec(memory, teacher=teacher), teacher).total
    b = reconstruction_loss(dec(memory, teacher=teacher), teacher).total
    assert a.item() == b.item()


def test_decoder_rejects_empty_memory():
    with pytest.raises(ValidationError):
        make_decoder()(torch.zeros(1, 0, 8, dtype=torch.float64))


# -- loss -------------------------------------------------------------------


def output(mel, stop_logits=None, mel_pre=None):
    mel = torch.as_tensor(mel, dtype=torch.float64)
    if mel.ndim == 2:
        mel = mel[None]
    if stop_logits is None:
        stop_logits = torch.zeros(mel.shape[:2], dtype=torch.float64)
    return DecoderOutput(mel=mel, stop_logits=stop_logits, mel_pre=mel_pre)


def test_loss_identity_and_offset():
    target = torch.randn(1, 10, 4, dtype=torch.float64)
    assert reconstruction_loss(output(target), target).l2_term.item() == 0.0
    assert reconstruction_loss(output(target + 1), target).l2_term.item() == pytest.approx(1.0, abs=1e-12)


def test_loss_hand_computed_toy():
    pred = np.array([[0.5, -1.0], [2.0, 0.0], [1.5, 3.0]])
    target = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    # (0.25 + 1 + 1 + 1 + 0.25 + 1) / 6 = 4.5 / 6
    logits = torch.tensor([[0.0, 1.0, -2.0]], dtype=torch.float64)
    loss = reconstruction_loss(output(pred, logits), torch.tensor(target), stop_weight=2.0, stop_pos_weight=5.0)
    assert loss.l2_term.item() == pytest.approx(0.75, abs=1e-10)

    def sp(x):
        return math.log1p(math.exp(x))

    # Target is 1 only at the final frame; positives are weighted by 5.
    stop = (sp(0.0) + sp(1.0) + 5 * sp(2.0)) / 3
    assert loss.stop_term.item() == pytest.approx(stop, abs=1e-10)
    assert loss.total.item() == pytest.approx(0.75 + 2 * stop, abs=1e-10)


def test_loss_includes_pre_postnet_term():
    target = torch.zeros(1, 4, 2, dtype=torch.float64)
    loss = reconstruction_loss(output(target, mel_pre=target + 2), target)
    assert loss.l2_term.item() == pytest.approx(4.0)


def test_loss_masks_padding():
    target = torch.zeros(2, 5, 3, dtype=torch.float64)
    pred = target.clone()
    pred[1, 3:] = 100.0
    loss = reconstruction_loss(output(pred), target, lengths=torch.tensor([5, 3]))
    assert loss.l2_term.item() == 0.0


def test_loss_shape_mismatch():
    with pytest.raises(ValidationError):
        reconstruction_loss(output(torch.zeros(1, 4, 2)), torch.zeros(1, 5, 2, dtype=torch.float64))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    pred = torch.randn(2, 6, 3, generator=g, dtype=torch.float64)
    target = torch.randn(2, 6, 3, generator=g, dtype=torch.float64)
    loss = reconstruction_loss(output(pred, torch.randn(2, 6, generator=g, dtype=torch.float64)), target)
    assert loss.l2_term.item() >= 0 and loss.stop_term.item() >= 0
    assert math.isfinite(loss.total.item())


# -- content encoder --------------------------------------------------------


def test_content_encoder_frame_rate():
    torch.manual_seed(0)
    enc = ContentEncoder(12, ContentConfig(conv_channels=[8] * 6, lstm_hidden=8, embed_dim=16)).eval()
    out, lengths = enc(torch.randn(2, 37, 12), torch.tensor([37, 20]))
    assert out.shape == (2, 37, 16) and lengths.tolist() == [37, 20]
    assert enc.min_frames == 1


def test_content_encoder_stride_two():
    enc = ContentEncoder(12, ContentConfig(conv_channels=[8] * 6, lstm_hidden=8, embed_dim=16, stride=2)).eval()
    out, lengths = enc(torch.randn(1, 130, 12))
    assert lengths.tolist() == [3] and out.shape == (1, 3, 16)
    with pytest.raises(ValidationError):
        enc(torch.randn(1, 10, 12))


def test_content_encoder_causal():
    # Unidirectional recurrence + symmetric convs: frames well before a change are unaffected.
    torch.manual_seed(0)
    enc = ContentEncoder(4, ContentConfig(conv_channels=[4] * 2, kernel_size=3, lstm_hidden=4, embed_dim=4)).eval()
    x = torch.randn(1, 20, 4)
    y = x.clone()
    y[0, 15:] += 1.0
    with torch.no_grad():
        a, _ = enc(x)
        b, _ = enc(y)
    assert torch.equal(a[0, :13], b[0, :13])
