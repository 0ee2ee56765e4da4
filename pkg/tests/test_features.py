import json

import numpy as np
import pytest
import torch

from vcaug.config import FeaturesConfig, SignalConfig
from vcaug.errors import BackendError, ConfigError, ValidationError
from vcaug.features import ExternalBackend, FeatureCache, FeatureSequence, StandinBackend, build_backend, encode
from vcaug.signal import Waveform


class FrameEnergy(torch.nn.Module):
    """Toy encoder: per-hop mean and mean-square, tiled to ``dim``."""

    def __init__(self, hop: int, dim: int):
        super().__init__()
        self.hop = hop
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = 1 + x.shape[1] // self.hop
        pad = torch.nn.functional.pad(x, (0, n * self.hop - x.shape[1]))
        frames = pad.reshape(1, n, self.hop)
        feats = torch.stack([frames.mean(-1), (frames**2).mean(-1)], dim=-1)
        return feats.repeat(1, 1, self.dim // 2)


def script_encoder(tmp_path, hop_s=0.010, dim=8, sidecar=True):
    path = tmp_path / "enc.pt"
    torch.jit.script(FrameEnergy(160, dim)).save(str(path))
    if sidecar:
        (tmp_path / "enc.pt.json").write_text(json.dumps({"frame_hop_s": hop_s, "dim": dim}))
    return path


def tone(seconds=0.5):
    t = np.arange(int(seconds * 16000)) / 16000
    return Waveform(0.3 * np.sin(2 * np.pi * 700 * t), 16000)


def test_standin_shape_and_rate():
    f = encode(tone(1.0), StandinBackend(), "u1")
    assert f.vectors.shape == (101, 512)
    assert f.frame_hop_s == pytest.approx(0.010)
    assert f.source_utterance_id == "u1"


def test_standin_deterministic_and_projection_orthonormal():
    a, b = StandinBackend(seed=1234), StandinBackend(seed=1234)
    w = tone()
    np.testing.assert_array_equal(a(w), b(w))
    p = a.projection
    assert p.shape == (400, 512)
    np.testing.assert_allclose(p @ p.T, np.eye(400), atol=1e-10)


def test_standin_context_stacking():
    # With an identity-like projection the stacked context is visible directly.
    be = StandinBackend(SignalConfig(n_mels=80), dim=400, context=2)
    w = tone(0.2)
    stacked = be(w) @ be.projection.T
    assert stacked.shape == (21, 400)
    # Centre block of frame t equals the previous block of frame t+1.
    np.testing.assert_allclose(stacked[1:, 160:240], stacked[:-1, 240:320], atol=1e-10)


def test_encode_rejects_short_audio():
    with pytest.raises(ValidationError):
        encode(Waveform(np.zeros(100), 16000), StandinBackend())


def test_feature_sequence_validation():
    with pytest.raises(ValidationError):
        FeatureSequence(np.zeros((0, 4)))
    with pytest.raises(ValidationError):
        FeatureSequence(np.array([[np.nan]]))


def test_external_backend(tmp_path):
    be = ExternalBackend(script_encoder(tmp_path))
    w = tone(0.5)
    f = encode(w, be)
    assert f.vectors.shape == (51, 8)
    frame = w.samples[160:320]
    assert f.vectors[1, 0] == pytest.approx(frame.mean(), abs=1e-6)
    assert f.vectors[1, 1] == pytest.approx((frame**2).mean(), abs=1e-6)


def test_external_backend_via_config(tmp_path):
    path = script_encoder(tmp_path)
    be = build_backend(FeaturesConfig(backend="external", checkpoint=str(path), dim=8))
    assert isinstance(be, ExternalBackend)
    with pytest.raises(ConfigError):
        build_backend(FeaturesConfig(backend="external"))


def test_external_backend_contract_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExternalBackend(tmp_path / "nope.pt")
    (tmp_path / "a").mkdir()
    with pytest.raises(ConfigError, match="sidecar"):
        ExternalBackend(script_encoder(tmp_path / "a", sidecar=False))
    (tmp_path / "b").mkdir()
    with pytest.raises(ConfigError, match="hop"):
        ExternalBackend(script_encoder(tmp_path / "b", hop_s=0.02))
    (tmp_path / "c").mkdir()
    path = script_encoder(tmp_path / "c")
    (tmp_path / "c" / "enc.pt.json").write_text(json.dumps({"frame_hop_s": 0.01, "dim": 6}))
    with pytest.raises(BackendError):
        encode(tone(), ExternalBackend(path))


def test_feature_cache_memoises():
    calls = []

    class Counting(StandinBackend):
        def _encode(self, w):
            calls.append(1)
            return super()._encode(w)

    cache = FeatureCache(Counting())
    w = tone()
    first = cache.get("u", w)
    assert cache.get("u", w) is first
    assert len(calls) == 1
