import json

import pytest

from vcaug.config import RunConfig, parse_override_value, tiny_preset
from vcaug.errors import ConfigError, ValidationError
from vcaug.manifest import Manifest, Record


def test_round_trip(tmp_path):
    cfg = tiny_preset().with_overrides({"training.max_lr": 1e-3, "augment.specaug.n_time_masks": 1})
    cfg.save(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert back.augment.specaug.n_time_masks == 1


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="training.colour"):
        RunConfig.from_dict({"training": {"colour": 1}})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"training.nope": 1})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"training.max_lr.x": 1})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "bad.json")


def test_validation():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"content.embed_dim": 64})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"augment.method": "pitch"})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"training.crop_start_s": 20.0})


def test_override_values():
    assert parse_override_value("3e-4") == 3e-4
    assert parse_override_value("[1, 2]") == [1, 2]
    assert parse_override_value("true") is True
    assert parse_override_value("female_only") == "female_only"


def test_default_hyperparameters():
    cfg = RunConfig()
    assert cfg.bottleneck.k == 100
    assert (cfg.style.n_sublayers, cfg.style.n_tokens, cfg.style.embed_dim) == (3, 5, 512)
    assert cfg.features.dim == 512
    t = cfg.training
    assert (t.epochs, t.batch_size, t.max_lr, t.grad_clip_norm) == (50, 32, 6e-4, 1.0)
    assert (t.crop_start_s, t.crop_end_s, t.crop_jitter) == (0.6, 10.2, 0.2)
    assert cfg.augment.chunk_s == 7.0
    assert cfg.signal.sample_rate == 16000


def test_tiny_preset_keeps_feature_width():
    cfg = tiny_preset()
    assert cfg.features.dim == 512 and cfg.style.embed_dim == cfg.content.embed_dim == 32


def rec(i, **kw):
    base = dict(id=f"u{i}", audio_path=f"a/u{i}.wav", speaker_id="s", gender="female", language="x", transcript="t ü", duration_s=1.5)
    base.update(kw)
    return Record(**base)


def test_manifest_round_trip(tmp_path):
    m = Manifest([rec(0), rec(1, provenance={"kind": "vc", "source_id": "u0", "reference_id": "u0"})])
    m.save(tmp_path / "m.jsonl")
    back = Manifest.load(tmp_path / "m.jsonl")
    assert back.records == m.records
    assert back.audio_path(back[0]) == tmp_path / "a/u0.wav"
    assert "ü" in (tmp_path / "m.jsonl").read_text(encoding="utf-8")


def test_manifest_validation(tmp_path):
    bad = Manifest([rec(0), rec(0), rec(1, duration_s=0.0), rec(2, gender="x"), rec(3, provenance={"kind": "?"})])
    problems = bad.validate()
    assert len(problems) == 4
    with pytest.raises(ValidationError):
        bad.check()
    assert Manifest([rec(0)]).validate(check_audio=True)[0].endswith("not found")


def test_manifest_malformed_line(tmp_path):
    (tmp_path / "m.jsonl").write_text(json.dumps({"id": "x"}) + "\n")
    with pytest.raises(ValidationError, match=":1:"):
        Manifest.load(tmp_path / "m.jsonl")
