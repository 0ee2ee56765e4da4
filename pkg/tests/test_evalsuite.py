import json
import sys
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcaug.errors import BackendError, ValidationError
from vcaug.evalsuite import (
    CommandAsr,
    MelStatsEmbedder,
    MockAsr,
    ToneAsr,
    chars,
    cosine,
    edit_distance,
    embed_triples,
    error_rates,
    load_triples,
    resynthesis_eval,
    speaker_similarity_eval,
    words,
)
from vcaug.signal import Waveform, load_audio


def levenshtein(a, b):
    """Plain memoised recursion, independent of the table-filling implementation."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(go(i - 1, j) + 1, go(i, j - 1) + 1, go(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return go(len(a), len(b))


# -- edit distance ----------------------------------------------------------


def test_edit_distance_examples():
    e = edit_distance(words("a b c"), words("a c"))
    assert (e.distance, e.deletions, e.insertions, e.substitutions) == (1, 1, 0, 0)
    assert error_rates([("a b c", "a c")]).wer == pytest.approx(1 / 3)
    e = edit_distance([], words("x y"))
    assert (e.distance, e.insertions) == (2, 2)
    assert edit_distance("kitten", "sitting").distance == 3


def test_chars_normalises_whitespace():
    assert chars("  a   b ") == ["a", " ", "b"]


tokens = st.lists(st.sampled_from("abcd"), max_size=8)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens)
def test_edit_distance_matches_oracle(a, b):
    e = edit_distance(a, b)
    assert e.distance == levenshtein(a, b)
    assert e.substitutions + e.insertions + e.deletions == e.distance
    assert len(a) - e.deletions + e.insertions == len(b)


@settings(max_examples=100, deadline=None)
@given(tokens, tokens, tokens)
def test_edit_distance_metric(a, b, c):
    assert edit_distance(a, b).distance == edit_distance(b, a).distance
    assert edit_distance(a, c).distance <= edit_distance(a, b).distance + edit_distance(b, c).distance
    assert (edit_distance(a, b).distance == 0) == (a == b)


def test_pooled_rates():
    # 1 error over 5 reference words, not the mean of per-utterance rates.
    r = error_rates([("a b c d", "a b c d"), ("x", "y")])
    assert r.wer == pytest.approx(0.2)
    assert error_rates([("one two three four", "one two tree four")]).wer == 0.25
    assert r.cer == pytest.approx(1 / (7 + 1))


def test_empty_references_rejected():
    with pytest.raises(ValidationError):
        error_rates([])
    with pytest.raises(ValidationError):
        error_rates([("", "x"), ("  ", "")])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.text("ab ", min_size=1, max_size=10), st.text("ab ", max_size=10)), min_size=1, max_size=5))
def test_duplicating_corpus_keeps_rates(pairs):
    if not any(words(r) for r, _ in pairs):
        return
    a, b = error_rates(pairs), error_rates(pairs * 2)
    assert a.wer == pytest.approx(b.wer) and a.cer == pytest.approx(b.cer)


# -- ASR backends -----------------------------------------------------------


def test_mock_asr():
    asr = MockAsr({"u": "a b c d e f g h"}, corruption_rate=0.0)
    assert asr.transcribe(Waveform(np.zeros(10), 16000), "u") == "a b c d e f g h"
    noisy = MockAsr({"u": " ".join("w" * 200)}, corruption_rate=0.5, seed=1)
    out = noisy.transcribe(None, "u")
    assert out == noisy.transcribe(None, "u")
    assert 50 < words(out).count("<unk>") < 150
    with pytest.raises(BackendError):
        asr.transcribe(None, "missing")


def test_tone_asr_reads_synthetic_corpus(corpus):
    asr = ToneAsr()
    pairs = [(r.transcript, asr.transcribe(load_audio(corpus.audio_path(r)), r.id)) for r in corpus]
    assert error_rates(pairs).wer == 0.0
    assert asr.transcribe(Waveform(np.zeros(16000), 16000)) == ""


def test_command_asr(tmp_path):
    script = tmp_path / "asr.py"
    script.write_text("import sys, pathlib\nprint('heard ' + pathlib.Path(sys.argv[1]).stem)\n")
    asr = CommandAsr(f"{sys.executable} {script}")
    assert asr.transcribe(Waveform(np.zeros(160), 16000), "utt7") == "heard utt7"
    failing = tmp_path / "fail.py"
    failing.write_text("import sys\nsys.exit(3)\n")
    with pytest.raises(BackendError):
        CommandAsr(f"{sys.executable} {failing}").transcribe(Waveform(np.zeros(160), 16000), "u")


# -- re-synthesis -----------------------------------------------------------


def test_identity_conversion_has_zero_drop(corpus):
    for asr in (MockAsr({r.id: r.transcript for r in corpus}, 0.3), ToneAsr()):
        report = resynthesis_eval(corpus, lambda src, ref: src.waveform, asr)
        assert report.wer_drop == 0.0 and report.cer_drop == 0.0
        assert report.failed_ids == []
        assert "Original data" in report.table() and json.dumps(report.to_dict())


def test_partial_failure_reported(corpus):
    asr = MockAsr({r.id: r.transcript for r in list(corpus)[:5]})
    report = resynthesis_eval(corpus, lambda src, ref: src.waveform, asr)
    assert report.failed_ids == [r.id for r in list(corpus)[5:]]
    assert report.original.n_utterances == 5
    assert sum("error" in h for h in report.hypotheses) == 3


def test_conversion_error_recorded(corpus):
    def boom(src, ref):
        raise BackendError("vocoder down")

    report = resynthesis_eval(corpus, boom, ToneAsr())
    assert report.original is None and len(report.failed_ids) == len(corpus)


# -- speaker similarity -----------------------------------------------------


def brute_force(triples):
    errors = []
    for conv, src, ref in triples:
        def cos(a, b):
            dot = sum(float(x) * float(y) for x, y in zip(a, b))
            na = sum(float(x) ** 2 for x in a) ** 0.5
            nb = sum(float(y) ** 2 for y in b) ** 0.5
            return dot / (na * nb)

        errors.append(cos(conv, src) >= cos(conv, ref))
    return errors


def test_speaker_similarity_examples():
    src, ref = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    rep = speaker_similarity_eval([(np.array([0.1, 1.0]), src, ref), (np.array([1.0, 0.2]), src, ref), (np.array([1.0, 1.0]), src, ref)])
    assert [t.is_error for t in rep.per_triple] == [False, True, True]  # the tie counts as an error
    assert rep.error_rate == pytest.approx(2 / 3)
    assert cosine([2.0, 0.0], [5.0, 0.0]) == 1.0


def test_speaker_similarity_rejects_bad_input():
    with pytest.raises(ValidationError):
        speaker_similarity_eval([])
    with pytest.raises(ValidationError):
        speaker_similarity_eval([(np.zeros(3), np.ones(3), np.ones(3))])
    with pytest.raises(ValidationError):
        speaker_similarity_eval([(np.ones(3), np.ones(2), np.ones(3))])


def test_speaker_similarity_brute_force_and_scaling():
    rng = np.random.default_rng(0)
    triples = [tuple(rng.standard_normal((3, 16))) for _ in range(100)]
    rep = speaker_similarity_eval(triples)
    assert [t.is_error for t in rep.per_triple] == brute_force(triples)
    scaled = [(2.5 * c, 0.1 * s, 7.0 * r) for c, s, r in triples]
    assert [t.is_error for t in speaker_similarity_eval(scaled).per_triple] == brute_force(triples)


def test_load_triples(tmp_path):
    rng = np.random.default_rng(1)
    a, b, c = rng.standard_normal((3, 5, 4))
    np.savez(tmp_path / "t.npz", converted=a, source=b, reference=c)
    triples = load_triples(tmp_path / "t.npz")
    assert len(triples) == 5
    np.testing.assert_array_equal(triples[2][1], b[2])
    np.savez(tmp_path / "bad.npz", converted=a, source=b[:, :3], reference=c)
    with pytest.raises(ValidationError):
        load_triples(tmp_path / "bad.npz")


def test_embed_triples_with_mel_stats(tmp_path, corpus):
    rows = []
    for i in range(3):
        rows.append({k: str(corpus.audio_path(corpus[j])) for k, j in zip(("converted", "source", "reference"), (i, i, i + 1))})
    (tmp_path / "pairs.jsonl").write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    triples = embed_triples(tmp_path / "pairs.jsonl", MelStatsEmbedder())
    assert len(triples) == 3 and triples[0][0].shape == (160,)
    # A converted utterance identical to its source is always an error.
    assert speaker_similarity_eval(triples).error_rate == 1.0

