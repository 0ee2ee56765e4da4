from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
import torch

from vcaug.bottleneck import fit_codebook, fit_stats, normalize
from vcaug.checkpoint import save_quantizer, write_run_metadata
from vcaug.config import RunConfig, tiny_preset
from vcaug.convert import Converter
from vcaug.features import build_backend, encode
from vcaug.frontend import FrontEnd
from vcaug.manifest import Manifest
from vcaug.signal import load_audio
from vcaug.synthetic import make_corpus
from vcaug.training import StepResult, Trainer, prepare_manifest
from vcaug.vocoder import build_vocoder

TRAIN_STEPS = 300

torch.set_num_threads(1)

# Acceptance criterion id -> title; tests in test_acceptance.py tag themselves with these.
CRITERIA = {
    1: "HGST telescoping",
    2: "HGST simplex weights",
    3: "gradient checks",
    4: "quantizer oracle",
    5: "normalization",
    6: "crop curriculum",
    7: "overfit smoke",
    8: "conversion pipeline",
    9: "augmentation cardinality",
    10: "SpecAugment",
    11: "W/CER oracle",
    12: "speaker-similarity metric",
    13: "directional re-synthesis",
    14: "end-to-end determinism",
}
_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "slow: trains a model")


def pytest_runtest_logreport(report):
    n = getattr(report, "criterion", None)
    if n is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes.setdefault(n, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status:7s} {title}")


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Manifest:
    """Eight synthetic utterances from four speakers (two female, two male)."""
    return make_corpus(tmp_path_factory.mktemp("corpus"), n_utterances=8, n_speakers=4, seed=0)


def tiny_config(**training) -> RunConfig:
    cfg = tiny_preset()
    cfg.training.batch_size = 8
    for key, value in training.items():
        setattr(cfg.training, key, value)
    return cfg


def fit_frontend(cfg: RunConfig, manifest: Manifest, k: int) -> FrontEnd:
    backend = build_backend(cfg.features, cfg.signal)
    feats = [encode(load_audio(manifest.audio_path(r)), backend, r.id) for r in manifest]
    stats = fit_stats(feats)
    codebook = fit_codebook([normalize(f, stats) for f in feats], k, seed=cfg.bottleneck.seed)
    return FrontEnd(cfg, backend, codebook, stats)


@dataclass
class Trained:
    cfg: RunConfig
    frontend: FrontEnd
    trainer: Trainer
    results: list[StepResult]
    ckpt: Path
    seconds: float
    manifest: Manifest

    def converter(self) -> Converter:
        return Converter(self.cfg, self.frontend, self.trainer.state.model, build_vocoder(self.cfg.vocoder, self.cfg.signal))


@pytest.fixture(scope="session")
def frontend(corpus) -> FrontEnd:
    cfg = tiny_config()
    cfg.bottleneck.k = 100
    return fit_frontend(cfg, corpus, k=100)


@pytest.fixture(scope="session")
def trained(corpus, frontend, tmp_path_factory) -> Trained:
    """Tiny model trained for 300 steps on the synthetic corpus, also saved as a checkpoint directory."""
    cfg = tiny_config(max_steps=TRAIN_STEPS)
    cfg.bottleneck.k = 100
    fe = FrontEnd(cfg, frontend.backend, frontend.codebook, frontend.train_stats)
    t0 = time.perf_counter()
    trainer = Trainer(cfg, prepare_manifest(corpus, fe))
    results = trainer.run()
    seconds = time.perf_counter() - t0
    ckpt = tmp_path_factory.mktemp("ckpt")
    save_quantizer(ckpt, fe.train_stats, fe.codebook)
    write_run_metadata(ckpt, cfg)
    trainer.state.save(ckpt)
    trainer.state.model.eval()
    return Trained(cfg, fe, trainer, results, ckpt, seconds, corpus)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
