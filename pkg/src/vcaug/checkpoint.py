"""Checkpoint container: a directory whose parts can be reused independently.

Layout::

    <dir>/config.json            config snapshot
    <dir>/version.txt            git-describe style version of the code
    <dir>/quantizer/stats.npz    training normalisation statistics
    <dir>/quantizer/codebook.npz K-means centroids
    <dir>/model.pt               latest model parameters
    <dir>/train_state.pt         optimizer, scheduler, RNG state, counters
    <dir>/best/model.pt          parameters with the best validation loss
"""

from __future__ import annotations

import os
import subprocess
from pathlib import Path

import torch

from . import __version__
from .bottleneck import Codebook, NormalizationStats
from .config import RunConfig
from .errors import ConfigError

QUANTIZER_DIR = "quantizer"


def version_string() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"vcaug {__version__} ({out.stdout.strip()})"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"vcaug {__version__}"


def write_run_metadata(out_dir: str | Path, cfg: RunConfig, prefix: str = "") -> None:
    """Config snapshot and version string; ``prefix`` keeps per-file runs from clobbering a shared directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_dir / f"{prefix}config.json", cfg.to_json() + "\n")
    _atomic_write_text(out_dir / f"{prefix}version.txt", version_string() + "\n")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic_torch_save(obj, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(obj, tmp)
    os.replace(tmp, path)


def save_quantizer(ckpt_dir: str | Path, stats: NormalizationStats, codebook: Codebook) -> None:
    qdir = Path(ckpt_dir) / QUANTIZER_DIR
    qdir.mkdir(parents=True, exist_ok=True)
    for name, obj in (("stats.npz", stats), ("codebook.npz", codebook)):
        tmp = qdir / f"tmp-{name}"
        obj.save(tmp)
        os.replace(tmp, qdir / name)


def load_quantizer(ckpt_dir: str | Path) -> tuple[NormalizationStats, Codebook]:
    qdir = Path(ckpt_dir) / QUANTIZER_DIR
    stats_path, cb_path = qdir / "stats.npz", qdir / "codebook.npz"
    if not cb_path.exists() or not stats_path.exists():
        raise ConfigError(f"no codebook in {ckpt_dir}; run `vcaug fit-quantizer` first")
    return NormalizationStats.load(stats_path), Codebook.load(cb_path)


def load_config(ckpt_dir: str | Path) -> RunConfig:
    path = Path(ckpt_dir) / "config.json"
    if not path.exists():
        raise ConfigError(f"checkpoint {ckpt_dir} has no config.json")
    return RunConfig.load(path)


def load_model_state(ckpt_dir: str | Path, best: bool = False) -> dict:
    path = Path(ckpt_dir) / ("best/model.pt" if best else "model.pt")
    if not path.exists():
        raise ConfigError(f"no trained model at {path}; run `vcaug train` first")
    return torch.load(path, map_location="cpu", weights_only=True)
