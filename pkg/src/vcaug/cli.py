"""Command-line entry point ``vcaug``.

Exit codes: 0 success, 2 validation or configuration error, 1 anything else.
Config values can be overridden with dotted flags, e.g. ``--training.max_lr 3e-4``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import torch

from .config import RunConfig, parse_override_value, tiny_preset
from .errors import ConfigError, ValidationError

log = logging.getLogger("vcaug")


def _split_overrides(extra: list[str]) -> dict:
    overrides = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognised argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {tok} needs a value")
            i += 1
            value = extra[i]
        overrides[key] = parse_override_value(value)
        i += 1
    return overrides


def resolve_config(args, ckpt_dir: str | None = None) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
    elif ckpt_dir and (Path(ckpt_dir) / "config.json").exists():
        cfg = RunConfig.load(Path(ckpt_dir) / "config.json")
    else:
        cfg = RunConfig()
    if getattr(args, "preset", None) == "tiny":
        cfg = tiny_preset(cfg)
    return cfg.with_overrides(args.overrides) if args.overrides else cfg


# -- subcommands ------------------------------------------------------------


def cmd_fit_quantizer(args) -> int:
    from .bottleneck import fit_codebook, fit_stats, normalize
    from .checkpoint import save_quantizer, write_run_metadata
    from .features import build_backend, encode
    from .manifest import Manifest
    from .signal import load_audio

    cfg = resolve_config(args, args.ckpt)
    manifest = Manifest.load(args.manifest).check()
    subset = list(manifest)[: cfg.bottleneck.stats_subset]
    backend = build_backend(cfg.features, cfg.signal)
    feats = [encode(load_audio(manifest.audio_path(r), cfg.signal.sample_rate), backend, r.id) for r in subset]
    stats = fit_stats(feats)
    normed = [normalize(f, stats, cfg.bottleneck.eps) for f in feats]
    codebook = fit_codebook(
        normed,
        cfg.bottleneck.k,
        cfg.bottleneck.seed,
        cfg.bottleneck.max_iter,
        cfg.bottleneck.tol,
        metadata={"fit_on": "normalized", "n_utterances": len(subset)},
    )
    save_quantizer(args.ckpt, stats, codebook)
    write_run_metadata(args.ckpt, cfg)
    print(json.dumps(codebook.fit_metadata))
    return 0


def cmd_train(args) -> int:
    from .checkpoint import load_quantizer
    from .manifest import Manifest
    from .training import fit

    cfg = resolve_config(args, args.ckpt)
    load_quantizer(args.ckpt)  # fail fast with a pointer to fit-quantizer
    train = Manifest.load(args.train_manifest).check()
    val = Manifest.load(args.val_manifest).check() if args.val_manifest else None
    state = fit(train, val, cfg, args.ckpt, resume=args.resume)
    print(json.dumps({"steps": state.step, "epochs": state.epoch, "best_val_loss": state.best_val_loss if math.isfinite(state.best_val_loss) else None}))
    return 0


def cmd_convert(args) -> int:
    from .checkpoint import write_run_metadata
    from .convert import ConversionRequest, Converter, Utterance
    from .signal import load_audio, save_audio

    cfg = resolve_config(args, args.ckpt)
    conv = Converter.from_checkpoint(args.ckpt, best=args.best, cfg=cfg)
    rate = cfg.signal.sample_rate
    src = Utterance(Path(args.source).stem, load_audio(args.source, rate))
    ref = Utterance(Path(args.reference).stem, load_audio(args.reference, rate))
    chunk_s = args.chunk_s if args.chunk_s is not None else cfg.augment.chunk_s
    fade = args.crossfade_ms if args.crossfade_ms is not None else cfg.augment.crossfade_ms
    result = conv.convert(ConversionRequest(src, ref, chunk_s, fade))
    save_audio(args.out, result.waveform)
    write_run_metadata(Path(args.out).parent, cfg, prefix=Path(args.out).stem + ".")
    print(
        json.dumps(
            {
                "out": str(args.out),
                "duration_s": result.waveform.duration_s,
                "per_chunk_frames": result.per_chunk_frames,
                "truncated": result.truncated,
                "real_time_factor": result.real_time_factor,
            }
        )
    )
    return 0


def cmd_augment(args) -> int:
    from .augment import AugmentPlan, augment_dataset
    from .checkpoint import write_run_metadata
    from .convert import Converter
    from .manifest import Manifest
    from .vocoder import build_vocoder

    cfg = resolve_config(args, args.ckpt)
    if args.plan:
        plan = AugmentPlan.load(args.plan, cfg.augment)
    else:
        plan = AugmentPlan.from_config(cfg.augment)
    if args.ratio is not None:
        plan.ratio_percent = args.ratio
    if args.method is not None:
        plan.method = args.method
    if args.gender_filter is not None:
        plan.gender_filter = args.gender_filter
    if args.seed is not None:
        plan.seed = args.seed
    if args.reference_pool:
        plan.reference_pool = Manifest.load(args.reference_pool)
    plan.__post_init__()
    converter = None
    if plan.method != "specaug":
        if not args.ckpt:
            raise ConfigError(f"augment method {plan.method!r} needs --ckpt pointing at a trained checkpoint")
        converter = Converter.from_checkpoint(args.ckpt, cfg=cfg)
    manifest = Manifest.load(args.manifest)
    out = augment_dataset(manifest, plan, args.out_dir, converter, build_vocoder(cfg.vocoder, cfg.signal), cfg.signal)
    write_run_metadata(args.out_dir, cfg)
    print(json.dumps({"manifest": str(Path(args.out_dir) / "manifest.jsonl"), "records": len(out)}))
    return 0


def _build_asr(args, cfg, test):
    from .evalsuite import CommandAsr, MockAsr, ToneAsr

    kind = args.asr or cfg.eval.asr
    if kind == "mock":
        return MockAsr({r.id: r.transcript for r in test}, cfg.eval.mock_corruption, cfg.eval.seed)
    if kind == "tone":
        return ToneAsr(cfg.signal)
    if kind == "command":
        command = args.asr_command or cfg.eval.asr_command
        if not command:
            raise ConfigError("--asr command needs --asr-command")
        return CommandAsr(command)
    raise ConfigError(f"unknown ASR backend {kind!r}")


def cmd_eval_resynth(args) -> int:
    from .checkpoint import write_run_metadata
    from .convert import ConversionRequest, Converter
    from .evalsuite import resynthesis_eval
    from .manifest import Manifest

    cfg = resolve_config(args, args.ckpt)
    test = Manifest.load(args.manifest).check()
    pool = Manifest.load(args.reference_pool).check() if args.reference_pool else None
    if args.identity:
        convert_fn = lambda src, ref: src.waveform  # noqa: E731
    else:
        if not args.ckpt:
            raise ConfigError("eval-resynth needs --ckpt (or --identity for the control run)")
        conv = Converter.from_checkpoint(args.ckpt, cfg=cfg)
        convert_fn = lambda src, ref: conv.convert(ConversionRequest(src, ref, cfg.augment.chunk_s)).waveform  # noqa: E731
    report = resynthesis_eval(
        test,
        convert_fn,
        _build_asr(args, cfg, test),
        pool,
        args.gender_filter or cfg.augment.gender_filter,
        cfg.eval.seed,
        cfg.signal.sample_rate,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resynth.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out / "resynth.txt").write_text(report.table() + "\n", encoding="utf-8")
    write_run_metadata(out, cfg)
    print(report.table())
    if report.failed_ids:
        print(f"vcaug: {len(report.failed_ids)} utterance(s) failed: {', '.join(report.failed_ids)}", file=sys.stderr)
    return 0


def cmd_eval_speaker(args) -> int:
    from .checkpoint import write_run_metadata
    from .evalsuite import MelStatsEmbedder, embed_triples, load_triples, speaker_similarity_eval

    cfg = resolve_config(args)
    if bool(args.triples) == bool(args.pairs):
        raise ConfigError("eval-speaker needs exactly one of --triples or --pairs")
    triples = load_triples(args.triples) if args.triples else embed_triples(args.pairs, MelStatsEmbedder(cfg.signal), cfg.signal.sample_rate)
    report = speaker_similarity_eval(triples)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "speaker.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out / "speaker.txt").write_text(report.table() + "\n", encoding="utf-8")
    write_run_metadata(out, cfg)
    print(report.table())
    return 0


def cmd_style_inspect(args) -> int:
    from .convert import Converter, Utterance
    from .signal import load_audio

    cfg = resolve_config(args, args.ckpt)
    conv = Converter.from_checkpoint(args.ckpt, cfg=cfg)
    ref = Utterance(Path(args.reference).stem, load_audio(args.reference, cfg.signal.sample_rate))
    f = conv.frontend.features(ref.waveform, ref.id)
    if f.n_frames < conv.model.min_reference_frames:
        raise ValidationError(f"reference needs at least {conv.model.min_reference_frames} frames, got {f.n_frames}")
    with torch.no_grad():
        _, residuals, weights = conv.model.style_encoder.inspect(torch.as_tensor(f.vectors, dtype=torch.float32)[None])
    h = weights[0].shape[1]
    print(f"{'sublayer':<10}" + "".join(f"{'token ' + str(j):>10}" for j in range(h)) + f"{'|residual|':>12}")
    for i, (w, r) in enumerate(zip(weights, residuals)):
        print(f"{i:<10}" + "".join(f"{v:>10.4f}" for v in w[0].tolist()) + f"{float(r.norm()):>12.4f}")
    return 0


def cmd_manifest_validate(args) -> int:
    from .manifest import Manifest

    manifest = Manifest.load(args.path)
    problems = manifest.validate(check_audio=args.check_audio)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return 2
    print(f"{args.path}: {len(manifest)} records OK")
    return 0


def cmd_synth_corpus(args) -> int:
    from .synthetic import make_corpus

    m = make_corpus(args.out_dir, args.n, args.speakers, seed=args.seed)
    print(json.dumps({"manifest": str(Path(args.out_dir) / "manifest.jsonl"), "records": len(m)}))
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vcaug", description="Voice-conversion data augmentation for low-resource ASR.")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="JSON run config")
        return sp

    sp = add("fit-quantizer", cmd_fit_quantizer, help="fit normalisation stats and the K-means codebook")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--preset", choices=["tiny"])

    sp = add("train", cmd_train, help="train style/content encoders and decoder")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--train-manifest", required=True)
    sp.add_argument("--val-manifest")
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--preset", choices=["tiny"])

    sp = add("convert", cmd_convert, help="convert one source utterance to the reference voice")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--source", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--crossfade-ms", type=float)
    sp.add_argument("--chunk-s", type=float)
    sp.add_argument("--best", action="store_true", help="use the best-validation parameters")

    sp = add("augment", cmd_augment, help="write an augmented manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--plan")
    sp.add_argument("--ckpt")
    sp.add_argument("--ratio", type=float)
    sp.add_argument("--method", choices=["vc", "specaug", "vc_then_specaug"])
    sp.add_argument("--gender-filter", choices=["none", "female_only", "male_only"])
    sp.add_argument("--reference-pool")
    sp.add_argument("--seed", type=int)

    sp = add("eval-resynth", cmd_eval_resynth, help="ASR error rates before and after conversion")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--ckpt")
    sp.add_argument("--reference-pool")
    sp.add_argument("--gender-filter", choices=["none", "female_only", "male_only"])
    sp.add_argument("--asr", choices=["mock", "tone", "command"])
    sp.add_argument("--asr-command")
    sp.add_argument("--identity", action="store_true", help="control run: conversion returns the source audio")

    sp = add("eval-speaker", cmd_eval_speaker, help="speaker-similarity error rate")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--triples", help=".npz with converted/source/reference embedding arrays")
    sp.add_argument("--pairs", help="JSONL of converted/source/reference audio paths")

    sp = sub.add_parser("style", help="style encoder tools")
    style_sub = sp.add_subparsers(dest="style_command", required=True)
    ssp = style_sub.add_parser("inspect", help="per-sublayer token weights for a reference file")
    ssp.set_defaults(func=cmd_style_inspect)
    ssp.add_argument("--config")
    ssp.add_argument("--ckpt", required=True)
    ssp.add_argument("--reference", required=True)

    sp = sub.add_parser("manifest", help="manifest tools")
    man_sub = sp.add_subparsers(dest="manifest_command", required=True)
    msp = man_sub.add_parser("validate", help="check ids, durations, genders and provenance")
    msp.set_defaults(func=cmd_manifest_validate)
    msp.add_argument("path")
    msp.add_argument("--check-audio", action="store_true")

    sp = add("synth-corpus", cmd_synth_corpus, help="write a synthetic tone-language corpus")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--speakers", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.overrides = _split_overrides(extra)
        return args.func(args)
    except (ValidationError, ConfigError) as exc:
        print(f"vcaug: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("unhandled error", exc_info=True)
        print(f"vcaug: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
