"""Command-line entry point.

Commands: prepare-vocab, train, evaluate, generate, grad-check,
count-params, synth-data.  Every command takes ``--config`` (JSON file),
optional ``--preset`` names, and ``--set key=value`` overrides, applied in
that order.  Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numeric failure.

The thread count of the numeric backend is taken from AVDIALOG_THREADS
(export it before launching; it seeds OMP/BLAS thread variables).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

if "AVDIALOG_THREADS" in os.environ:  # must land before numpy loads a BLAS
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, os.environ["AVDIALOG_THREADS"])

import numpy as np

from . import data as D
from . import metrics as M
from . import training as TR
from .config import PRESETS, RunConfig, apply_preset
from .diagnostics import full_model_grad_check
from .errors import CodecError, ContractError, DivergenceError, ParseError
from .model import Model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ContractError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for preset in args.preset or []:
        cfg = apply_preset(cfg, preset)
    overrides = dict(_parse_override(s) for s in args.set or [])
    if overrides:
        cfg = cfg.apply_overrides(overrides)
    cfg.validate()
    return cfg


def _store(cfg: RunConfig) -> D.FeatureStore:
    return D.FeatureStore(cfg.video_feature_dir, cfg.audio_feature_dir)


def _load_vocab(cfg: RunConfig) -> D.Vocabulary:
    if not cfg.vocab_path or not os.path.exists(cfg.vocab_path):
        raise ContractError("vocab_path missing; run prepare-vocab first")
    return D.Vocabulary.load(cfg.vocab_path)


def _write_meta(path, cfg: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"config": cfg.to_dict()}, fh, indent=1, sort_keys=True)


def cmd_prepare_vocab(args) -> int:
    cfg = _load_config(args)
    examples = D.load_dialogs(cfg.train_path)
    vocab = D.build_vocab(examples, min_count=cfg.min_count)
    if not cfg.vocab_path:
        raise ContractError("config field vocab_path is required")
    vocab.save(cfg.vocab_path)
    print(f"wrote {cfg.vocab_path}: {len(vocab)} tokens (reserved 4)")
    return EXIT_OK


def cmd_synth_data(args) -> int:
    info = D.make_synthetic(args.out, seed=args.seed, n_dialogs=args.dialogs,
                            vocab_size=args.vocab_size)
    cfg = RunConfig(
        train_path=info["dialogs"], val_path=info["dialogs"], test_path=info["dialogs"],
        video_feature_dir=info["video_dir"], audio_feature_dir=info["audio_dir"],
        vocab_path=os.path.join(args.out, "vocab.json"),
        min_count=1, seed=args.seed,
    )
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
    print(f"synthetic fixture in {args.out}: {info['n_dialogs']} dialogs, "
          f"{len(info['words'])} content words")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_examples = D.load_dialogs(cfg.train_path)
    val_examples = D.load_dialogs(cfg.val_path) if cfg.val_path else train_examples
    if cfg.vocab_path and os.path.exists(cfg.vocab_path):
        vocab = D.Vocabulary.load(cfg.vocab_path)
    else:
        vocab = D.build_vocab(train_examples, min_count=cfg.min_count)
        if cfg.vocab_path:
            vocab.save(cfg.vocab_path)
    model = Model(cfg, vocab)
    TR.init_weights(model.parameters(), cfg.init_scheme, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, "checkpoint")
    result = TR.fit(model, train_examples, val_examples, _store(cfg), cfg,
                    log_path=os.path.join(args.out, "train_log.csv"),
                    checkpoint_stem=stem)
    _write_meta(os.path.join(args.out, "train_log.csv.meta.json"), cfg)
    print(f"best epoch {result.best_epoch} "
          f"(val perplexity {result.best_val_perplexity:.4f}), "
          f"stopped after epoch {result.stopped_epoch}; checkpoint at {stem}.json")
    if result.diverged:
        print("training diverged; best checkpoint retained", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _load_model(args):
    """Rebuild the checkpointed model; eval-time knobs (beam width, length
    cap) may still be overridden via --preset / --set."""
    if not args.checkpoint:
        raise ContractError("checkpoint required")
    model, manifest = TR.load_checkpoint(args.checkpoint)
    cfg = model.config
    for preset in args.preset or []:
        cfg = apply_preset(cfg, preset)
    overrides = dict(_parse_override(s) for s in args.set or [])
    if overrides:
        cfg = cfg.apply_overrides(overrides)
    model.config = cfg
    return model, manifest


def cmd_evaluate(args) -> int:
    model, _ = _load_model(args)
    cfg = model.config
    examples = D.load_dialogs(args.test or cfg.test_path)
    report, _ = M.evaluate(model, examples, _store(cfg))
    print(report.to_text())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(M.report_to_json(report, cfg.to_dict()))
    return EXIT_OK


def cmd_generate(args) -> int:
    model, _ = _load_model(args)
    cfg = model.config
    examples = D.load_dialogs(args.test or cfg.test_path)
    _, records = M.evaluate(model, examples, _store(cfg))
    out_path = args.out or "answers.jsonl"
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in records:
            line = {k: rec[k] for k in ("video_id", "turn") if k in rec}
            for key in ("answer", "log_prob", "error"):
                if key in rec:
                    line[key] = rec[key]
            fh.write(json.dumps(line) + "\n")
    _write_meta(out_path + ".meta.json", cfg)
    if args.attention_maps:
        maps = [{"video_id": r["video_id"], "turn": r["turn"],
                 "attention": r.get("attention", {})} for r in records]
        with open(args.attention_maps, "w", encoding="utf-8") as fh:
            json.dump(maps, fh, indent=1)
    print(f"wrote {out_path} ({len(records)} records)")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    err = full_model_grad_check(seed=args.seed, eps=args.eps)
    print(f"max relative error: {err:.3e} (threshold 1e-4)")
    return EXIT_OK if err < 1e-4 else EXIT_NUMERIC


def cmd_count_params(args) -> int:
    cfg = _load_config(args)
    if cfg.vocab_path and os.path.exists(cfg.vocab_path):
        vocab = D.Vocabulary.load(cfg.vocab_path)
    else:
        vocab = D.Vocabulary([f"w{i}" for i in range(args.vocab_size - 4)])
    model = Model(cfg, vocab)
    total, groups = TR.count_parameters(model)
    for name in sorted(groups):
        print(f"{name:>12}: {groups[name]:>12,}")
    print(f"{'total':>12}: {total:>12,}  (vocabulary {len(vocab)})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avdialog",
        description="Train and evaluate the audio-visual dialog answer generator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--preset", action="append", choices=sorted(PRESETS),
                           help="named ablation preset (repeatable)")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="config override (repeatable; beats file and preset)")

    p = sub.add_parser("prepare-vocab", help="build the vocabulary from the train split")
    common(p)
    p.set_defaults(func=cmd_prepare_vocab)

    p = sub.add_parser("synth-data", help="materialize the synthetic fixture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dialogs", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=50)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train and write the best checkpoint")
    common(p)
    p.add_argument("--out", default="runs/latest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score generated answers on the test split")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint stem (no extension)")
    p.add_argument("--test", help="override the test split path")
    p.add_argument("--out", help="directory for report.txt / report.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="emit answers as JSON lines")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint stem (no extension)")
    p.add_argument("--test", help="override the test split path")
    p.add_argument("--out", help="output path (default answers.jsonl)")
    p.add_argument("--attention-maps", help="also dump attention maps to this JSON file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("grad-check", help="finite-difference check of the full pipeline")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("count-params", help="parameter count with per-stage breakdown")
    common(p)
    p.add_argument("--vocab-size", type=int, default=1000,
                   help="assumed vocabulary size when no vocab file exists")
    p.set_defaults(func=cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, CodecError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
