"""Command-line interface for the full experimental lifecycle.

Subcommands: generate, pretrain, train, synthesize, evaluate, ablate,
analyze, plot.  Every command loads and validates the config before doing
anything with side effects; checkpoint directories are guarded by a file
lock so concurrent writers cannot interleave.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from filelock import FileLock

from . import config as config_mod
from . import evalsuite, pipeline
from .ablation import run_ablations
from .checkpoint import load_checkpoint
from .config import ExperimentConfig
from .corpus.io import load_manifest
from .corpus.types import Lang
from .errors import (ConfigError, DataError, StylecastError,
                     TrainingDivergenceError)
from .transfer import TransferModel, durations_to_frames


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylecast",
        description="Cross-lingual multiscale speaking-style transfer "
                    "experiments on a synthetic parallel corpus.")
    parser.add_argument("-c", "--config", default=None,
                        help="YAML config file (defaults used when omitted)")
    parser.add_argument("--set", action="append", default=[], metavar="K=V",
                        dest="overrides",
                        help="override a config value, e.g. transfer.lr=3e-4")
    parser.add_argument("--out", default=None,
                        help="output root (overrides config/output_root)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build and persist the synthetic corpus")
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing corpus")

    p = sub.add_parser("pretrain", help="pretrain per-language backbones")
    p.add_argument("--lang", choices=["l1", "l2", "both"], default="both")
    p.add_argument("--force", action="store_true",
                   help="retrain over existing checkpoints")

    p = sub.add_parser("train", help="train the transfer stage on frozen features")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("synthesize", help="synthesize one test pair")
    p.add_argument("--pair-id", required=True)
    p.add_argument("--direction", choices=["1to2", "2to1"], default="1to2")
    p.add_argument("--method", choices=["multiscale", "duration", "none"],
                   default="multiscale")

    sub.add_parser("evaluate", help="run the full test-set evaluation and reports")

    p = sub.add_parser("ablate", help="run the ablation sweep")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("analyze", help="corpus statistics report")
    p.add_argument("--split", choices=["train", "test"], default="train")

    p = sub.add_parser("plot", help="mel and attention plots for one pair")
    p.add_argument("--pair-id", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--attention", action="store_true",
                   help="also plot the learned word attention (needs a "
                        "trained transfer checkpoint)")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = config_mod.load_config(args.config) if args.config else ExperimentConfig()
    config_mod.apply_overrides(cfg, args.overrides)
    config_mod.validate(cfg)
    return cfg


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    return Path(args.out if args.out else cfg.resolved_output_root())


def _lock(out_dir: Path) -> FileLock:
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    return FileLock(out_dir / "checkpoints" / ".lock")


def _load_corpora(cfg: ExperimentConfig, out_dir: Path):
    corpus_dir = out_dir / "corpus"
    if not (corpus_dir / "manifest_train.jsonl").exists():
        raise DataError(f"no corpus under {corpus_dir}; run 'stylecast generate' first")
    train = load_manifest(corpus_dir / "manifest_train.jsonl", cfg.corpus)
    test = load_manifest(corpus_dir / "manifest_test.jsonl", cfg.corpus)
    train.compute_stats()
    test.compute_stats()
    return train, test


def _load_pretrained(cfg: ExperimentConfig, out_dir: Path, train_corpus,
                     kinds=pipeline.BACKBONE_KINDS) -> dict:
    models = {}
    for lang in Lang:
        for kind in kinds:
            name = f"pretrain_{lang.name.lower()}_{kind}"
            ckpt = out_dir / "checkpoints" / f"{name}.npz"
            if not ckpt.exists():
                raise DataError(
                    f"missing checkpoint {ckpt}; run 'stylecast pretrain' first")
            model = pipeline.build_language_model(cfg, kind)
            model.tts.set_normalization(
                pipeline.lang_stats(train_corpus, lang),
                cfg.corpus.frame_shift_ms, cfg.corpus.window_ms)
            load_checkpoint(ckpt, pipeline._checkpoint_modules(model))
            model.freeze()
            models[(lang, kind)] = model
    return models


def _load_transfer(cfg: ExperimentConfig, out_dir: Path) -> dict:
    d = cfg.dims
    out = {}
    for mode, label in (("multiscale", "transfer_multiscale"),
                        ("duration_only", "transfer_duration")):
        ckpt = out_dir / "checkpoints" / f"{label}.npz"
        if not ckpt.exists():
            raise DataError(
                f"missing checkpoint {ckpt}; run 'stylecast train' first")
        model = TransferModel(d.d_b, d.d_e, d.d_st, d.d_a, mode=mode,
                              temperature=cfg.transfer.temperature,
                              prenet_dropout=cfg.transfer.prenet_dropout)
        load_checkpoint(ckpt, {"xfer": model})
        model.eval()
        log = out_dir / "logs" / f"{label}.jsonl"
        history = [json.loads(line) for line in log.read_text().splitlines()] \
            if log.exists() else []
        out[mode] = (model, history)
    return out


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    out_dir = _out_dir(cfg, args)
    manifest = out_dir / "corpus" / "manifest_train.jsonl"
    if manifest.exists() and not args.force:
        raise DataError(
            f"{manifest} already exists; pass --force to regenerate")
    train, test = pipeline.stage_corpus(cfg, out_dir, force=args.force)
    for split, corpus in (("train", train), ("test", test)):
        utts = [u for p in corpus.pairs for u in (p.utt1, p.utt2)]
        secs = np.mean([u.n_frames * cfg.corpus.frame_shift_ms / 1000 for u in utts])
        words = np.mean([u.n_words for u in utts])
        print(f"{split}: {len(corpus.pairs)} pairs, mean {secs:.2f} s, "
              f"mean {words:.2f} words per utterance")
    return 0


def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    out_dir = _out_dir(cfg, args)
    langs = [Lang.L1, Lang.L2] if args.lang == "both" \
        else [Lang[args.lang.upper()]]
    with _lock(out_dir):
        train, _ = _load_corpora(cfg, out_dir)
        state = pipeline._State(out_dir)
        for lang in langs:
            for kind in pipeline.BACKBONE_KINDS:
                name = f"pretrain_{lang.name.lower()}_{kind}"
                ckpt = out_dir / "checkpoints" / f"{name}.npz"
                key = pipeline._cfg_key(cfg, name)
                if ckpt.exists() and not state.done(name, key) and not args.force:
                    raise DataError(
                        f"{ckpt} exists but was built from a different config; "
                        "pass --force to retrain")
                if args.force:
                    state.drop(name)
        pipeline.stage_pretrain(cfg, train, out_dir, langs=langs)
    for lang in langs:
        for kind in pipeline.BACKBONE_KINDS:
            name = f"pretrain_{lang.name.lower()}_{kind}"
            print(f"{name}: checkpoint ready "
                  f"({out_dir / 'checkpoints' / (name + '.npz')})")
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out_dir = _out_dir(cfg, args)
    with _lock(out_dir):
        train_corpus, _ = _load_corpora(cfg, out_dir)
        models = _load_pretrained(cfg, out_dir, train_corpus)
        if args.force:
            pipeline._State(out_dir).drop("transfer_multiscale", "transfer_duration")
        feats = pipeline.compute_features(cfg, train_corpus, models)
        trained = pipeline.stage_transfer(cfg, feats, models, out_dir)
    for mode, (_, history) in trained.items():
        if history:
            print(f"{mode}: epoch1 loss {history[0]['loss']:.6f} -> "
                  f"final {history[-1]['loss']:.6f} "
                  f"(curve: {out_dir / 'logs'})")
    print("frozen encoder weights verified unchanged")
    return 0


def cmd_synthesize(cfg: ExperimentConfig, args) -> int:
    out_dir = _out_dir(cfg, args)
    train_corpus, test_corpus = _load_corpora(cfg, out_dir)
    corpus = test_corpus
    idx = next((i for i, p in enumerate(corpus.pairs)
                if p.pair_id == args.pair_id), None)
    if idx is None:
        raise DataError(f"pair {args.pair_id!r} not found in the test split")
    models = _load_pretrained(cfg, out_dir, train_corpus)
    transfer_models = _load_transfer(cfg, out_dir)
    pair = corpus.pairs[idx]
    feats = pipeline.compute_features(
        cfg, type(corpus)(pairs=[pair]), models, train_corpus=train_corpus)
    pf = feats[0]

    from .synth import prepare_utterance
    from .textfeat import SyntheticEmbedder
    utt, lang = pipeline._target_of(pair, args.direction)
    item = prepare_utterance(utt, SyntheticEmbedder(cfg.dims.d_b).embed(utt.tokens).word_vecs,
                             cfg.corpus.n_phoneme_symbols,
                             pipeline.lang_stats(train_corpus, lang))
    if args.method == "multiscale":
        ms, _ = transfer_models["multiscale"]
        with torch.no_grad():
            t1, t2, _att = ms.transfer_forward(pf)
        tgt = t2 if args.direction == "1to2" else t1
        mel = models[(lang, "mst")].tts.synthesize(
            item["phon_ids"], item["word_of_phoneme"], utt.speaker_id,
            gst_vec=tgt.gst_pred.numpy(), lst_vecs=tgt.lst_pred.numpy())
    elif args.method == "duration":
        du, _ = transfer_models["duration_only"]
        d1, d2 = du.duration_transfer_forward(pf)
        d_pred = d2 if args.direction == "1to2" else d1
        frames, n_clamped = durations_to_frames(d_pred.numpy(),
                                                cfg.corpus.frame_shift_ms)
        if n_clamped:
            print(f"warning: {n_clamped} predicted durations clamped to 1 frame")
        mel = models[(lang, "vanilla")].tts.synthesize(
            item["phon_ids"], item["word_of_phoneme"], utt.speaker_id,
            duration_override=frames)
    else:
        mel = models[(lang, "vanilla")].tts.synthesize(
            item["phon_ids"], item["word_of_phoneme"], utt.speaker_id)

    from .corpus.io import write_mel
    dest = out_dir / "synth" / f"{pair.pair_id}_{args.direction}_{args.method}.mel"
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_mel(mel, dest)
    rep = evalsuite.mel_mse(mel.data, utt.mel.data)
    print(f"wrote {dest} ({mel.data.shape[0]} frames); "
          f"mel MSE vs reference {rep.full:.4f}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    out_dir = _out_dir(cfg, args)
    with _lock(out_dir):
        train_corpus, test_corpus = _load_corpora(cfg, out_dir)
        models = _load_pretrained(cfg, out_dir, train_corpus)
        transfer_models = _load_transfer(cfg, out_dir)
        feats_test = pipeline.compute_features(cfg, test_corpus, models,
                                               train_corpus=train_corpus)
        summary = pipeline.evaluate_methods(cfg, test_corpus, feats_test,
                                            models, transfer_models, train_corpus)
        pipeline.write_alignment_report(out_dir, test_corpus, feats_test,
                                        transfer_models["multiscale"][0])
        corr = evalsuite.corpus_statistics(train_corpus.pairs)
        pipeline.write_reports(cfg, out_dir, summary, corr, transfer_models)
    print((out_dir / "reports" / "evaluation.txt").read_text(), end="")
    print(f"alignment recovery: {summary['alignment']['accuracy']:.4f} "
          f"({summary['alignment']['hits']}/{summary['alignment']['total']})")
    return 0


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    out_dir = _out_dir(cfg, args) / "ablation"
    with _lock(out_dir):
        run_ablations(cfg, out_dir, force=args.force)
    print((out_dir / "reports" / "ablation.txt").read_text(), end="")
    return 0


def cmd_analyze(cfg: ExperimentConfig, args) -> int:
    out_dir = _out_dir(cfg, args)
    train, test = _load_corpora(cfg, out_dir)
    corpus = train if args.split == "train" else test
    report = evalsuite.corpus_statistics(corpus.pairs)
    header = ["property", "level", "r", "n"]
    rows = [[prop, level, f"{report.get(prop, level):.4f}",
             str(report.n[(prop, level)])]
            for level in evalsuite.LEVELS for prop in evalsuite.PROPERTIES]
    print(pipeline._fmt_table(header, rows), end="")
    return 0


def cmd_plot(cfg: ExperimentConfig, args) -> int:
    from .plotting import plot_attention, plot_mel
    out_dir = _out_dir(cfg, args)
    train_corpus, test_corpus = _load_corpora(cfg, out_dir)
    corpus = train_corpus if args.split == "train" else test_corpus
    pair = next((p for p in corpus.pairs if p.pair_id == args.pair_id), None)
    if pair is None:
        raise DataError(f"pair {args.pair_id!r} not found in split {args.split}")
    plots = out_dir / "plots"
    made = []
    mapped1 = set(pair.word_map)
    mapped2 = set(pair.word_map.values())
    made.append(plot_mel(pair.utt1, plots / f"{pair.pair_id}_l1.png",
                         highlight=sorted(mapped1)))
    made.append(plot_mel(pair.utt2, plots / f"{pair.pair_id}_l2.png",
                         highlight=sorted(mapped2)))
    if args.attention:
        models = _load_pretrained(cfg, out_dir, train_corpus)
        ms, _ = _load_transfer(cfg, out_dir)["multiscale"]
        feats = pipeline.compute_features(
            cfg, type(corpus)(pairs=[pair]), models, train_corpus=train_corpus)
        with torch.no_grad():
            _, _, att = ms.transfer_forward(feats[0])
        made.append(plot_attention(att.W21.numpy(),
                                   plots / f"{pair.pair_id}_w21.png",
                                   tokens1=pair.utt1.tokens,
                                   tokens2=pair.utt2.tokens,
                                   title="W21 (columns sum to 1)"))
    for p in made:
        print(f"wrote {p}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (DataError, FileExistsError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except StylecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
