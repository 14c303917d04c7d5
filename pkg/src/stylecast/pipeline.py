"""End-to-end experiment pipeline.

Stages: synthetic corpus -> per-language backbone pretraining (styled and
plain) -> frozen-feature extraction -> transfer training (multiscale and
duration baseline) -> test-set evaluation and report emission.

Every stage seeds its own RNGs from the master seed, runs single-threaded,
and writes timestamp-free artifacts, so two runs with the same config
produce byte-identical reports.  Completed stages are recorded in
state.json with a config-slice hash; reruns with an unchanged config reuse
the stored checkpoints instead of recomputing.
"""

from __future__ import annotations

import csv
import io
import json
import time
from pathlib import Path

import numpy as np
import torch

from . import config, evalsuite
from .checkpoint import load_checkpoint, module_hash, save_checkpoint
from .config import ExperimentConfig
from .corpus.align import spans_to_weights
from .corpus.generator import build_corpus
from .corpus.io import load_manifest, write_corpus
from .corpus.types import Corpus, Lang
from .errors import DataError
from .styleenc import GlobalStyleEncoder, LocalStyleEncoder
from .synth import LanguageModel, SynthesisModel, prepare_utterance, pretrain
from .textfeat import SyntheticEmbedder
from .transfer import (PairFeatures, TransferModel, durations_to_frames,
                       train_transfer)
from .util import stable_seed

METHODS = ("multiscale", "duration", "none")
DIRECTION_NAMES = ("1to2", "2to1")
BACKBONE_KINDS = ("mst", "vanilla")


def _seed(cfg: ExperimentConfig, *parts) -> int:
    return stable_seed(cfg.master_seed, *parts) % (2 ** 31)


def _cfg_key(cfg: ExperimentConfig, stage: str) -> str:
    import hashlib
    payload = json.dumps({"stage": stage, "cfg": config.to_mapping(cfg)},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class _State:
    """Stage ledger for resume: {stage: {key, extra...}} in state.json."""

    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / "state.json"
        self.data = {}
        if self.path.exists():
            self.data = json.loads(self.path.read_text())

    def done(self, stage: str, key: str) -> bool:
        return self.data.get(stage, {}).get("key") == key

    def mark(self, stage: str, key: str, **extra) -> None:
        self.data[stage] = {"key": key, **extra}
        self._flush()

    def drop(self, *stages) -> None:
        for stage in stages:
            self.data.pop(stage, None)
        self._flush()

    def _flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True))


def lang_stats(corpus: Corpus, lang: Lang) -> dict:
    """Normalization statistics for one language (mel stats are shared)."""
    s = corpus.stats_by_lang[lang.name]
    return {"mel_mean": corpus.mel_mean, "mel_std": corpus.mel_std,
            "pitch_mean": s["pitch_mean"], "pitch_std": s["pitch_std"],
            "energy_mean": s["energy_mean"], "energy_std": s["energy_std"]}


def stage_corpus(cfg: ExperimentConfig, out_dir: Path, force: bool = False):
    """Generate train/test corpora, persist them, and load the stats."""
    state = _State(out_dir)
    key = _cfg_key(cfg, "corpus")
    corpus_dir = Path(out_dir) / "corpus"
    if not state.done("corpus", key) or force:
        sizes = {"train": cfg.corpus.n_train, "test": cfg.corpus.n_test}
        for split, n in sizes.items():
            c = build_corpus(cfg.corpus, _seed(cfg, "corpus", split), n,
                             id_prefix=split)
            write_corpus(c, corpus_dir, split, force=True)
        state.mark("corpus", key)
    # Always read back from disk so downstream statistics come from the
    # persisted float32 artifacts on fresh and resumed runs alike.
    splits = {split: load_manifest(corpus_dir / f"manifest_{split}.jsonl", cfg.corpus)
              for split in ("train", "test")}
    for c in splits.values():
        c.compute_stats()
    return splits["train"], splits["test"]


_KIND_STYLES = {"mst": (True, True), "vanilla": (False, False),
                "gst_only": (True, False), "lst_only": (False, True)}


def build_language_model(cfg: ExperimentConfig, kind: str) -> LanguageModel:
    """kind picks the conditioning: "mst" has both style encoders, "vanilla"
    none, "gst_only"/"lst_only" one each (ablation backbones)."""
    d = cfg.dims
    use_gst, use_lst = _KIND_STYLES[kind]
    tts = SynthesisModel(
        n_phonemes=cfg.corpus.n_phoneme_symbols, n_mels=d.n_mels,
        n_speakers=cfg.corpus.n_speakers, d_model=d.d_model,
        d_speaker=d.d_speaker, d_st=d.d_st, d_b=d.d_b,
        use_gst=use_gst, use_lst=use_lst, grl_lambda=cfg.pretrain.grl_lambda)
    gst = GlobalStyleEncoder(d.n_mels, d.d_st) if use_gst else None
    lst = LocalStyleEncoder(d.n_mels, d.d_st) if use_lst else None
    return LanguageModel(tts, gst, lst)


def _lang_utts(corpus: Corpus, lang: Lang):
    return [p.utt1 if lang is Lang.L1 else p.utt2 for p in corpus.pairs]


def prepare_language(cfg: ExperimentConfig, corpus: Corpus, lang: Lang,
                     embedder: SyntheticEmbedder) -> list[dict]:
    stats = lang_stats(corpus, lang)
    out = []
    for utt in _lang_utts(corpus, lang):
        bert = embedder.embed(utt.tokens).word_vecs
        out.append(prepare_utterance(utt, bert, cfg.corpus.n_phoneme_symbols, stats))
    return out


def _checkpoint_modules(model: LanguageModel) -> dict:
    modules = {"tts": model.tts}
    if model.gst is not None:
        modules["gst"] = model.gst
    if model.lst is not None:
        modules["lst"] = model.lst
    return modules


def stage_pretrain(cfg: ExperimentConfig, train_corpus: Corpus, out_dir: Path,
                   kinds=BACKBONE_KINDS, langs=None) -> dict:
    """Pretrain per-language backbones; returns {(lang, kind): LanguageModel}."""
    out_dir = Path(out_dir)
    state = _State(out_dir)
    embedder = SyntheticEmbedder(cfg.dims.d_b)
    models = {}
    for lang in (langs if langs is not None else list(Lang)):
        prepared = None
        for kind in kinds:
            name = f"pretrain_{lang.name.lower()}_{kind}"
            key = _cfg_key(cfg, name)
            ckpt = out_dir / "checkpoints" / f"{name}.npz"
            torch.manual_seed(_seed(cfg, "init", lang.name, kind))
            model = build_language_model(cfg, kind)
            model.tts.set_normalization(lang_stats(train_corpus, lang),
                                        cfg.corpus.frame_shift_ms,
                                        cfg.corpus.window_ms)
            if state.done(name, key) and ckpt.exists():
                load_checkpoint(ckpt, _checkpoint_modules(model))
                model.freeze()
            else:
                if prepared is None:
                    prepared = prepare_language(cfg, train_corpus, lang, embedder)
                log = out_dir / "logs" / f"{name}.jsonl"
                log.parent.mkdir(parents=True, exist_ok=True)
                pretrain(prepared, model, cfg.pretrain,
                         _seed(cfg, "pretrain", lang.name, kind), log_path=log)
                save_checkpoint(ckpt, _checkpoint_modules(model),
                                meta={"stage": name, "lang": lang.name, "kind": kind})
                state.mark(name, key, hash=module_hash(model))
            models[(lang, kind)] = model
    return models


def compute_features(cfg: ExperimentConfig, corpus: Corpus, models: dict,
                     train_corpus: Corpus | None = None,
                     kind: str = "mst") -> list[PairFeatures]:
    """Frozen styles + text embeddings for every pair.

    Mels are normalized with training-set statistics before hitting the
    frozen encoders, matching what the encoders saw in pretraining.  When
    the chosen backbone kind lacks an encoder, that style slot is zeros.
    """
    embedder = SyntheticEmbedder(cfg.dims.d_b)
    stats_src = train_corpus if train_corpus is not None else corpus
    feats = []
    for pair in corpus.pairs:
        per_lang = {}
        for lang, utt in ((Lang.L1, pair.utt1), (Lang.L2, pair.utt2)):
            model = models[(lang, kind)]
            stats = lang_stats(stats_src, lang)
            mel_norm = (utt.mel.data - stats["mel_mean"]) / stats["mel_std"]
            w_asr = spans_to_weights(utt.word_spans, utt.n_frames)
            emb = embedder.embed(utt.tokens)
            gst = model.gst.encode(mel_norm).vec if model.gst is not None \
                else np.zeros(cfg.dims.d_st, dtype=np.float32)
            lst = model.lst.encode(mel_norm, w_asr).vecs if model.lst is not None \
                else np.zeros((utt.n_words, cfg.dims.d_st), dtype=np.float32)
            per_lang[lang] = {
                "bert": torch.tensor(emb.word_vecs, dtype=torch.float32),
                "sbert": torch.tensor(emb.sentence_vec, dtype=torch.float32),
                "gst": torch.tensor(gst, dtype=torch.float32),
                "lst": torch.tensor(lst, dtype=torch.float32),
                "dur": torch.tensor(utt.word_durations_seconds(), dtype=torch.float32),
            }
        feats.append(PairFeatures(
            pair_id=pair.pair_id,
            bert1=per_lang[Lang.L1]["bert"], bert2=per_lang[Lang.L2]["bert"],
            sbert1=per_lang[Lang.L1]["sbert"], sbert2=per_lang[Lang.L2]["sbert"],
            gst1=per_lang[Lang.L1]["gst"], gst2=per_lang[Lang.L2]["gst"],
            lst1=per_lang[Lang.L1]["lst"], lst2=per_lang[Lang.L2]["lst"],
            dur1=per_lang[Lang.L1]["dur"], dur2=per_lang[Lang.L2]["dur"],
            word_map=pair.word_map))
    return feats


def stage_transfer(cfg: ExperimentConfig, feats: list, models: dict,
                   out_dir: Path) -> dict:
    """Train the multiscale model and the duration baseline on frozen features."""
    out_dir = Path(out_dir)
    state = _State(out_dir)
    d = cfg.dims
    frozen = [m for m in models.values()]
    trained = {}
    for mode, label in (("multiscale", "transfer_multiscale"),
                        ("duration_only", "transfer_duration")):
        key = _cfg_key(cfg, label)
        ckpt = out_dir / "checkpoints" / f"{label}.npz"
        torch.manual_seed(_seed(cfg, "init", label))
        model = TransferModel(d.d_b, d.d_e, d.d_st, d.d_a, mode=mode,
                              temperature=cfg.transfer.temperature,
                              prenet_dropout=cfg.transfer.prenet_dropout)
        if state.done(label, key) and ckpt.exists():
            load_checkpoint(ckpt, {"xfer": model})
            model.eval()
            history = [json.loads(line) for line in
                       (out_dir / "logs" / f"{label}.jsonl").read_text().splitlines()]
        else:
            log = out_dir / "logs" / f"{label}.jsonl"
            log.parent.mkdir(parents=True, exist_ok=True)
            history = train_transfer(feats, model, cfg.transfer,
                                     _seed(cfg, "transfer", mode),
                                     log_path=log, frozen_modules=frozen)
            save_checkpoint(ckpt, {"xfer": model}, meta={"stage": label})
            state.mark(label, key)
        trained[mode] = (model, history)
    return trained


def _target_of(pair, direction: str):
    return (pair.utt2, Lang.L2) if direction == "1to2" else (pair.utt1, Lang.L1)


def _mapped_pairs_for(direction: str, word_map: dict):
    """(source word, target word) index pairs oriented by direction."""
    if direction == "1to2":
        return list(word_map.items())
    return [(j, i) for i, j in word_map.items()]


def evaluate_methods(cfg: ExperimentConfig, test_corpus: Corpus, feats: list,
                     models: dict, transfer_models: dict,
                     train_corpus: Corpus) -> dict:
    """Synthesize the test split under each method and score mel MSE.

    Returns per (method, direction) aggregates plus alignment recovery and
    style-prediction MSEs for the multiscale model.
    """
    ms_model, _ = transfer_models["multiscale"]
    dur_model, _ = transfer_models["duration_only"]
    ms_model.eval()
    dur_model.eval()

    embedder = SyntheticEmbedder(cfg.dims.d_b)
    cells = {(m, d): {"full": [], "low10": [], "high10": []}
             for m in METHODS for d in DIRECTION_NAMES}
    style_mse = {d: {"gst": [], "lst": []} for d in DIRECTION_NAMES}
    align_hits = 0
    align_total = 0
    clamp_count = 0

    for pair, pf in zip(test_corpus.pairs, feats):
        with torch.no_grad():
            t1, t2, att = ms_model.transfer_forward(pf)
        d1_pred, d2_pred = dur_model.duration_transfer_forward(pf)

        for i1, j2 in pair.word_map.items():
            if int(torch.argmax(att.W21[:, i1])) == j2:
                align_hits += 1
            align_total += 1

        for direction in DIRECTION_NAMES:
            utt, lang = _target_of(pair, direction)
            truth = utt.mel
            prep_stats = lang_stats(train_corpus, lang)
            item = prepare_utterance(utt, embedder.embed(utt.tokens).word_vecs,
                                     cfg.corpus.n_phoneme_symbols, prep_stats)
            phon_ids = item["phon_ids"]
            wop = item["word_of_phoneme"]
            tgt = t2 if direction == "1to2" else t1
            style_mse[direction]["gst"].append(float(
                ((tgt.gst_pred - tgt.gst_true) ** 2).mean()))
            style_mse[direction]["lst"].append(float(
                ((tgt.lst_pred - tgt.lst_true) ** 2).mean()))

            for method in METHODS:
                if method == "multiscale":
                    backbone = models[(lang, "mst")]
                    mel = backbone.tts.synthesize(
                        phon_ids, wop, utt.speaker_id,
                        gst_vec=tgt.gst_pred.numpy(),
                        lst_vecs=tgt.lst_pred.numpy())
                elif method == "duration":
                    backbone = models[(lang, "vanilla")]
                    d_pred = d2_pred if direction == "1to2" else d1_pred
                    frames, ncl = durations_to_frames(
                        d_pred.numpy(), cfg.corpus.frame_shift_ms)
                    clamp_count += ncl
                    mel = backbone.tts.synthesize(
                        phon_ids, wop, utt.speaker_id, duration_override=frames)
                else:
                    backbone = models[(lang, "vanilla")]
                    mel = backbone.tts.synthesize(phon_ids, wop, utt.speaker_id)
                rep = evalsuite.mel_mse(mel.data, truth.data,
                                        direction=direction, method=method)
                cell = cells[(method, direction)]
                cell["full"].append(rep.full)
                cell["low10"].append(rep.low10)
                cell["high10"].append(rep.high10)

    summary = {"methods": {}, "alignment": {}, "style_mse": {}}
    for (method, direction), cell in cells.items():
        summary["methods"][f"{method}/{direction}"] = {
            band: float(np.mean(vals)) for band, vals in cell.items()}
    summary["alignment"] = {
        "hits": align_hits, "total": align_total,
        "accuracy": align_hits / max(align_total, 1)}
    for direction in DIRECTION_NAMES:
        summary["style_mse"][direction] = {
            k: float(np.mean(v)) for k, v in style_mse[direction].items()}
    summary["duration_clamped"] = clamp_count
    return summary


def _fmt_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    def fmt(row):
        return "  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(r) for r in rows]) + "\n"


def write_reports(cfg: ExperimentConfig, out_dir: Path, summary: dict,
                  corr_report, transfer_models: dict) -> dict:
    """Emit CSV + aligned-text reports; returns the summary dict written."""
    reports = Path(out_dir) / "reports"
    reports.mkdir(parents=True, exist_ok=True)

    header = ["direction", "method", "mel_mse_full", "mel_mse_low10",
              "mel_mse_high10", "gst_mse", "lst_mse"]
    rows = []
    for direction in DIRECTION_NAMES:
        for method in METHODS:
            cell = summary["methods"][f"{method}/{direction}"]
            st = summary["style_mse"][direction] if method == "multiscale" else {}
            rows.append([
                direction, method,
                f"{cell['full']:.6f}", f"{cell['low10']:.6f}", f"{cell['high10']:.6f}",
                f"{st['gst']:.6f}" if st else "-",
                f"{st['lst']:.6f}" if st else "-"])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    (reports / "evaluation.csv").write_text(buf.getvalue())
    (reports / "evaluation.txt").write_text(_fmt_table(header, rows))

    stat_header = ["property", "level", "r", "n"]
    stat_rows = []
    for level in evalsuite.LEVELS:
        for prop in evalsuite.PROPERTIES:
            r = corr_report.get(prop, level)
            n = corr_report.n[(prop, level)]
            stat_rows.append([prop, level, f"{r:.4f}", str(n)])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(stat_header)
    writer.writerows(stat_rows)
    (reports / "corpus_stats.csv").write_text(buf.getvalue())
    (reports / "corpus_stats.txt").write_text(_fmt_table(stat_header, stat_rows))

    payload = {
        "config_digest": _cfg_key(cfg, "experiment"),
        "master_seed": cfg.master_seed,
        "evaluation": summary,
        "transfer_loss": {
            mode: {"first_epoch": hist[0]["loss"], "final_epoch": hist[-1]["loss"]}
            for mode, (_, hist) in transfer_models.items()
            if len(hist) > 0},
    }
    (reports / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return payload


def write_alignment_report(out_dir: Path, test_corpus: Corpus, feats: list,
                           ms_model: TransferModel) -> float:
    """Aligned-text report of recovered vs true word maps; returns accuracy."""
    lines = []
    hits = 0
    total = 0
    ms_model.eval()
    for pair, pf in zip(test_corpus.pairs, feats):
        with torch.no_grad():
            _, _, att = ms_model.transfer_forward(pf)
        recovered = {i1: int(torch.argmax(att.W21[:, i1]))
                     for i1 in range(pair.utt1.n_words)}
        lines.append(f"[{pair.pair_id}]")
        lines.append("  " + " ".join(pair.utt1.tokens))
        lines.append("  " + " ".join(pair.utt2.tokens))
        marks = []
        for i1, j2 in sorted(pair.word_map.items()):
            ok = recovered[i1] == j2
            hits += int(ok)
            total += 1
            marks.append(f"{i1}->{recovered[i1]}({'=' if ok else j2})")
        lines.append("  map: " + " ".join(marks))
    acc = hits / max(total, 1)
    lines.append(f"recovered {hits}/{total} mapped words ({acc:.4f})")
    path = Path(out_dir) / "reports" / "alignment_report.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return acc


def run_experiment(cfg: ExperimentConfig, out_dir, force: bool = False) -> dict:
    """Full pipeline; returns the report summary (also on disk)."""
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    timing = {}

    train_corpus, test_corpus = stage_corpus(cfg, out_dir, force=force)
    timing["corpus_s"] = round(time.time() - t0, 3)

    t1 = time.time()
    models = stage_pretrain(cfg, train_corpus, out_dir)
    timing["pretrain_s"] = round(time.time() - t1, 3)

    t2 = time.time()
    feats_train = compute_features(cfg, train_corpus, models)
    transfer_models = stage_transfer(cfg, feats_train, models, out_dir)
    timing["transfer_s"] = round(time.time() - t2, 3)

    t3 = time.time()
    feats_test = compute_features(cfg, test_corpus, models,
                                  train_corpus=train_corpus)
    summary = evaluate_methods(cfg, test_corpus, feats_test, models,
                               transfer_models, train_corpus)
    align_acc = write_alignment_report(out_dir, test_corpus, feats_test,
                                       transfer_models["multiscale"][0])
    assert abs(align_acc - summary["alignment"]["accuracy"]) < 1e-12
    corr = evalsuite.corpus_statistics(train_corpus.pairs)
    payload = write_reports(cfg, out_dir, summary, corr, transfer_models)
    timing["evaluate_s"] = round(time.time() - t3, 3)
    timing["total_s"] = round(time.time() - t0, 3)
    (out_dir / "timing.json").write_text(json.dumps(timing, indent=2))
    return payload
