"""Ablation harness: scale and direction variants of the transfer stage.

Four rows per dubbing direction: the proposed two-scale model, one without
the local scale, one without the global scale, and one trained on that
direction alone.  Style-prediction MSEs are only meaningful within a fixed
backbone, so each single-scale variant gets its own backbone pretrained with
just that conditioning, and the removed scale's cell is left empty.

Backbones are pretrained once per harness run at a reduced scale; the
median-of-seeds mode varies the transfer-stage seed.  A variant that fails
to train is reported as FAILED without aborting the sweep.
"""

from __future__ import annotations

import copy
import csv
import io
import json
from pathlib import Path

import numpy as np
import torch

from . import evalsuite
from .config import ExperimentConfig
from .corpus.types import Corpus
from .pipeline import (_fmt_table, _target_of, compute_features, lang_stats,
                       stage_corpus, stage_pretrain)
from .synth import prepare_utterance
from .textfeat import SyntheticEmbedder
from .transfer import TransferModel, train_transfer
from .util import stable_seed

VARIANTS = ("proposed", "no_local", "no_global", "single_direction")
_DIRECTIONS = ("1to2", "2to1")

# variant -> (backbone kind, use_global, use_local)
_VARIANT_SPEC = {
    "proposed": ("mst", True, True),
    "no_local": ("gst_only", True, False),
    "no_global": ("lst_only", False, True),
    "single_direction": ("mst", True, True),
}


def ablation_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Reduced copy of cfg used for the whole harness."""
    acfg = copy.deepcopy(cfg)
    acfg.corpus.n_train = cfg.ablation.n_train
    acfg.corpus.n_test = cfg.ablation.n_test
    acfg.pretrain.steps = cfg.ablation.pretrain_steps
    acfg.master_seed = stable_seed(cfg.master_seed, "ablation") % (2 ** 31)
    return acfg


def _variant_models(cfg: ExperimentConfig, seed: int) -> dict:
    """Fresh transfer models for one seed, keyed by (variant, directions)."""
    d = cfg.dims
    t = cfg.transfer
    out = {}
    for variant in ("proposed", "no_local", "no_global"):
        _, use_g, use_l = _VARIANT_SPEC[variant]
        torch.manual_seed(stable_seed(seed, "init", variant) % (2 ** 31))
        out[(variant, "both")] = TransferModel(
            d.d_b, d.d_e, d.d_st, d.d_a, mode="multiscale",
            use_global=use_g, use_local=use_l, directions="both",
            temperature=t.temperature, prenet_dropout=t.prenet_dropout)
    for direction in _DIRECTIONS:
        torch.manual_seed(stable_seed(seed, "init", "single", direction) % (2 ** 31))
        out[("single_direction", direction)] = TransferModel(
            d.d_b, d.d_e, d.d_st, d.d_a, mode="multiscale", directions=direction,
            temperature=t.temperature, prenet_dropout=t.prenet_dropout)
    return out


def _evaluate_variant(cfg: ExperimentConfig, test_corpus: Corpus, feats: list,
                      models: dict, kind: str, xfer: TransferModel,
                      direction: str, train_corpus: Corpus) -> dict:
    """Mel and style MSEs for one trained variant in one direction."""
    xfer.eval()
    embedder = SyntheticEmbedder(cfg.dims.d_b)
    mel_cells = {"full": [], "low10": [], "high10": []}
    gst_err, lst_err = [], []
    for pair, pf in zip(test_corpus.pairs, feats):
        with torch.no_grad():
            t1, t2, _ = xfer.transfer_forward(pf)
        tgt = t2 if direction == "1to2" else t1
        utt, lang = _target_of(pair, direction)
        item = prepare_utterance(utt, embedder.embed(utt.tokens).word_vecs,
                                 cfg.corpus.n_phoneme_symbols,
                                 lang_stats(train_corpus, lang))
        backbone = models[(lang, kind)]
        gst_vec = lst_vecs = None
        if tgt.gst_pred is not None:
            gst_vec = tgt.gst_pred.numpy()
            gst_err.append(float(((tgt.gst_pred - tgt.gst_true) ** 2).mean()))
        if tgt.lst_pred is not None:
            lst_vecs = tgt.lst_pred.numpy()
            lst_err.append(float(((tgt.lst_pred - tgt.lst_true) ** 2).mean()))
        mel = backbone.tts.synthesize(item["phon_ids"], item["word_of_phoneme"],
                                      utt.speaker_id, gst_vec=gst_vec,
                                      lst_vecs=lst_vecs)
        rep = evalsuite.mel_mse(mel.data, utt.mel.data,
                                direction=direction, method="ablation")
        for band in mel_cells:
            mel_cells[band].append(getattr(rep, band))
    cell = {band: float(np.mean(v)) for band, v in mel_cells.items()}
    cell["gst_mse"] = float(np.mean(gst_err)) if gst_err else None
    cell["lst_mse"] = float(np.mean(lst_err)) if lst_err else None
    return cell


def _median_cells(per_seed: list) -> dict:
    """Cell-wise median over seeds, skipping FAILED entries."""
    ok = [c for c in per_seed if isinstance(c, dict)]
    if not ok:
        return {"failed": True}
    out = {}
    for key in ("full", "low10", "high10", "gst_mse", "lst_mse"):
        vals = [c[key] for c in ok if c.get(key) is not None]
        out[key] = float(np.median(vals)) if vals else None
    return out


def run_ablations(cfg: ExperimentConfig, out_dir, force: bool = False) -> dict:
    """Train + evaluate all variants; returns and writes the report table."""
    torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    acfg = ablation_config(cfg)

    train_corpus, test_corpus = stage_corpus(acfg, out_dir, force=force)
    kinds = tuple(sorted({spec[0] for spec in _VARIANT_SPEC.values()}))
    models = stage_pretrain(acfg, train_corpus, out_dir, kinds=kinds)

    feats = {}
    for kind in kinds:
        feats[kind] = {
            "train": compute_features(acfg, train_corpus, models, kind=kind),
            "test": compute_features(acfg, test_corpus, models,
                                     train_corpus=train_corpus, kind=kind),
        }

    results = {"seeds": {}, "median": {}}
    for seed in cfg.ablation.seeds:
        per_direction = {d: {} for d in _DIRECTIONS}
        variant_models = _variant_models(acfg, seed)
        for (variant, directions), xfer in variant_models.items():
            kind = _VARIANT_SPEC[variant][0]
            try:
                train_transfer(feats[kind]["train"], xfer, acfg.transfer,
                               stable_seed(seed, "train", variant, directions) % (2 ** 31))
                eval_dirs = _DIRECTIONS if directions == "both" else (directions,)
                for direction in eval_dirs:
                    per_direction[direction][variant] = _evaluate_variant(
                        acfg, test_corpus, feats[kind]["test"], models, kind,
                        xfer, direction, train_corpus)
            except Exception as exc:  # report FAILED, keep sweeping
                eval_dirs = _DIRECTIONS if directions == "both" else (directions,)
                for direction in eval_dirs:
                    per_direction[direction][variant] = f"FAILED: {exc}"
        results["seeds"][str(seed)] = per_direction

    for direction in _DIRECTIONS:
        results["median"][direction] = {}
        for variant in VARIANTS:
            per_seed = [results["seeds"][str(s)][direction].get(variant)
                        for s in cfg.ablation.seeds]
            results["median"][direction][variant] = _median_cells(per_seed)

    _write_ablation_reports(out_dir, cfg, results)
    return results


def _row_cells(cell) -> list[str]:
    if not isinstance(cell, dict) or cell.get("failed"):
        return ["FAILED"] * 5
    def fmt(v):
        return "-" if v is None else f"{v:.6f}"
    return [fmt(cell["full"]), fmt(cell["low10"]), fmt(cell["high10"]),
            fmt(cell["gst_mse"]), fmt(cell["lst_mse"])]


def _write_ablation_reports(out_dir: Path, cfg: ExperimentConfig,
                            results: dict) -> None:
    reports = Path(out_dir) / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    header = ["scope", "direction", "variant", "mel_mse_full", "mel_mse_low10",
              "mel_mse_high10", "gst_mse", "lst_mse"]
    rows = []
    for seed in cfg.ablation.seeds:
        for direction in _DIRECTIONS:
            for variant in VARIANTS:
                cell = results["seeds"][str(seed)][direction].get(variant)
                if isinstance(cell, str):
                    rows.append([f"seed={seed}", direction, variant] + ["FAILED"] * 5)
                else:
                    rows.append([f"seed={seed}", direction, variant] + _row_cells(cell))
    for direction in _DIRECTIONS:
        for variant in VARIANTS:
            cell = results["median"][direction][variant]
            rows.append(["median", direction, variant] + _row_cells(cell))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    (reports / "ablation.csv").write_text(buf.getvalue())
    (reports / "ablation.txt").write_text(_fmt_table(header, rows))
    (reports / "ablation.json").write_text(
        json.dumps(results, indent=2, sort_keys=True))
