import numpy as np
import pytest
import torch.nn as nn

from stylecast.checkpoint import (load_checkpoint, module_hash,
                                  read_checkpoint, save_checkpoint)
from stylecast.corpus.io import (load_manifest, read_alignment, read_matrix,
                                 read_mel, read_track, write_alignment,
                                 write_corpus, write_matrix, write_mel,
                                 write_track)
from stylecast.corpus.types import MelSpectrogram
from stylecast.errors import IngestionError


class TestMatrixContainer:
    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        data = rng.normal(size=(17, 20)).astype(np.float32)
        p = tmp_path / "m.mel"
        write_matrix(data, p, frame_shift_ms=10.0, window_ms=25.0)
        back, shift, window = read_matrix(p)
        assert np.array_equal(back, data)
        assert (shift, window) == (10.0, 25.0)

    def test_rejects_non_2d(self, tmp_path):
        with pytest.raises(ValueError):
            write_matrix(np.zeros(5), tmp_path / "bad.mel")

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "t.mel"
        p.write_bytes(b"MEL")
        with pytest.raises(IngestionError, match="truncated"):
            read_matrix(p)

    def test_bad_magic(self, tmp_path, rng):
        p = tmp_path / "m.mel"
        write_matrix(rng.normal(size=(3, 4)).astype(np.float32), p)
        blob = bytearray(p.read_bytes())
        blob[0] = ord("X")
        p.write_bytes(bytes(blob))
        with pytest.raises(IngestionError, match="magic"):
            read_matrix(p)

    def test_bad_version(self, tmp_path, rng):
        p = tmp_path / "m.mel"
        write_matrix(rng.normal(size=(3, 4)).astype(np.float32), p)
        blob = bytearray(p.read_bytes())
        blob[4] = 99
        p.write_bytes(bytes(blob))
        with pytest.raises(IngestionError, match="version"):
            read_matrix(p)

    def test_payload_length_mismatch(self, tmp_path, rng):
        p = tmp_path / "m.mel"
        write_matrix(rng.normal(size=(3, 4)).astype(np.float32), p)
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(IngestionError, match="header implies"):
            read_matrix(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError, match="cannot read"):
            read_matrix(tmp_path / "absent.mel")

    def test_mel_and_track_helpers(self, tmp_path, rng):
        mel = MelSpectrogram(rng.normal(size=(9, 20)).astype(np.float32),
                             frame_shift_ms=12.5, window_ms=50.0)
        write_mel(mel, tmp_path / "u.mel")
        back = read_mel(tmp_path / "u.mel")
        assert np.array_equal(back.data, mel.data)
        assert back.frame_shift_ms == 12.5

        track = rng.normal(size=31).astype(np.float32)
        write_track(track, tmp_path / "u.f0.bin")
        assert np.array_equal(read_track(tmp_path / "u.f0.bin"), track)


class TestAlignmentFiles:
    def test_round_trip(self, tmp_path, small_corpus):
        pair = small_corpus.pairs[0]
        p = tmp_path / "a.align"
        write_alignment(pair, p)
        spans1, spans2, word_map = read_alignment(p)
        assert spans1 == pair.utt1.word_spans
        assert spans2 == pair.utt2.word_spans
        assert word_map == pair.word_map

    def test_comments_and_blanks_are_skipped(self, tmp_path):
        p = tmp_path / "a.align"
        p.write_text("# header\n[lang1]\n\n0 4\n[lang2]\n0 2\n2 5\n")
        spans1, spans2, word_map = read_alignment(p)
        assert spans1 == [(0, 4)]
        assert spans2 == [(0, 2), (2, 5)]
        assert word_map == {}

    def test_unknown_section_reports_line(self, tmp_path):
        p = tmp_path / "a.align"
        p.write_text("[lang1]\n0 4\n[bogus]\n")
        with pytest.raises(IngestionError, match=r":3:"):
            read_alignment(p)

    def test_data_before_section(self, tmp_path):
        p = tmp_path / "a.align"
        p.write_text("0 4\n")
        with pytest.raises(IngestionError, match="before any section"):
            read_alignment(p)

    def test_wrong_field_count(self, tmp_path):
        p = tmp_path / "a.align"
        p.write_text("[lang1]\n0 4 9\n")
        with pytest.raises(IngestionError, match="two integers"):
            read_alignment(p)

    def test_non_integer_field(self, tmp_path):
        p = tmp_path / "a.align"
        p.write_text("[lang1]\n0 x\n")
        with pytest.raises(IngestionError, match="non-integer"):
            read_alignment(p)

    def test_duplicate_word_map_source(self, tmp_path):
        p = tmp_path / "a.align"
        p.write_text("[word_map]\n0 1\n0 2\n")
        with pytest.raises(IngestionError, match="duplicate"):
            read_alignment(p)


@pytest.fixture(scope="module")
def written(tmp_path_factory, small_corpus):
    out = tmp_path_factory.mktemp("corpus")
    manifest = write_corpus(small_corpus, out, split="train")
    return out, manifest


class TestManifestRoundTrip:
    def test_manifest_path_and_layout(self, written):
        out, manifest = written
        assert manifest == out / "manifest_train.jsonl"
        assert (out / "mels").is_dir() and (out / "align").is_dir()

    def test_rewrite_requires_force(self, written, small_corpus):
        out, _ = written
        with pytest.raises(FileExistsError):
            write_corpus(small_corpus, out, split="train")
        write_corpus(small_corpus, out, split="train", force=True)

    def test_loaded_corpus_matches(self, written, small_corpus, base_cfg):
        _, manifest = written
        loaded = load_manifest(manifest, base_cfg.corpus)
        assert len(loaded.pairs) == len(small_corpus.pairs)
        for orig, back in zip(small_corpus.pairs, loaded.pairs):
            assert back.pair_id == orig.pair_id
            assert back.utt1.tokens == orig.utt1.tokens
            assert back.utt2.tokens == orig.utt2.tokens
            assert back.utt1.word_spans == orig.utt1.word_spans
            assert back.word_map == orig.word_map
            assert back.utt1.speaker_id == orig.utt1.speaker_id
            assert np.array_equal(back.utt1.mel.data, orig.utt1.mel.data)
            assert np.array_equal(back.utt2.mel.data, orig.utt2.mel.data)
            assert np.array_equal(back.utt1.f0_track, orig.utt1.f0_track)
            assert np.array_equal(back.utt2.energy_track, orig.utt2.energy_track)
            assert back.utt1.phonemes == orig.utt1.phonemes
            assert back.style_truth is None

    def test_proxy_tracks_when_sidecars_missing(self, written, base_cfg):
        out, manifest = written
        victim = next((out / "mels").glob("*_l1.mel.f0.bin"))
        victim.unlink()
        loaded = load_manifest(manifest, base_cfg.corpus)
        pair_id = victim.name.split("_l1")[0]
        utt = next(p.utt1 for p in loaded.pairs if p.pair_id == pair_id)
        assert utt.f0_track.shape == (utt.n_frames,)
        assert np.isfinite(utt.f0_track).all()
        assert (utt.f0_track > 0).all()

    def test_missing_manifest(self, tmp_path, base_cfg):
        with pytest.raises(IngestionError, match="manifest not found"):
            load_manifest(tmp_path / "nope.jsonl", base_cfg.corpus)

    def test_invalid_json_line(self, tmp_path, base_cfg):
        p = tmp_path / "manifest_train.jsonl"
        p.write_text("{not json\n")
        with pytest.raises(IngestionError, match="invalid JSON"):
            load_manifest(p, base_cfg.corpus)

    def test_missing_keys_are_named(self, tmp_path, base_cfg):
        p = tmp_path / "manifest_train.jsonl"
        p.write_text('{"pair_id": "x"}\n')
        with pytest.raises(IngestionError, match="missing"):
            load_manifest(p, base_cfg.corpus)

    def test_missing_mel_is_reported_with_pair_id(self, tmp_path, small_corpus,
                                                  base_cfg):
        manifest = write_corpus(small_corpus, tmp_path, split="test")
        victim = small_corpus.pairs[2].pair_id
        (tmp_path / "mels" / f"{victim}_l2.mel").unlink()
        with pytest.raises(IngestionError, match=victim):
            load_manifest(manifest, base_cfg.corpus)

    def test_span_word_count_mismatch(self, tmp_path, small_corpus, base_cfg):
        manifest = write_corpus(small_corpus, tmp_path, split="test")
        pair = small_corpus.pairs[0]
        align = tmp_path / "align" / f"{pair.pair_id}.align"
        lines = [l for l in align.read_text().splitlines()]
        align.write_text("\n".join(lines[:1] + lines[2:]) + "\n")
        with pytest.raises(IngestionError, match="spans for"):
            load_manifest(manifest, base_cfg.corpus)


class TestCheckpoints:
    def _modules(self, seed=0):
        import torch
        torch.manual_seed(seed)
        return {"enc": nn.Linear(4, 3), "dec": nn.Sequential(nn.Linear(3, 2))}

    def test_round_trip_is_bit_exact(self, tmp_path):
        mods = self._modules(seed=1)
        before = {k: module_hash(m) for k, m in mods.items()}
        digest = save_checkpoint(tmp_path / "c.npz", mods, meta={"step": 7})

        fresh = self._modules(seed=2)
        blob = load_checkpoint(tmp_path / "c.npz", fresh)
        assert blob["meta"] == {"step": 7}
        assert blob["hash"] == digest
        assert blob["modules"] == ["dec", "enc"]
        for k, m in fresh.items():
            assert module_hash(m) == before[k]

    def test_tampered_tensor_fails_hash_check(self, tmp_path):
        save_checkpoint(tmp_path / "c.npz", self._modules())
        with np.load(tmp_path / "c.npz") as data:
            payload = {k: data[k].copy() for k in data.files}
        key = next(k for k in payload if k != "__meta__")
        payload[key] = payload[key] + 1.0
        with open(tmp_path / "c.npz", "wb") as fh:
            np.savez(fh, **payload)
        with pytest.raises(IngestionError, match="hash mismatch"):
            read_checkpoint(tmp_path / "c.npz")

    def test_garbage_file_is_reported(self, tmp_path):
        (tmp_path / "c.npz").write_bytes(b"PK\x03\x04 definitely not a zip")
        with pytest.raises(IngestionError, match="unreadable"):
            read_checkpoint(tmp_path / "c.npz")

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError, match="not found"):
            read_checkpoint(tmp_path / "none.npz")

    def test_prefix_mismatch_strict(self, tmp_path):
        save_checkpoint(tmp_path / "c.npz", self._modules())
        with pytest.raises(IngestionError, match="prefix"):
            load_checkpoint(tmp_path / "c.npz", {"other": nn.Linear(4, 3)})

    def test_shape_mismatch_strict(self, tmp_path):
        save_checkpoint(tmp_path / "c.npz", self._modules())
        with pytest.raises(Exception):
            load_checkpoint(tmp_path / "c.npz", {"enc": nn.Linear(5, 3)})

    def test_partial_load_non_strict(self, tmp_path):
        mods = self._modules(seed=3)
        save_checkpoint(tmp_path / "c.npz", mods)
        target = {"enc": nn.Linear(4, 3)}
        load_checkpoint(tmp_path / "c.npz", target, strict=False)
        assert module_hash(target["enc"]) == module_hash(mods["enc"])
