import numpy as np
import pytest
import torch

from stylecast.corpus.io import write_matrix
from stylecast.errors import ConfigError, IngestionError, ShapeError
from stylecast.textfeat import (ExternalEmbedder, LocalTextEncoder,
                                SyntheticEmbedder, TextEmbeddings,
                                average_subwords, embed_text, fuse_global,
                                fuse_local_inputs, get_text_provider)


class TestSyntheticEmbedder:
    def test_determinism_across_instances(self):
        a = SyntheticEmbedder(d_b=32).embed(["ka001", "ka002"])
        b = SyntheticEmbedder(d_b=32).embed(["ka001", "ka002"])
        assert np.array_equal(a.word_vecs, b.word_vecs)
        assert np.array_equal(a.sentence_vec, b.sentence_vec)

    def test_shapes_and_sentence_mean(self):
        emb = SyntheticEmbedder(d_b=16).embed(["ka001", "zu004", "ka009"])
        assert emb.word_vecs.shape == (3, 16)
        assert emb.sentence_vec.shape == (16,)
        assert np.allclose(emb.sentence_vec, emb.word_vecs.mean(axis=0),
                           atol=1e-7)

    def test_same_token_same_vector(self):
        emb = SyntheticEmbedder(d_b=32).embed(["ka001", "ka002", "ka001"])
        assert np.array_equal(emb.word_vecs[0], emb.word_vecs[2])
        assert not np.array_equal(emb.word_vecs[0], emb.word_vecs[1])

    def test_near_orthogonality_at_width_32(self):
        emb = SyntheticEmbedder(d_b=32)
        vecs = np.stack([emb.word_vector(f"ka{i:03d}") for i in range(40)])
        gram = vecs @ vecs.T
        off_diag = gram - np.diag(np.diag(gram))
        assert np.abs(off_diag).max() < 0.75

    def test_empty_tokens_rejected(self):
        with pytest.raises(ShapeError):
            SyntheticEmbedder(d_b=8).embed([])

    def test_width_changes_vector(self):
        v16 = SyntheticEmbedder(d_b=16).word_vector("ka001")
        v32 = SyntheticEmbedder(d_b=32).word_vector("ka001")
        assert v16.shape == (16,) and v32.shape == (32,)


class TestAverageSubwords:
    def test_simple_average(self):
        sub = np.array([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]], dtype=np.float32)
        out = average_subwords(sub, [0, 0, 1], n_words=2)
        assert np.allclose(out, [[2.0, 0.0], [0.0, 2.0]])

    def test_single_subword_per_word_is_identity(self, rng):
        sub = rng.normal(size=(4, 8)).astype(np.float32)
        out = average_subwords(sub, [0, 1, 2, 3], n_words=4)
        assert np.allclose(out, sub, atol=1e-7)

    def test_word_without_subwords(self):
        with pytest.raises(IngestionError, match="no subword"):
            average_subwords(np.zeros((2, 4), dtype=np.float32), [0, 0], n_words=2)

    def test_out_of_range_word_id(self):
        with pytest.raises(ShapeError, match="out of range"):
            average_subwords(np.zeros((1, 4), dtype=np.float32), [3], n_words=2)

    def test_id_count_mismatch(self):
        with pytest.raises(ShapeError):
            average_subwords(np.zeros((3, 4), dtype=np.float32), [0, 1], n_words=2)


class TestExternalEmbedder:
    @pytest.fixture()
    def store(self, tmp_path, rng):
        d_b = 8
        sent = rng.normal(size=(1, d_b)).astype(np.float32)
        sub = rng.normal(size=(5, d_b)).astype(np.float32)
        write_matrix(sent, tmp_path / "u1.sent.bin")
        write_matrix(sub, tmp_path / "u1.sub.bin")
        (tmp_path / "u1.map.txt").write_text("0\n0\n1\n2\n2\n")
        return tmp_path, sent, sub

    def test_reads_and_averages(self, store):
        root, sent, sub = store
        emb = ExternalEmbedder(root, d_b=8).embed(["a", "b", "c"], key="u1")
        assert np.array_equal(emb.sentence_vec, sent[0])
        assert np.allclose(emb.word_vecs[0], sub[:2].mean(axis=0), atol=1e-7)
        assert np.allclose(emb.word_vecs[1], sub[2], atol=1e-7)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ConfigError, match="directory"):
            ExternalEmbedder(tmp_path / "absent", d_b=8)

    def test_needs_key(self, store):
        root, _, _ = store
        with pytest.raises(IngestionError, match="key"):
            ExternalEmbedder(root, d_b=8).embed(["a"])

    def test_width_mismatch(self, store):
        root, _, _ = store
        with pytest.raises(IngestionError, match="width"):
            ExternalEmbedder(root, d_b=16).embed(["a", "b", "c"], key="u1")

    def test_provider_selection(self, tmp_path):
        assert get_text_provider("synthetic", 8).name == "synthetic"
        assert get_text_provider("external", 8, str(tmp_path)).name == "external"
        with pytest.raises(ConfigError, match="unknown provider"):
            get_text_provider("bert-large", 8)


class TestEmbedText:
    def test_word_count_check(self, small_corpus):
        utt = small_corpus.pairs[0].utt1

        class Short:
            def embed(self, tokens, key=None):
                return TextEmbeddings(np.zeros(4), np.zeros((1, 4)))

        with pytest.raises(ShapeError, match="word vectors"):
            embed_text(utt, Short())

    def test_synthetic_provider_round_trip(self, small_corpus):
        utt = small_corpus.pairs[0].utt1
        emb = embed_text(utt, SyntheticEmbedder(d_b=32))
        assert emb.word_vecs.shape == (utt.n_words, 32)


class TestTextEmbeddingsValidation:
    def test_width_disagreement(self):
        with pytest.raises(ShapeError):
            TextEmbeddings(np.zeros(4), np.zeros((2, 5)))

    def test_non_finite(self):
        with pytest.raises(ShapeError):
            TextEmbeddings(np.array([np.nan, 0.0]), np.zeros((2, 2)))


class TestLocalTextEncoder:
    def test_output_shape(self):
        torch.manual_seed(0)
        enc = LocalTextEncoder(d_in=32, d_e=24).eval()
        with torch.no_grad():
            out = enc(torch.randn(2, 6, 32), torch.tensor([6, 6]))
        assert out.shape == (2, 6, 24)

    def test_width_check(self):
        enc = LocalTextEncoder(d_in=32, d_e=24)
        with pytest.raises(ShapeError, match="width"):
            enc(torch.randn(1, 3, 16), torch.tensor([3]))

    def test_batched_matches_unbatched(self):
        torch.manual_seed(1)
        enc = LocalTextEncoder(d_in=16, d_e=8).eval()
        xs = [torch.randn(3, 16), torch.randn(7, 16)]
        lengths = torch.tensor([3, 7])
        batch = torch.zeros(2, 7, 16)
        for b, x in enumerate(xs):
            batch[b, :x.size(0)] = x
        with torch.no_grad():
            out = enc(batch, lengths)
            for b, x in enumerate(xs):
                solo = enc(x.unsqueeze(0), lengths[b:b + 1])
                torch.testing.assert_close(out[b, :x.size(0)], solo[0],
                                           rtol=1e-4, atol=1e-5)

    def test_instances_do_not_share_parameters(self):
        torch.manual_seed(2)
        a, b = LocalTextEncoder(16, 8), LocalTextEncoder(16, 8)
        pa = list(a.parameters())[0]
        pb = list(b.parameters())[0]
        assert pa.data_ptr() != pb.data_ptr()


class TestFusion:
    def test_fuse_global_concatenates(self, rng):
        s = rng.normal(size=5).astype(np.float32)
        g = rng.normal(size=3).astype(np.float32)
        out = fuse_global(s, g)
        assert out.shape == (8,)
        assert np.array_equal(out[:5], s) and np.array_equal(out[5:], g)

    def test_fuse_global_rejects_matrices(self, rng):
        with pytest.raises(ShapeError):
            fuse_global(rng.normal(size=(2, 3)), rng.normal(size=3))

    def test_fuse_local_row_wise(self, rng):
        w = rng.normal(size=(4, 6)).astype(np.float32)
        l = rng.normal(size=(4, 2)).astype(np.float32)
        out = fuse_local_inputs(w, l)
        assert out.shape == (4, 8)
        assert np.array_equal(out[:, :6], w) and np.array_equal(out[:, 6:], l)

    def test_fuse_local_row_mismatch(self, rng):
        with pytest.raises(ShapeError, match="row count"):
            fuse_local_inputs(rng.normal(size=(4, 6)), rng.normal(size=(3, 2)))
