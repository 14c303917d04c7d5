from .types import (Corpus, CorpusManifest, Lang, ManifestEntry, MelSpectrogram,
                    ParallelPair, SyntheticStyleSpec, Utterance)
from .generator import build_corpus, generate_pair
from .render import (StyleSlice, WordRenderSpec, mel_bin_centers, render_mel,
                     speaker_f0_base, word_frame_count)
from .align import alignment_weights, even_weights, spans_to_weights
from .io import (load_manifest, read_alignment, read_matrix, read_mel,
                 read_track, write_alignment, write_corpus, write_matrix,
                 write_mel, write_track)
from . import lexicon

__all__ = [
    "Corpus", "CorpusManifest", "Lang", "ManifestEntry", "MelSpectrogram",
    "ParallelPair", "SyntheticStyleSpec", "Utterance",
    "build_corpus", "generate_pair",
    "StyleSlice", "WordRenderSpec", "mel_bin_centers", "render_mel",
    "speaker_f0_base", "word_frame_count",
    "alignment_weights", "even_weights", "spans_to_weights",
    "load_manifest", "read_alignment", "read_matrix", "read_mel", "read_track",
    "write_alignment", "write_corpus", "write_matrix", "write_mel", "write_track",
    "lexicon",
]
