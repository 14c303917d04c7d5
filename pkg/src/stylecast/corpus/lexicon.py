"""Pseudo-language lexicon.

Both languages get a closed vocabulary plus a fixed one-to-one translation
table between them.  Word-to-phoneme expansion is hash driven, so any token
string (including out-of-vocabulary ones coming from a manifest) maps to a
stable phoneme sequence without a dictionary file.
"""

from __future__ import annotations

from ..util import rng_for
from .types import Lang

_LEX_SALT = "lexicon-v1"

_WORD_PREFIX = {Lang.L1: "ka", Lang.L2: "zu"}
_PHONE_PREFIX = {Lang.L1: "p", Lang.L2: "q"}


def vocabulary(lang: Lang, vocab_size: int) -> list[str]:
    prefix = _WORD_PREFIX[lang]
    return [f"{prefix}{i:03d}" for i in range(vocab_size)]


def translate(token: str, vocab_size: int) -> str:
    """Fixed translation table: the i-th word of one language maps to the
    i-th word of the other."""
    for lang, prefix in _WORD_PREFIX.items():
        if token.startswith(prefix):
            idx = int(token[len(prefix):])
            if idx >= vocab_size:
                raise ValueError(f"token {token!r} outside vocabulary of size {vocab_size}")
            return f"{_WORD_PREFIX[lang.other]}{idx:03d}"
    raise ValueError(f"token {token!r} belongs to neither pseudo-language")


def phoneme_inventory(lang: Lang, n_symbols: int) -> list[str]:
    prefix = _PHONE_PREFIX[lang]
    return [f"{prefix}{i:02d}" for i in range(n_symbols)]


def phonemes_of(token: str, lang: Lang, n_symbols: int, max_len: int) -> list[str]:
    """Stable hash-driven expansion of a word into phoneme symbols.

    The expansion depends only on (token, lang, inventory size, max_len), so
    regenerating a corpus or re-reading a manifest yields identical phoneme
    sequences.
    """
    rng = rng_for(_LEX_SALT, lang.value, token, n_symbols, max_len)
    count = int(rng.integers(1, max_len + 1))
    inv = phoneme_inventory(lang, n_symbols)
    picks = rng.integers(0, n_symbols, size=count)
    return [inv[int(i)] for i in picks]


def phoneme_ids(phonemes: list[str], lang: Lang, n_symbols: int) -> list[int]:
    inv = {s: i for i, s in enumerate(phoneme_inventory(lang, n_symbols))}
    try:
        return [inv[p] for p in phonemes]
    except KeyError as exc:
        raise ValueError(f"unknown phoneme symbol {exc.args[0]!r} for {lang.value}") from None
