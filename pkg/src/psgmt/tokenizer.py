"""Byte-pair-encoding training, encoding, and decoding.

Words are whitespace-split; the word-final symbol carries an end-of-word
marker so decoding is unambiguous.  Merge learning is deterministic: ties
on frequency go to the lexicographically smallest pair.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from psgmt import kernels

__all__ = ["BpeModel", "bpe_train", "save_model", "load_model"]

WORD_END = "</w>"

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


@dataclass
class BpeModel:
    """Ordered merges plus the derived vocabulary.

    Special ids occupy 0..3; learned symbols start at 4.  ``alphabet`` is the
    character inventory seen at training time (word-final characters appear
    with the end-of-word marker attached).
    """

    merges: list[tuple[str, str]]
    alphabet: list[str]
    vocab: dict[str, int] = field(init=False)
    _merge_rank: dict[tuple[str, str], int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        symbols = list(SPECIAL_TOKENS) + list(self.alphabet)
        for left, right in self.merges:
            symbols.append(left + right)
        self.vocab = {}
        for sym in symbols:
            if sym not in self.vocab:
                self.vocab[sym] = len(self.vocab)
        self._merge_rank = {pair: i for i, pair in enumerate(self.merges)}
        self._id_to_symbol = {i: s for s, i in self.vocab.items()}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _segment_word(self, word: str) -> list[str]:
        symbols = list(word)
        symbols[-1] = symbols[-1] + WORD_END
        # apply merges in training order
        for left, right in self.merges:
            if len(symbols) < 2:
                break
            merged = left + right
            out = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        return symbols

    def encode(self, text: str) -> list[int]:
        """Token ids for ``text``; unknown symbols map to unk, '' -> []."""
        ids = []
        for word in text.split():
            for sym in self._segment_word(word):
                ids.append(self.vocab.get(sym, UNK))
        return ids

    def encode_tokens(self, text: str) -> list[str]:
        return [sym for word in text.split() for sym in self._segment_word(word)]

    def decode(self, ids: Iterable[int]) -> str:
        """Text for ``ids``; specials are dropped, out-of-range ids raise."""
        pieces = []
        for i in ids:
            if i not in self._id_to_symbol:
                raise ValueError(f"token id {i} outside vocabulary of {self.vocab_size}")
            if i in (PAD, BOS, EOS):
                continue
            pieces.append(self._id_to_symbol[i])
        text = "".join(pieces)
        return text.replace(WORD_END, " ").strip()


def _word_symbols(word: str) -> tuple[str, ...]:
    symbols = list(word)
    symbols[-1] = symbols[-1] + WORD_END
    return tuple(symbols)


def bpe_train(corpus: Iterable[str], merges: int) -> BpeModel:
    """Learn up to ``merges`` merges from a sentence iterator."""
    if merges < 0:
        raise ValueError("merge count must be >= 0")
    word_freq: Counter[str] = Counter()
    for sentence in corpus:
        word_freq.update(sentence.split())
    if not word_freq:
        raise ValueError("empty corpus")

    words = [_word_symbols(w) for w in word_freq]
    freqs = [word_freq[w] for w in word_freq]
    alphabet = sorted({sym for word in words for sym in word})

    learned: list[tuple[str, str]] = []
    for _ in range(merges):
        counts = kernels.pair_counts(words, freqs)
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        learned.append(best)
        words = kernels.apply_merge(words, best[0], best[1], best[0] + best[1])
    return BpeModel(merges=learned, alphabet=alphabet)


def save_model(model: BpeModel, path) -> None:
    """Text format: 'bpe v1 <merges>' header, one merge per line, then the
    character inventory ('chars <n>' section)."""
    lines = [f"bpe v1 {len(model.merges)}"]
    lines.extend(f"{left} {right}" for left, right in model.merges)
    lines.append(f"chars {len(model.alphabet)}")
    lines.extend(model.alphabet)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> BpeModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("bpe v1 "):
        raise ValueError(f"{path}: not a bpe v1 model file")
    n_merges = int(lines[0].split()[2])
    merges = []
    for ln in lines[1 : 1 + n_merges]:
        left, right = ln.split(" ", 1)
        merges.append((left, right))
    rest = lines[1 + n_merges :]
    if not rest or not rest[0].startswith("chars "):
        raise ValueError(f"{path}: missing character inventory section")
    n_chars = int(rest[0].split()[1])
    alphabet = rest[1 : 1 + n_chars]
    return BpeModel(merges=merges, alphabet=alphabet)
