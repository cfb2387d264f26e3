"""Normalization, vocabularies, id encoding and padded batches."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._io import atomic_write_text

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")

_DIGIT = re.compile(r"\d")


def normalize_token(token: str) -> str:
    return _DIGIT.sub("#", token.lower())


def normalize_token_stream(tokens: Iterable[str]) -> list[str]:
    """Lowercase every token and replace each decimal digit with ``#``."""
    return [normalize_token(t) for t in tokens]


def normalize_line(line: str) -> str:
    return " ".join(normalize_token_stream(line.split()))


class Vocabulary:
    """Immutable token/id bijection; ids 0-3 are PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[: len(SPECIALS)] != SPECIALS:
            raise ValueError(f"vocabulary must start with the specials {SPECIALS}")
        index = {t: i for i, t in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._tokens = tokens
        self._index = index

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def decode(self, ids: Iterable[int], strip_eos: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip_eos and i == EOS:
                break
            out.append(self._tokens[i])
        return out

    def save(self, path) -> None:
        atomic_write_text(path, "".join(t + "\n" for t in self._tokens))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocabulary(corpus: Iterable[Sequence[str]], min_count: int = 5) -> Vocabulary:
    """Keep tokens seen at least ``min_count`` times, most frequent first, ties lexicographic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    n_lines = 0
    for tokens in corpus:
        n_lines += 1
        counts.update(tokens)
    if n_lines == 0 or not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    for s in SPECIALS:
        counts.pop(s, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(SPECIALS + tuple(kept))


def encode_sequence(tokens: Sequence[str], vocab: Vocabulary, role: str = "source") -> list[int]:
    """Map tokens to ids (OOV to UNK); target sequences get a trailing EOS."""
    if role not in ("source", "target"):
        raise ValueError(f"role must be 'source' or 'target', got {role!r}")
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token sequence")
    ids = [vocab.id(t) for t in tokens]
    if role == "target":
        ids.append(EOS)
    return ids


@dataclass
class Batch:
    src: np.ndarray  # (B, max_n) int
    src_mask: np.ndarray  # (B, max_n) float, 1 on tokens
    tgt: np.ndarray  # (B, max_l) int, EOS included
    tgt_mask: np.ndarray

    def __len__(self) -> int:
        return self.src.shape[0]

    @property
    def src_lengths(self) -> np.ndarray:
        return self.src_mask.sum(axis=1).astype(int)


def pad_sequences(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def collate(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> Batch:
    if any(len(s) == 0 for s, _ in pairs):
        raise ValueError("every source must have at least one token")
    src, src_mask = pad_sequences([s for s, _ in pairs])
    tgt, tgt_mask = pad_sequences([t for _, t in pairs])
    return Batch(src, src_mask, tgt, tgt_mask)


def make_batches(
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]], batch_size: int = 64, shuffle_seed=None
) -> Iterator[Batch]:
    """Bucket by source length, cut into batches, then shuffle batch order.

    With ``shuffle_seed=None`` batches come out in length order.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i][0]), i))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if shuffle_seed is not None:
        perm = np.random.default_rng(shuffle_seed).permutation(len(chunks))
        chunks = [chunks[j] for j in perm]
    for chunk in chunks:
        yield collate([pairs[i] for i in chunk])


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def read_parallel(src_path, tgt_path) -> list[tuple[list[str], list[str]]]:
    """Load a line-aligned, whitespace-tokenized parallel corpus."""
    src = read_lines(src_path)
    tgt = read_lines(tgt_path)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}")
    return [(s.split(), t.split()) for s, t in zip(src, tgt)]


def write_parallel(pairs: Iterable[tuple[Sequence[str], Sequence[str]]], src_path, tgt_path) -> None:
    pairs = list(pairs)
    atomic_write_text(src_path, "".join(" ".join(s) + "\n" for s, _ in pairs))
    atomic_write_text(tgt_path, "".join(" ".join(t) + "\n" for _, t in pairs))


def encode_pairs(pairs, src_vocab: Vocabulary, tgt_vocab: Vocabulary):
    return [
        (encode_sequence(s, src_vocab, "source"), encode_sequence(t, tgt_vocab, "target"))
        for s, t in pairs
    ]


def filter_pairs(pairs, min_src_len: int = 1):
    """Drop pairs with an empty side or a source shorter than ``min_src_len``."""
    return [(s, t) for s, t in pairs if len(s) >= max(1, min_src_len) and len(t) > 0]


__all__ = [
    "PAD", "BOS", "EOS", "UNK", "SPECIALS", "Vocabulary", "Batch", "build_vocabulary",
    "encode_sequence", "make_batches", "collate", "normalize_token_stream", "normalize_line",
    "read_parallel", "write_parallel", "encode_pairs", "filter_pairs",
]
