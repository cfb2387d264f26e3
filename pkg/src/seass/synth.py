"""Synthetic parallel corpora: copy tasks and select-and-paraphrase tasks.

In a selection corpus each source mixes *salient* tokens ``s0..`` with *noise*
tokens ``n0..``; the target is the salient tokens, in order, each rewritten
through a fixed bijection onto a separate target alphabet ``t0..``. Output
tokens never occur in the input, so the model cannot solve it by copying.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .text import write_parallel


@dataclass(frozen=True)
class SynthSpec:
    n_salient: int = 50
    n_noise: int = 50
    min_len: int = 10
    max_len: int = 20
    noise_ratio: float = 0.5
    n_train: int = 5000
    n_dev: int = 500
    n_test: int = 500
    seed: int = 0
    copy: bool = False

    def __post_init__(self):
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ValueError("noise_ratio must lie in [0, 1]")
        if self.n_salient < 1 or self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError("need n_salient >= 1 and 1 <= min_len <= max_len")
        if self.copy and self.noise_ratio != 0.0:
            raise ValueError("copy corpora have no noise")
        if self.noise_ratio > 0 and self.n_noise < 1:
            raise ValueError("noise_ratio > 0 needs a noise vocabulary")
        if not self.copy and self.min_len - self.noise_count(self.min_len) < 1:
            raise ValueError("noise ratio leaves some sources without salient tokens; targets would be empty")

    def noise_count(self, length: int) -> int:
        return int(round(self.noise_ratio * length))

    @property
    def total(self) -> int:
        return self.n_train + self.n_dev + self.n_test

    def salient_tokens(self) -> list[str]:
        return [f"s{i}" for i in range(self.n_salient)]

    def noise_tokens(self) -> list[str]:
        return [f"n{i}" for i in range(self.n_noise)]

    def substitution(self) -> dict[str, str]:
        """The salient-to-target bijection (identity for copy corpora)."""
        if self.copy:
            return {t: t for t in self.salient_tokens()}
        return {f"s{i}": f"t{i}" for i in range(self.n_salient)}

    def to_dict(self) -> dict:
        return asdict(self)


def copy_spec(vocab: int = 20, min_len: int = 1, max_len: int = 10, n_train: int = 2000,
              n_dev: int = 200, n_test: int = 200, seed: int = 0) -> SynthSpec:
    return SynthSpec(n_salient=vocab, n_noise=0, min_len=min_len, max_len=max_len, noise_ratio=0.0,
                     n_train=n_train, n_dev=n_dev, n_test=n_test, seed=seed, copy=True)


@dataclass
class SynthCorpus:
    spec: SynthSpec
    train: list[tuple[list[str], list[str]]]
    dev: list[tuple[list[str], list[str]]]
    test: list[tuple[list[str], list[str]]]
    # per-source flags, True where the token is salient; same split layout
    salient_mask: dict[str, list[list[bool]]]

    def splits(self):
        return {"train": self.train, "dev": self.dev, "test": self.test}


def _max_distinct(spec: SynthSpec) -> float:
    total = 0.0
    for L in range(spec.min_len, spec.max_len + 1):
        k = spec.noise_count(L)
        total += float(spec.n_salient) ** (L - k) * float(max(spec.n_noise, 1)) ** k
        if total > 1e12:
            break
    return total


def _generate(spec: SynthSpec) -> SynthCorpus:
    if _max_distinct(spec) < spec.total:
        raise ValueError("spec admits fewer distinct sources than the requested corpus size")
    rng = np.random.default_rng(spec.seed)
    sal, noise, pi = spec.salient_tokens(), spec.noise_tokens(), spec.substitution()
    seen: set[tuple[str, ...]] = set()
    pairs, masks = [], []
    while len(pairs) < spec.total:
        L = int(rng.integers(spec.min_len, spec.max_len + 1))
        k = spec.noise_count(L)
        is_noise = np.zeros(L, dtype=bool)
        if k:
            is_noise[rng.choice(L, size=k, replace=False)] = True
        src = [noise[int(rng.integers(len(noise)))] if f else sal[int(rng.integers(len(sal)))] for f in is_noise]
        key = tuple(src)
        # rejecting repeats keeps the splits disjoint
        if key in seen:
            continue
        seen.add(key)
        tgt = [pi[t] for t, f in zip(src, is_noise) if not f]
        pairs.append((src, tgt))
        masks.append([not f for f in is_noise])
    a, b = spec.n_train, spec.n_train + spec.n_dev
    return SynthCorpus(
        spec, pairs[:a], pairs[a:b], pairs[b:],
        {"train": masks[:a], "dev": masks[a:b], "test": masks[b:]},
    )


def generate_copy_corpus(spec: SynthSpec) -> SynthCorpus:
    if not spec.copy:
        spec = replace(spec, copy=True, noise_ratio=0.0)
    return _generate(spec)


def generate_selection_corpus(spec: SynthSpec) -> SynthCorpus:
    if spec.copy:
        raise ValueError("use generate_copy_corpus for copy specs")
    return _generate(spec)


def oracle_extract(src: list[str], spec: SynthSpec) -> list[str]:
    """Reference solution: drop noise tokens and map the rest through the bijection."""
    pi = spec.substitution()
    return [pi[t] for t in src if t in pi]


def write_corpus(corpus: SynthCorpus, out_dir) -> None:
    out = Path(out_dir)
    for name, pairs in corpus.splits().items():
        write_parallel(pairs, out / f"{name}.src.txt", out / f"{name}.tgt.txt")
    atomic_write_text(out / "spec.json", json.dumps(corpus.spec.to_dict(), indent=2, sort_keys=True) + "\n")


__all__ = [
    "SynthSpec", "SynthCorpus", "copy_spec", "generate_copy_corpus", "generate_selection_corpus",
    "oracle_extract", "write_corpus",
]
