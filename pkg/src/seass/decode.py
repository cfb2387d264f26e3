"""Greedy and beam-search generation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import EncodedSentence, ModelConfig, decode_step, encode_sentence, initial_state
from .text import BOS, EOS, PAD, UNK, pad_sequences


@dataclass
class DecodeConfig:
    beam_size: int = 12
    max_len: int = 30
    min_len: int = 0
    fixed_len: int | None = None
    suppress_unk: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 0 or self.min_len < 0:
            raise ValueError("lengths must be non-negative")
        if self.fixed_len is not None and self.fixed_len < 0:
            raise ValueError("fixed_len must be non-negative")
        if self.min_len > self.max_len and self.fixed_len is None:
            raise ValueError("min_len cannot exceed max_len")

    @property
    def length_limits(self) -> tuple[int, int]:
        """``(min_words, max_tokens)``; max_tokens counts the EOS."""
        if self.fixed_len is not None:
            return self.fixed_len, self.fixed_len + 1
        return self.min_len, self.max_len


@dataclass
class Hypothesis:
    tokens: list[int]  # generated ids, EOS excluded
    logprob: float
    finished: bool  # ended with EOS (False when cut off at max_len)
    state: np.ndarray | None = field(default=None, repr=False)
    context: np.ndarray | None = field(default=None, repr=False)

    @property
    def length(self) -> int:
        """Generated token count, EOS included."""
        return len(self.tokens) + (1 if self.finished else 0)

    @property
    def score(self) -> float:
        return self.logprob / self.length if self.length else 0.0


def _step_logprobs(logits: np.ndarray, n_words: int, min_words: int, max_tokens: int, fixed: bool, suppress_unk: bool):
    """Log-probabilities from the full softmax, with disallowed tokens set to -inf."""
    logp = T.log_softmax_np(logits)
    logp[:, PAD] = -np.inf
    logp[:, BOS] = -np.inf
    if suppress_unk:
        logp[:, UNK] = -np.inf
    if n_words < min_words:
        logp[:, EOS] = -np.inf
    elif fixed and n_words >= min_words:
        eos = logp[:, EOS].copy()
        logp[:] = -np.inf
        logp[:, EOS] = eos
    return logp


def _tile(enc: EncodedSentence, rows: np.ndarray) -> EncodedSentence:
    pick = lambda v: T.const(v.value[rows])  # noqa: E731
    return EncodedSentence(
        h=pick(enc.h), s=pick(enc.s), h_gated=pick(enc.h_gated), gate=pick(enc.gate),
        mask=enc.mask[rows], bwd_first=pick(enc.bwd_first), keys=pick(enc.keys),
    )


def greedy_decode_batch(srcs: Sequence[Sequence[int]], params, cfg: ModelConfig, dcfg: DecodeConfig | None = None) -> list[list[int]]:
    """Argmax decoding for many sources at once; EOS is stripped from the outputs."""
    dcfg = dcfg or DecodeConfig(beam_size=1)
    min_words, max_tokens = dcfg.length_limits
    if not srcs:
        return []
    p = params.bind() if hasattr(params, "bind") else params
    src, mask = pad_sequences(srcs)
    enc = encode_sentence(src, p, cfg, mask)
    state, context = initial_state(enc, p)
    B = len(srcs)
    prev = np.full(B, BOS)
    out: list[list[int]] = [[] for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    for t in range(max_tokens):
        step = decode_step(prev, state, context, enc, p, cfg)
        logp = _step_logprobs(step.logits.value, t, min_words, max_tokens, dcfg.fixed_len is not None, dcfg.suppress_unk)
        best = np.argmax(logp, axis=1)
        for b in np.flatnonzero(~done):
            if best[b] == EOS:
                done[b] = True
            else:
                out[b].append(int(best[b]))
        if done.all():
            break
        state, context, prev = step.state, step.context, best
    return out


def greedy_decode(src: Sequence[int], params, cfg: ModelConfig, dcfg: DecodeConfig | None = None) -> list[int]:
    return greedy_decode_batch([src], params, cfg, dcfg)[0]


def beam_decode(src: Sequence[int], params, cfg: ModelConfig, dcfg: DecodeConfig | None = None) -> list[Hypothesis]:
    """Beam search ranked by length-normalized log-probability (EOS counted in the length).

    Partial hypotheses are pruned by cumulative log-probability; ties are broken
    by token ids. Search stops once ``beam_size`` hypotheses have finished or
    the length limit is reached.
    """
    dcfg = dcfg or DecodeConfig()
    K = dcfg.beam_size
    min_words, max_tokens = dcfg.length_limits
    fixed = dcfg.fixed_len is not None
    if max_tokens == 0:
        return [Hypothesis([], 0.0, False)]
    p = params.bind() if hasattr(params, "bind") else params
    enc1 = encode_sentence(np.asarray([list(src)]), p, cfg)
    s0, c0 = initial_state(enc1, p)
    live = [Hypothesis([], 0.0, False, s0.value[0], c0.value[0])]
    finished: list[Hypothesis] = []

    for t in range(max_tokens):
        enc = _tile(enc1, np.zeros(len(live), dtype=int))
        prev = np.array([h.tokens[-1] if h.tokens else BOS for h in live])
        step = decode_step(
            prev, T.const(np.stack([h.state for h in live])), T.const(np.stack([h.context for h in live])), enc, p, cfg
        )
        logp = _step_logprobs(step.logits.value, t, min_words, max_tokens, fixed, dcfg.suppress_unk)
        total = logp + np.array([h.logprob for h in live])[:, None]
        rows, cols = np.nonzero(np.isfinite(total))
        cands = sorted(
            zip(rows.tolist(), cols.tolist()),
            key=lambda rc: (-total[rc], live[rc[0]].tokens + [rc[1]]),
        )
        last = t == max_tokens - 1
        new_live = []
        for rank, (r, c) in enumerate(cands):
            h = live[r]
            if c == EOS or last:
                if rank < K:
                    ended = c == EOS
                    finished.append(Hypothesis(h.tokens + ([] if ended else [c]), float(total[r, c]), ended))
            elif len(new_live) < K:
                new_live.append(Hypothesis(h.tokens + [c], float(total[r, c]), False, step.state.value[r], step.context.value[r]))
            if rank >= K - 1 and len(new_live) >= K:
                break
        live = new_live
        if len(finished) >= K or not live:
            break

    finished.sort(key=lambda h: (-h.score, h.tokens))
    return finished[:K]


__all__ = ["DecodeConfig", "Hypothesis", "greedy_decode", "greedy_decode_batch", "beam_decode"]
