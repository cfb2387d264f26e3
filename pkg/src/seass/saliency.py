"""Gate saliency: gradient norm of the summary log-probability with respect to each word's gate."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import ModelConfig, ModelParams, encode_sentence, teacher_forced_nll


@dataclass
class SaliencyMap:
    raw: np.ndarray  # (n,) gradient norms
    normalized: np.ndarray  # raw / max(raw), or zeros
    gate_grad: np.ndarray  # (n, 2H) dS/dgate

    def to_json(self, tokens: Sequence[str] | None = None) -> str:
        return json.dumps({
            "tokens": list(tokens) if tokens is not None else None,
            "raw": [float(x) for x in self.raw],
            "normalized": [float(x) for x in self.normalized],
        })


def summary_score(src: Sequence[int], summary: Sequence[int], params: ModelParams, cfg: ModelConfig, gate=None) -> float:
    """Teacher-forced log p(summary | src); ``gate`` optionally replaces the computed gate."""
    src = np.asarray([list(src)])
    tgt = np.asarray([list(summary)])
    loss, _ = teacher_forced_nll(src, None, tgt, None, params.bind(), cfg, gate_override=gate)
    return -float(loss.value)


def saliency_map(src: Sequence[int], summary: Sequence[int], params: ModelParams, cfg: ModelConfig) -> SaliencyMap:
    """One backward pass from the summary log-probability to the gate vectors.

    The gate is computed normally, then re-entered as a leaf so that the
    derivative stops there rather than flowing into the encoder weights.
    """
    if len(summary) == 0:
        raise ValueError("summary must be nonempty")
    if len(src) == 0:
        raise ValueError("source must be nonempty")
    p = params.bind()
    src_arr = np.asarray([list(src)])
    tgt_arr = np.asarray([list(summary)])
    if tgt_arr.max() >= cfg.tgt_vocab or tgt_arr.min() < 0:
        raise IndexError("summary id out of range")
    if cfg.use_gate:
        gate_value = encode_sentence(src_arr, p, cfg).gate.value
    else:
        gate_value = np.ones((1, len(src), 2 * cfg.enc_hidden), dtype=np.dtype(cfg.dtype))
    tape = T.Tape()
    gate = tape.var(gate_value.copy())
    loss, _ = teacher_forced_nll(src_arr, None, tgt_arr, None, p, cfg, gate_override=gate)
    if loss.tape is tape:
        tape.backward(loss)
    # loss is -S_y
    g = -T.grad_of(gate)[0]
    raw = np.linalg.norm(g, axis=-1)
    top = raw.max()
    normalized = raw / top if top > 0 else np.zeros_like(raw)
    return SaliencyMap(raw=raw, normalized=normalized, gate_grad=g)


def saliency_csv(rows: Sequence[tuple[Sequence[str], SaliencyMap]]) -> str:
    """Long-form matrix: one line per (sentence, position) for heat-map plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sentence", "position", "token", "raw", "normalized"])
    for k, (tokens, sal) in enumerate(rows):
        for i, tok in enumerate(tokens):
            w.writerow([k, i, tok, f"{sal.raw[i]:.8g}", f"{sal.normalized[i]:.6f}"])
    return buf.getvalue()


__all__ = ["SaliencyMap", "saliency_map", "summary_score", "saliency_csv"]
