"""Selective-encoding encoder/decoder: BiGRU encoder, selective gate, attention GRU decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, Mapping

import numpy as np

from . import tensor as T
from .tensor import GruWeights, Var
from .text import BOS, Batch


class NonFiniteLossError(FloatingPointError):
    def __init__(self, value, batch_index=None):
        self.value = value
        self.batch_index = batch_index
        where = "" if batch_index is None else f" at batch {batch_index}"
        super().__init__(f"non-finite loss {value}{where}")


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    emb_dim: int = 300
    enc_hidden: int = 512
    dec_hidden: int = 512
    attn_dim: int | None = None
    dropout: float = 0.5
    use_gate: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.attn_dim is None:
            self.attn_dim = self.dec_hidden
        for name in ("src_vocab", "tgt_vocab", "emb_dim", "enc_hidden", "dec_hidden", "attn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        np.dtype(self.dtype)

    @property
    def readout_dim(self) -> int:
        return 2 * self.dec_hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    E, H, D, A = cfg.emb_dim, cfg.enc_hidden, cfg.dec_hidden, cfg.attn_dim
    H2 = 2 * H
    shapes = {
        "src_emb": (cfg.src_vocab, E),
        "tgt_emb": (cfg.tgt_vocab, E),
    }
    for d in ("enc_fwd", "enc_bwd"):
        for g in ("Wz", "Wr", "Wh"):
            shapes[f"{d}.{g}"] = (H, E + H)
    shapes.update({
        "gate.Ws": (H2, H2),
        "gate.Us": (H2, H2),
        "gate.b": (H2,),
        "init.Wd": (D, H),
        "init.b": (D,),
    })
    for g in ("Wz", "Wr", "Wh"):
        shapes[f"dec.{g}"] = (D, E + H2 + D)
    shapes.update({
        "attn.Wa": (A, D),
        "attn.Ua": (A, H2),
        "attn.va": (A,),
        "readout.Wr": (2 * D, E),
        "readout.Ur": (2 * D, H2),
        "readout.Vr": (2 * D, D),
        "out.Wo": (cfg.tgt_vocab, D),
    })
    return shapes


class ModelParams:
    """Named trainable arrays, each registered once, in a fixed order."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self.arrays: dict[str, np.ndarray] = dict(arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def bind(self, tape: T.Tape | None = None) -> dict[str, Var]:
        if tape is None:
            return {k: T.const(v) for k, v in self.arrays.items()}
        return {k: tape.var(v) for k, v in self.arrays.items()}

    def check(self, cfg: ModelConfig) -> None:
        expected = param_shapes(cfg)
        if set(expected) != set(self.arrays):
            raise ValueError(f"parameter names differ from config: {sorted(set(expected) ^ set(self.arrays))}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise T.ShapeError(f"{name} has shape {self.arrays[name].shape}, expected {shape}")

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "ModelParams":
        dt = np.dtype(cfg.dtype)
        return cls({k: np.zeros(s, dtype=dt) for k, s in param_shapes(cfg).items()})

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator, scale: float = 1.0) -> "ModelParams":
        """Xavier-Gaussian weights, ``N(0, 2 / (fan_in + fan_out))``; biases zero."""
        dt = np.dtype(cfg.dtype)
        arrays = {}
        for name, shape in param_shapes(cfg).items():
            if name.endswith(".b"):
                arrays[name] = np.zeros(shape, dtype=dt)
                continue
            fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
            std = scale * np.sqrt(2.0 / (fan_in + fan_out))
            arrays[name] = (rng.standard_normal(shape) * std).astype(dt)
        return cls(arrays)


Params = Mapping[str, Var]


def _vars(params) -> Params:
    return params.bind() if isinstance(params, ModelParams) else params


def _gru(p: Params, prefix: str) -> GruWeights:
    return GruWeights(p[f"{prefix}.Wz"], p[f"{prefix}.Wr"], p[f"{prefix}.Wh"], name=prefix)


@dataclass
class EncodedSentence:
    h: Var  # (B, n, 2H): [forward; backward] per word
    s: Var  # (B, 2H): [backward state at word 1; forward state at word n]
    h_gated: Var  # (B, n, 2H)
    gate: Var  # (B, n, 2H)
    mask: np.ndarray  # (B, n)
    bwd_first: Var  # (B, H), initializes the decoder
    keys: Var  # (B, n, A): U_a applied to the gated states, reused every step

    @property
    def n(self) -> int:
        return self.mask.shape[1]


@dataclass
class DecoderStep:
    state: Var
    context: Var
    attention: Var
    logits: Var

    @property
    def distribution(self) -> np.ndarray:
        return T._softmax(self.logits.value)


def apply_selective_gate(h: Var, s: Var, params: Params, gate_override=None) -> tuple[Var, Var]:
    """Per-word sigmoid gate conditioned on the sentence vector; returns ``(h_gated, gate)``.

    ``gate_override`` substitutes a given gate value, either an array or a Var
    (used to differentiate or perturb with respect to the gate itself).
    """
    p = _vars(params)
    if h.shape[-1] != s.shape[-1]:
        raise T.ShapeError(f"word states {h.shape} and sentence vector {s.shape} disagree")
    if gate_override is not None:
        gate = gate_override if isinstance(gate_override, Var) else T.const(np.asarray(gate_override))
        if gate.shape != h.shape:
            raise T.ShapeError(f"gate override {gate.shape} does not match states {h.shape}")
    else:
        sent = T.linear(s, p["gate.Us"], p["gate.b"])
        sent = T.reshape(sent, (sent.shape[0], 1, sent.shape[1]))
        gate = T.sigmoid(T.add(T.linear(h, p["gate.Ws"]), sent))
    return T.mul(h, gate), gate


def encode_sentence(
    src: np.ndarray,
    params,
    cfg: ModelConfig,
    mask: np.ndarray | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
    gate_override=None,
) -> EncodedSentence:
    """Run the BiGRU over ``src`` ids (``(n,)`` or ``(B, n)``) and apply the selective gate."""
    p = _vars(params)
    src = np.atleast_2d(np.asarray(src))
    B, n = src.shape
    if n == 0:
        raise ValueError("cannot encode an empty source")
    if src.min() < 0 or src.max() >= cfg.src_vocab:
        raise IndexError(f"source id out of range [0, {cfg.src_vocab})")
    dt = p["src_emb"].value.dtype
    mask = np.ones((B, n), dtype=dt) if mask is None else np.asarray(mask, dtype=dt)
    emb = T.dropout(T.embedding(p["src_emb"], src), cfg.dropout, rng, train)
    H = cfg.enc_hidden
    zero = T.const(np.zeros((B, H), dtype=dt))

    fwd_w, bwd_w = _gru(p, "enc_fwd"), _gru(p, "enc_bwd")
    fwd, state = [], zero
    for t in range(n):
        state = T.gru_cell_forward(T.take(emb, t), state, fwd_w, mask[:, t])
        fwd.append(state)
    bwd, state = [None] * n, zero
    for t in reversed(range(n)):
        state = T.gru_cell_forward(T.take(emb, t), state, bwd_w, mask[:, t])
        bwd[t] = state
    # padding holds the forward state, so fwd[-1] is the state at each row's last word
    h = T.concat([T.stack(fwd, axis=1), T.stack(bwd, axis=1)], axis=-1)
    s = T.concat([bwd[0], fwd[-1]], axis=-1)
    if cfg.use_gate or gate_override is not None:
        h_gated, gate = apply_selective_gate(h, s, p, gate_override)
    else:
        h_gated, gate = h, T.const(np.ones(h.shape, dtype=dt))
    keys = T.linear(h_gated, p["attn.Ua"])
    return EncodedSentence(h=h, s=s, h_gated=h_gated, gate=gate, mask=mask, bwd_first=bwd[0], keys=keys)


def initial_state(enc: EncodedSentence, params) -> tuple[Var, Var]:
    """Decoder start: ``s_0 = tanh(W_d h_bwd_1 + b)``, zero context."""
    p = _vars(params)
    s0 = T.tanh(T.linear(enc.bwd_first, p["init.Wd"], p["init.b"]))
    c0 = T.const(np.zeros((enc.mask.shape[0], enc.h_gated.shape[-1]), dtype=s0.value.dtype))
    return s0, c0


def decode_step(
    prev_word: np.ndarray,
    prev_state: Var,
    prev_context: Var,
    enc: EncodedSentence,
    params,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> DecoderStep:
    p = _vars(params)
    prev_word = np.atleast_1d(np.asarray(prev_word))
    if prev_state.shape[-1] != cfg.dec_hidden:
        raise T.ShapeError(f"decoder state has dim {prev_state.shape[-1]}, expected {cfg.dec_hidden}")
    w = T.dropout(T.embedding(p["tgt_emb"], prev_word), cfg.dropout, rng, train)
    state = T.gru_cell_forward(T.concat([w, prev_context], axis=-1), prev_state, _gru(p, "dec"))

    # energies use the previous decoder state
    query = T.linear(prev_state, p["attn.Wa"])
    query = T.reshape(query, (query.shape[0], 1, query.shape[1]))
    energies = T.inner(T.tanh(T.add(query, enc.keys)), p["attn.va"])
    alpha = T.softmax(energies, enc.mask)
    context = T.weighted_sum(alpha, enc.h_gated)

    r = T.add(T.add(T.linear(w, p["readout.Wr"]), T.linear(context, p["readout.Ur"])), T.linear(state, p["readout.Vr"]))
    m = T.dropout(T.maxout_pairs(r), cfg.dropout, rng, train)
    logits = T.linear(m, p["out.Wo"])
    return DecoderStep(state=state, context=context, attention=alpha, logits=logits)


def teacher_forced_nll(
    src, src_mask, tgt, tgt_mask, params, cfg: ModelConfig, train=False, rng=None, gate_override=None
) -> tuple[Var, EncodedSentence]:
    """Summed (not averaged) masked NLL of ``tgt`` given ``src``; BOS is prepended internally."""
    p = _vars(params)
    enc = encode_sentence(src, p, cfg, src_mask, train, rng, gate_override)
    tgt = np.atleast_2d(np.asarray(tgt))
    tgt_mask = np.ones(tgt.shape) if tgt_mask is None else np.asarray(tgt_mask)
    if tgt.size and (tgt.min() < 0 or tgt.max() >= cfg.tgt_vocab):
        raise IndexError(f"target id out of range [0, {cfg.tgt_vocab})")
    state, context = initial_state(enc, p)
    prev = np.full(tgt.shape[0], BOS)
    terms = []
    for t in range(tgt.shape[1]):
        step = decode_step(prev, state, context, enc, p, cfg, train, rng)
        terms.append(T.nll(step.logits, tgt[:, t], tgt_mask[:, t]))
        state, context, prev = step.state, step.context, tgt[:, t]
    return T.total(terms), enc


def sequence_nll(batch: Batch, params, cfg: ModelConfig, train=False, rng=None, batch_index=None) -> Var:
    """Teacher-forced loss averaged over the sequences in the batch."""
    loss, _ = teacher_forced_nll(batch.src, batch.src_mask, batch.tgt, batch.tgt_mask, params, cfg, train, rng)
    loss = T.scale(loss, 1.0 / len(batch))
    if not np.isfinite(loss.value):
        raise NonFiniteLossError(float(loss.value), batch_index)
    return loss


def sequence_logprobs(src, targets, params, cfg: ModelConfig) -> np.ndarray:
    """Per-sequence log p(y|x) for several targets of one source, by teacher forcing."""
    from .text import pad_sequences

    tgt, tmask = pad_sequences(targets)
    src = np.tile(np.atleast_2d(np.asarray(src)), (len(targets), 1))
    p = _vars(params)
    enc = encode_sentence(src, p, cfg)
    state, context = initial_state(enc, p)
    prev = np.full(len(targets), BOS)
    out = np.zeros(len(targets))
    rows = np.arange(len(targets))
    for t in range(tgt.shape[1]):
        step = decode_step(prev, state, context, enc, p, cfg)
        out += T.log_softmax_np(step.logits.value)[rows, tgt[:, t]] * tmask[:, t]
        state, context, prev = step.state, step.context, tgt[:, t]
    return out


__all__ = [
    "ModelConfig", "ModelParams", "EncodedSentence", "DecoderStep", "NonFiniteLossError",
    "param_shapes", "encode_sentence", "apply_selective_gate", "initial_state", "decode_step",
    "sequence_nll", "teacher_forced_nll", "sequence_logprobs",
]
