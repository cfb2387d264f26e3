"""Adam training loop with value clipping, dev-driven learning-rate halving and checkpoints."""
from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from ._io import atomic_write_bytes, atomic_write_text
from .decode import DecodeConfig, greedy_decode_batch
from .model import ModelConfig, ModelParams, NonFiniteLossError, sequence_nll
from .rouge import rouge_n
from .text import EOS, Batch, make_batches

logger = logging.getLogger(__name__)

MAGIC = b"SEASSCKPT"
FORMAT_VERSION = 1


@dataclass
class OptimizerConfig:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_range: float = 5.0
    batch_size: int = 64
    eval_every: int = 2000
    patience: int = 12
    max_steps: int = 10000
    log_every: int = 100
    log_wallclock: bool = True
    dev_max_len: int = 30

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.clip_range <= 0:
            raise ValueError("clip_range must be positive")
        for name in ("batch_size", "eval_every", "patience", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "OptimizerConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class TrainState:
    alpha: float
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    bad_evals: int = 0
    best_score: float | None = None

    @classmethod
    def fresh(cls, params: ModelParams, alpha: float) -> "TrainState":
        return cls(
            alpha=alpha,
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
        )

    def record_dev(self, score: float, patience: int) -> bool:
        """Track a dev score; halve alpha after ``patience`` straight evaluations below the best.

        Returns True when this evaluation triggered a halving.
        """
        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.bad_evals = 0
            return False
        if score < self.best_score:
            self.bad_evals += 1
        else:
            self.bad_evals = 0
        if self.bad_evals >= patience:
            self.alpha /= 2.0
            self.bad_evals = 0
            return True
        return False

    def schedule(self) -> dict:
        return {"alpha": self.alpha, "bad_evals": self.bad_evals, "best_score": self.best_score}


def clip_gradients(grads: Mapping[str, np.ndarray], clip_range: float = 5.0) -> dict[str, np.ndarray]:
    """Clamp every gradient element into ``[-clip_range, clip_range]``."""
    if clip_range <= 0:
        raise ValueError("clip_range must be positive")
    return {k: np.clip(g, -clip_range, clip_range) for k, g in grads.items()}


def adam_update(params: ModelParams, state: TrainState, grads: Mapping[str, np.ndarray], cfg: OptimizerConfig) -> None:
    """One bias-corrected Adam step, in place on ``params`` and ``state``."""
    t = state.step + 1
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    updates = {}
    for name, g in grads.items():
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        delta = state.alpha * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if not np.all(np.isfinite(delta)):
            raise FloatingPointError(f"non-finite Adam update for {name}")
        updates[name] = (m, v, delta)
    for name, (m, v, delta) in updates.items():
        state.m[name], state.v[name] = m, v
        params.arrays[name] -= delta
    state.step = t


def loss_and_grads(params: ModelParams, batch: Batch, cfg: ModelConfig, train: bool = True, rng=None, batch_index=None):
    tape = T.Tape()
    leaves = params.bind(tape)
    loss = sequence_nll(batch, leaves, cfg, train, rng, batch_index)
    tape.backward(loss)
    return float(loss.value), {k: T.grad_of(v) for k, v in leaves.items()}


def dev_rouge2(params: ModelParams, cfg: ModelConfig, dev_pairs, max_len: int = 30, chunk: int = 256) -> float:
    """Mean ROUGE-2 F1 of greedy outputs against the gold targets, in id space."""
    if not dev_pairs:
        return 0.0
    dcfg = DecodeConfig(beam_size=1, max_len=max_len)
    order = sorted(range(len(dev_pairs)), key=lambda i: len(dev_pairs[i][0]))
    total = 0.0
    for i in range(0, len(order), chunk):
        idx = order[i : i + chunk]
        outs = greedy_decode_batch([dev_pairs[j][0] for j in idx], params, cfg, dcfg)
        for j, out in zip(idx, outs):
            gold = [t for t in dev_pairs[j][1] if t != EOS]
            total += rouge_n(out, gold, 2).f1
    return total / len(dev_pairs)


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    state: TrainState
    model_config: ModelConfig
    train_config: OptimizerConfig | None = None
    extra: dict = field(default_factory=dict)


def _le(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))


def save_checkpoint(path, params: ModelParams, state: TrainState, model_config: ModelConfig,
                    train_config: OptimizerConfig | None = None, extra: dict | None = None) -> None:
    arrays = [(k, a) for k, a in params.items()]
    arrays += [(f"adam.m.{k}", state.m[k]) for k, _ in params.items()]
    arrays += [(f"adam.v.{k}", state.v[k]) for k, _ in params.items()]
    entries, blobs, offset = [], [], 0
    for name, a in arrays:
        blob = _le(a).tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": a.dtype.name, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "model_config": model_config.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "arrays": entries,
        "schedule": state.schedule(),
        "step": state.step,
        "alpha": state.alpha,
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    data = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(blobs)
    atomic_write_bytes(path, data)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        if len(data) < len(MAGIC) and MAGIC.startswith(data):
            raise CorruptCheckpointError(f"corrupt checkpoint {path}: truncated header")
        raise BadMagicError(f"{path} is not a checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 12:
        raise CorruptCheckpointError(f"corrupt checkpoint {path}: truncated header")
    version, head_len = struct.unpack_from("<IQ", data, pos)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path} has format version {version}, expected {FORMAT_VERSION}")
    pos += 12
    if len(data) < pos + head_len:
        raise CorruptCheckpointError(f"corrupt checkpoint {path}: truncated manifest")
    try:
        manifest = json.loads(data[pos : pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"corrupt checkpoint {path}: unreadable manifest") from exc
    base = pos + head_len
    arrays = {}
    for e in manifest["arrays"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        if int(np.prod(e["shape"], dtype=np.int64)) * dt.itemsize != e["nbytes"]:
            raise ShapeMismatchError(f"manifest entry {e['name']}: shape {e['shape']} disagrees with {e['nbytes']} bytes")
        start = base + e["offset"]
        if start + e["nbytes"] > len(data):
            raise CorruptCheckpointError(f"corrupt checkpoint {path}: array {e['name']} is truncated")
        a = np.frombuffer(data, dtype=dt, count=int(np.prod(e["shape"], dtype=np.int64)), offset=start)
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.dtype(e["dtype"]))
    cfg = ModelConfig.from_dict(manifest["model_config"])
    if expected_config is not None:
        from .model import param_shapes

        for name, shape in param_shapes(expected_config).items():
            got = arrays.get(name)
            if got is None:
                raise ShapeMismatchError(f"array {name} missing from checkpoint")
            if tuple(got.shape) != tuple(shape):
                raise ShapeMismatchError(f"array {name} has shape {tuple(got.shape)} in checkpoint, config expects {tuple(shape)}")
        cfg = expected_config
    names = [e["name"] for e in manifest["arrays"] if not e["name"].startswith("adam.")]
    params = ModelParams({k: arrays[k] for k in names})
    sched = manifest["schedule"]
    state = TrainState(
        alpha=float(manifest["alpha"]),
        m={k: arrays[f"adam.m.{k}"] for k in names},
        v={k: arrays[f"adam.v.{k}"] for k in names},
        step=int(manifest["step"]),
        bad_evals=int(sched["bad_evals"]),
        best_score=sched["best_score"],
    )
    tc = manifest.get("train_config")
    return Checkpoint(params, state, cfg, None if tc is None else OptimizerConfig.from_dict(tc), manifest.get("extra", {}))


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    params: ModelParams
    state: TrainState
    log: list[dict]
    best_params: ModelParams
    initial_loss: float | None = None


class _BatchSchedule:
    """Deterministic batch for any global step: epoch ``e`` is shuffled with ``(seed, e)``."""

    def __init__(self, pairs, batch_size: int, seed: int):
        self.pairs, self.batch_size, self.seed = pairs, batch_size, seed
        self.n = -(-len(pairs) // batch_size)
        self._epoch, self._batches = None, None

    def __call__(self, step: int) -> Batch:
        epoch, i = divmod(step, self.n)
        if epoch != self._epoch:
            self._batches = list(make_batches(self.pairs, self.batch_size, shuffle_seed=[self.seed, epoch]))
            self._epoch = epoch
        return self._batches[i]


def training_run(
    model_cfg: ModelConfig,
    opt_cfg: OptimizerConfig,
    train_pairs: Sequence,
    dev_pairs: Sequence,
    seed: int = 0,
    out_dir=None,
    resume: Checkpoint | None = None,
    evaluate: Callable[[ModelParams], float] | None = None,
    init_params: ModelParams | None = None,
) -> TrainResult:
    """Train until ``opt_cfg.max_steps`` updates.

    Every ``eval_every`` updates the dev score (greedy ROUGE-2 F1 unless
    ``evaluate`` is given) drives the halving schedule, and the best model is
    written to ``out_dir/best.ckpt``. ``out_dir/last.ckpt`` always holds the
    latest good state; ``out_dir/metrics.jsonl`` receives the log.
    """
    if not train_pairs:
        raise ValueError("training corpus is empty")
    if not dev_pairs and evaluate is None:
        raise ValueError("dev set is empty")
    evaluate = evaluate or (lambda p: dev_rouge2(p, model_cfg, dev_pairs, opt_cfg.dev_max_len))
    out_dir = None if out_dir is None else Path(out_dir)

    if resume is not None:
        params, state = resume.params.copy(), resume.state
        state = TrainState(state.alpha, {k: a.copy() for k, a in state.m.items()},
                           {k: a.copy() for k, a in state.v.items()}, state.step, state.bad_evals, state.best_score)
    else:
        params = init_params.copy() if init_params is not None else ModelParams.init(model_cfg, np.random.default_rng([seed, 0]))
        state = TrainState.fresh(params, opt_cfg.alpha)
    params.check(model_cfg)
    best_params = params.copy()
    if resume is not None and out_dir is not None and (out_dir / "best.ckpt").exists():
        try:
            best_params = load_checkpoint(out_dir / "best.ckpt", model_cfg).params
        except CheckpointError:
            logger.warning("ignoring unreadable %s", out_dir / "best.ckpt")

    batches = _BatchSchedule(list(train_pairs), opt_cfg.batch_size, seed)
    log: list[dict] = []
    log_lines: list[str] = []
    start = time.perf_counter()
    initial_loss = None

    def emit(record: dict) -> None:
        if opt_cfg.log_wallclock:
            record["wallclock"] = round(time.perf_counter() - start, 3)
        log.append(record)
        log_lines.append(json.dumps(record, sort_keys=True))

    def flush() -> None:
        if out_dir is not None:
            atomic_write_text(out_dir / "metrics.jsonl", "".join(l + "\n" for l in log_lines))

    def save(name: str, p: ModelParams) -> None:
        if out_dir is not None:
            save_checkpoint(out_dir / name, p, state, model_cfg, opt_cfg, {"seed": seed})

    if resume is not None and out_dir is not None and (out_dir / "metrics.jsonl").exists():
        with open(out_dir / "metrics.jsonl", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["step"] <= state.step:
                    log.append(rec)
                    log_lines.append(line.rstrip("\n"))

    while state.step < opt_cfg.max_steps:
        step = state.step
        batch = batches(step)
        rng = np.random.default_rng([seed, 1, step])
        try:
            loss, grads = loss_and_grads(params, batch, model_cfg, True, rng, batch_index=step)
        except NonFiniteLossError:
            save("last.ckpt", params)
            flush()
            raise
        if initial_loss is None:
            initial_loss = loss
        adam_update(params, state, clip_gradients(grads, opt_cfg.clip_range), opt_cfg)
        record = None
        if state.step % opt_cfg.log_every == 0 or state.step == 1:
            record = {"step": state.step, "loss": loss, "dev_rouge2": None, "alpha": state.alpha}
        if state.step % opt_cfg.eval_every == 0:
            score = float(evaluate(params))
            improved = state.best_score is None or score > state.best_score
            halved = state.record_dev(score, opt_cfg.patience)
            if improved:
                best_params = params.copy()
                save("best.ckpt", params)
            if halved:
                logger.info("step %d: halving alpha to %g", state.step, state.alpha)
            record = {"step": state.step, "loss": loss, "dev_rouge2": score, "alpha": state.alpha}
        if record is not None:
            emit(record)
    if state.best_score is None:
        best_params = params.copy()
        save("best.ckpt", params)
    save("last.ckpt", params)
    flush()
    return TrainResult(params, state, log, best_params, initial_loss)


__all__ = [
    "OptimizerConfig", "TrainState", "clip_gradients", "adam_update", "loss_and_grads", "dev_rouge2",
    "save_checkpoint", "load_checkpoint", "Checkpoint", "CheckpointError", "CorruptCheckpointError",
    "BadMagicError", "VersionMismatchError", "ShapeMismatchError", "training_run", "TrainResult",
]
