"""Command line entry point: ``seass {preprocess,gen-synth,train,decode,evaluate,saliency}``.

Every setting has a flat dotted name (``model.emb_dim``, ``train.alpha``,
``decode.beam_size`` ...). Values come from the built-in defaults, then the
JSON file given with ``--config``, then ``--<dotted.name> VALUE`` flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .decode import DecodeConfig, beam_decode, greedy_decode_batch
from .model import ModelConfig
from .rouge import METRICS, EvalConfig, score_corpus
from .saliency import saliency_csv, saliency_map
from .synth import SynthSpec, copy_spec, generate_copy_corpus, generate_selection_corpus, write_corpus
from .text import (
    EOS, Vocabulary, build_vocabulary, encode_pairs, encode_sequence, filter_pairs, normalize_line,
    read_lines, read_parallel, write_parallel,
)
from .train import OptimizerConfig, load_checkpoint, training_run

log = logging.getLogger("seass")


def _section(prefix: str, cls, skip=()) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        default = f.default
        out[f"{prefix}.{f.name}"] = default
    return out


DEFAULTS: dict = {"seed": 0}
DEFAULTS.update(_section("model", ModelConfig, skip=("src_vocab", "tgt_vocab")))
DEFAULTS.update(_section("train", OptimizerConfig))
DEFAULTS.update(_section("decode", DecodeConfig))
DEFAULTS.update({
    "eval.metrics": ",".join(METRICS),
    "eval.mode": "f1",
    "eval.byte_cap": None,
    "eval.stem": False,
    "eval.bucket_width": None,
    "text.min_count": 5,
    "text.min_src_len": 1,
    "text.dev_fraction": 0.05,
})
DEFAULTS.update(_section("synth", SynthSpec, skip=("copy",)))

# keys whose default is None but which hold integers
_OPTIONAL_INT = {"model.attn_dim", "decode.fixed_len", "eval.byte_cap", "eval.bucket_width"}


def _parse_bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _parse_opt_int(s: str):
    return None if str(s).lower() in ("none", "null", "") else int(s)


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if value is None:
        return None
    if key in _OPTIONAL_INT:
        return _parse_opt_int(value) if isinstance(value, str) else int(value)
    if isinstance(default, bool):
        return _parse_bool(value) if isinstance(value, str) else bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _type_for(key: str):
    if key in _OPTIONAL_INT:
        return _parse_opt_int
    d = DEFAULTS[key]
    if isinstance(d, bool):
        return _parse_bool
    if isinstance(d, int):
        return int
    if isinstance(d, float):
        return float
    return str


class RunConfig(dict):
    """Merged settings keyed by dotted name."""

    @classmethod
    def resolve(cls, config_path=None, overrides=None) -> "RunConfig":
        cfg = cls(DEFAULTS)
        if config_path:
            with open(config_path, encoding="utf-8") as fh:
                data = json.load(fh)
            for k, v in data.items():
                if k not in DEFAULTS:
                    raise ValueError(f"unknown config key {k!r} in {config_path}")
                cfg[k] = _coerce(k, v)
        for k, v in (overrides or {}).items():
            cfg[k] = _coerce(k, v)
        return cfg

    def section(self, prefix: str) -> dict:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.items() if k.startswith(prefix + ".")}

    def model_config(self, src_vocab: int, tgt_vocab: int) -> ModelConfig:
        return ModelConfig(src_vocab=src_vocab, tgt_vocab=tgt_vocab, **self.section("model"))

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.section("train"))

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(**self.section("decode"))

    def eval_config(self) -> EvalConfig:
        metrics = tuple(_metric_name(m) for m in str(self["eval.metrics"]).split(",") if m.strip())
        return EvalConfig(metrics=metrics, mode=self["eval.mode"], byte_cap=self["eval.byte_cap"],
                          stem=self["eval.stem"], bucket_width=self["eval.bucket_width"])


def _metric_name(m: str) -> str:
    key = m.strip().lower().replace("-", "").replace("_", "")
    table = {"rouge1": "rouge1", "rouge2": "rouge2", "rougel": "rougeL", "r1": "rouge1", "r2": "rouge2", "rl": "rougeL"}
    if key not in table:
        raise ValueError(f"unknown metric {m!r}")
    return table[key]


# ---------------------------------------------------------------------------
# parser

# canonical short flags and the dotted key they set
_ALIASES = {
    "--seed": "seed",
    "--beam": "decode.beam_size",
    "--fixed-len": "decode.fixed_len",
    "--byte-cap": "eval.byte_cap",
    "--mode": "eval.mode",
    "--buckets": "eval.bucket_width",
    "--metrics": "eval.metrics",
    "--min-count": "text.min_count",
}


def _add_overrides(p: argparse.ArgumentParser, aliases=()):
    g = p.add_argument_group("settings (dotted names, override --config)")
    for key in DEFAULTS:
        g.add_argument(f"--{key}", dest=f"set:{key}", type=_type_for(key), default=argparse.SUPPRESS, metavar="V")
    for flag in aliases:
        key = _ALIASES[flag]
        if flag == f"--{key}":
            continue
        kw = {"choices": ["f1", "recall"]} if flag == "--mode" else {}
        p.add_argument(flag, dest=f"set:{key}", type=_type_for(key), default=argparse.SUPPRESS, **kw)
    p.add_argument("--config", help="JSON file of dotted settings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seass", description="Selective-encoding summarization toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("preprocess", help="normalize a parallel corpus and build vocabularies")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--vocab-src")
    p.add_argument("--vocab-tgt")
    p.add_argument("--no-vocab", action="store_true", help="only normalize (e.g. for dev/test files)")
    _add_overrides(p, ("--min-count",))

    p = sub.add_parser("gen-synth", help="write a synthetic copy or selection corpus")
    p.add_argument("--task", choices=["copy", "selection"], default="selection")
    p.add_argument("--out", required=True)
    _add_overrides(p, ("--seed",))

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--dev-src")
    p.add_argument("--dev-tgt")
    p.add_argument("--vocab-src")
    p.add_argument("--vocab-tgt")
    p.add_argument("--out", required=True, help="run directory (checkpoints, metrics.jsonl)")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--gate", choices=["on", "off"])
    _add_overrides(p, ("--seed", "--min-count"))

    p = sub.add_parser("decode", help="generate summaries")
    p.add_argument("--src", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab-src", required=True)
    p.add_argument("--vocab-tgt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--gate", choices=["on", "off"])
    _add_overrides(p, ("--beam", "--fixed-len"))

    p = sub.add_parser("evaluate", help="ROUGE scores of candidates against references")
    p.add_argument("--cand", required=True)
    p.add_argument("--refs", required=True, help="reference file, or a directory of ref0.txt ... refK.txt")
    p.add_argument("--src", help="source file; enables the length-bucket report")
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--buckets-out", help="bucket CSV path")
    p.add_argument("--stem", dest="set:eval.stem", action="store_const", const=True, default=argparse.SUPPRESS)
    _add_overrides(p, ("--metrics", "--mode", "--byte-cap", "--buckets"))

    p = sub.add_parser("saliency", help="gate saliency per source word")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", help="summaries to attribute; default: the model's greedy output")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab-src", required=True)
    p.add_argument("--vocab-tgt", required=True)
    p.add_argument("--out", required=True, help="JSON lines, one object per sentence")
    p.add_argument("--csv", help="long-form CSV for heat maps")
    p.add_argument("--gate", choices=["on", "off"])
    _add_overrides(p)
    return parser


def _settings(args) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("set:")}
    if getattr(args, "gate", None):
        overrides["model.use_gate"] = args.gate == "on"
    return RunConfig.resolve(getattr(args, "config", None), overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    pairs = read_parallel(args.src, args.tgt)
    pairs = [(normalize_line(" ".join(s)).split(), normalize_line(" ".join(t)).split()) for s, t in pairs]
    kept = filter_pairs(pairs, cfg["text.min_src_len"])
    log.info("kept %d of %d pairs", len(kept), len(pairs))
    write_parallel(kept, out / "source.txt", out / "target.txt")
    if not args.no_vocab:
        build_vocabulary((s for s, _ in kept), cfg["text.min_count"]).save(args.vocab_src or out / "vocab.src.txt")
        build_vocabulary((t for _, t in kept), cfg["text.min_count"]).save(args.vocab_tgt or out / "vocab.tgt.txt")


def cmd_gen_synth(args, cfg: RunConfig) -> None:
    s = cfg.section("synth")
    s["seed"] = cfg["seed"] if "set:seed" in vars(args) else s["seed"]
    if args.task == "copy":
        spec = copy_spec(vocab=s["n_salient"], min_len=s["min_len"], max_len=s["max_len"], n_train=s["n_train"],
                         n_dev=s["n_dev"], n_test=s["n_test"], seed=s["seed"])
        corpus = generate_copy_corpus(spec)
    else:
        corpus = generate_selection_corpus(SynthSpec(**s))
    write_corpus(corpus, args.out)


def _load_vocab_or_build(path, corpus, min_count, fallback: Path) -> Vocabulary:
    if path:
        return Vocabulary.load(path)
    v = build_vocabulary(corpus, min_count)
    v.save(fallback)
    return v


def cmd_train(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = filter_pairs(read_parallel(args.src, args.tgt), cfg["text.min_src_len"])
    if args.dev_src and args.dev_tgt:
        dev = filter_pairs(read_parallel(args.dev_src, args.dev_tgt))
        train = pairs
    elif args.dev_src or args.dev_tgt:
        raise SystemExit(_usage_error("train: --dev-src and --dev-tgt go together"))
    else:
        order = np.random.default_rng(cfg["seed"]).permutation(len(pairs))
        n_dev = max(1, int(round(cfg["text.dev_fraction"] * len(pairs))))
        dev = [pairs[i] for i in order[:n_dev]]
        train = [pairs[i] for i in order[n_dev:]]
    sv = _load_vocab_or_build(args.vocab_src, (s for s, _ in train), cfg["text.min_count"], out / "vocab.src.txt")
    tv = _load_vocab_or_build(args.vocab_tgt, (t for _, t in train), cfg["text.min_count"], out / "vocab.tgt.txt")
    model_cfg = cfg.model_config(len(sv), len(tv))
    resume = load_checkpoint(args.checkpoint, model_cfg) if args.checkpoint else None
    atomic_write_text(out / "config.json", json.dumps(dict(cfg), indent=2, sort_keys=True) + "\n")
    result = training_run(
        model_cfg, cfg.optimizer_config(), encode_pairs(train, sv, tv), encode_pairs(dev, sv, tv),
        seed=cfg["seed"], out_dir=out, resume=resume,
    )
    log.info("finished at step %d, best dev ROUGE-2 %s", result.state.step, result.state.best_score)


def _load_model(args, cfg: RunConfig):
    ckpt = load_checkpoint(args.checkpoint)
    model_cfg = ckpt.model_config
    if getattr(args, "gate", None):
        model_cfg.use_gate = args.gate == "on"
    sv, tv = Vocabulary.load(args.vocab_src), Vocabulary.load(args.vocab_tgt)
    if len(sv) != model_cfg.src_vocab or len(tv) != model_cfg.tgt_vocab:
        raise ValueError("vocabulary sizes do not match the checkpoint")
    return ckpt.params, model_cfg, sv, tv


def cmd_decode(args, cfg: RunConfig) -> None:
    params, model_cfg, sv, tv = _load_model(args, cfg)
    dcfg = cfg.decode_config()
    if args.greedy:
        dcfg.beam_size = 1
    lines = read_lines(args.src)
    srcs = [encode_sequence(l.split(), sv, "source") if l.split() else [EOS] for l in lines]
    if dcfg.beam_size == 1:
        outs = greedy_decode_batch(srcs, params, model_cfg, dcfg)
    else:
        outs = [beam_decode(s, params, model_cfg, dcfg)[0].tokens for s in srcs]
    atomic_write_text(args.out, "".join(" ".join(tv.decode(o)) + "\n" for o in outs))


def _read_refs(path) -> list[list[list[str]]]:
    path = Path(path)
    files = sorted(path.glob("ref*.txt")) if path.is_dir() else [path]
    if not files:
        raise ValueError(f"no ref*.txt files in {path}")
    cols = [read_lines(f) for f in files]
    n = len(cols[0])
    for f, c in zip(files, cols):
        if len(c) != n:
            raise ValueError(f"{f} has {len(c)} lines, expected {n}")
    return [[c[i].split() for c in cols] for i in range(n)]


def cmd_evaluate(args, cfg: RunConfig) -> None:
    ecfg = cfg.eval_config()
    cands = [l.split() for l in read_lines(args.cand)]
    refs = _read_refs(args.refs)
    if len(cands) != len(refs):
        raise ValueError(f"candidate file has {len(cands)} lines, references have {len(refs)}")
    lengths = None
    if ecfg.bucket_width is not None:
        if not args.src:
            raise ValueError("--buckets needs --src for source lengths")
        lengths = [len(l.split()) for l in read_lines(args.src)]
    report = score_corpus(cands, refs, ecfg, lengths)
    text = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        atomic_write_text(args.out, text)
    if lengths is not None:
        csv_text = report.buckets_csv()
        if args.buckets_out:
            atomic_write_text(args.buckets_out, csv_text)
        else:
            sys.stderr.write(csv_text)


def cmd_saliency(args, cfg: RunConfig) -> None:
    params, model_cfg, sv, tv = _load_model(args, cfg)
    src_lines = [l.split() for l in read_lines(args.src)]
    srcs = [encode_sequence(s, sv, "source") for s in src_lines]
    if args.tgt:
        tgt_lines = read_lines(args.tgt)
        if len(tgt_lines) != len(srcs):
            raise ValueError("--src and --tgt differ in length")
        sums = [encode_sequence(t.split(), tv, "target") for t in tgt_lines]
    else:
        dcfg = cfg.decode_config()
        sums = [o + [EOS] for o in greedy_decode_batch(srcs, params, model_cfg, dcfg)]
    rows = []
    for toks, s, y in zip(src_lines, srcs, sums):
        rows.append((toks, saliency_map(s, y, params, model_cfg)))
    atomic_write_text(args.out, "".join(sal.to_json(toks) + "\n" for toks, sal in rows))
    if args.csv:
        atomic_write_text(args.csv, saliency_csv(rows))


COMMANDS = {
    "preprocess": cmd_preprocess,
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "saliency": cmd_saliency,
}


def _usage_error(msg: str) -> int:
    build_parser().print_usage(sys.stderr)
    sys.stderr.write(f"seass: error: {msg}\n")
    return 2


def run(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _settings(args)
        COMMANDS[args.command](args, cfg)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"seass {args.command}: error: {exc}\n")
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
