"""ROUGE-1/2/L scoring with Porter stemming, byte truncation, multi-reference max
aggregation and a source-length bucket report."""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence

# ---------------------------------------------------------------------------
# Porter (1980) stemmer


def _is_cons(w: str, i: int) -> bool:
    c = w[i]
    if c in "aeiou":
        return False
    if c == "y":
        return i == 0 or not _is_cons(w, i - 1)
    return True


def _measure(stem: str) -> int:
    """Number of VC sequences in ``[C](VC)^m[V]``."""
    m, prev_vowel = 0, False
    for i in range(len(stem)):
        cons = _is_cons(stem, i)
        if cons and prev_vowel:
            m += 1
        prev_vowel = not cons
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_cons(stem, i) for i in range(len(stem)))


def _double_cons(w: str) -> bool:
    return len(w) >= 2 and w[-1] == w[-2] and _is_cons(w, len(w) - 1)


def _cvc(w: str) -> bool:
    if len(w) < 3:
        return False
    return (
        _is_cons(w, len(w) - 3) and not _is_cons(w, len(w) - 2) and _is_cons(w, len(w) - 1)
        and w[-1] not in "wxy"
    )


_STEP2 = [
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"), ("izer", "ize"),
    ("abli", "able"), ("alli", "al"), ("entli", "ent"), ("eli", "e"), ("ousli", "ous"),
    ("ization", "ize"), ("ation", "ate"), ("ator", "ate"), ("alism", "al"), ("iveness", "ive"),
    ("fulness", "ful"), ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
]
_STEP3 = [
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"), ("ical", "ic"), ("ful", ""), ("ness", ""),
]
_STEP4 = [
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion", "ou",
    "ism", "ate", "iti", "ous", "ive", "ize",
]


def _longest(w: str, suffixes):
    best = None
    for item in suffixes:
        suf = item[0] if isinstance(item, tuple) else item
        if w.endswith(suf) and (best is None or len(suf) > len(best[0] if isinstance(best, tuple) else best)):
            best = item
    return best


def _replace_rules(w: str, rules, min_m: int) -> str:
    rule = _longest(w, rules)
    if rule is None:
        return w
    suf, rep = rule
    stem = w[: len(w) - len(suf)]
    return stem + rep if _measure(stem) > min_m else w


def porter_stem(token: str) -> str:
    """Porter's original suffix-stripping algorithm; non-alphabetic tokens pass through."""
    w = token
    if len(w) <= 2 or not (w.isascii() and w.isalpha() and w.islower()):
        return w

    # 1a
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    # 1b
    second_or_third = False
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    elif w.endswith("ed") and _has_vowel(w[:-2]):
        w, second_or_third = w[:-2], True
    elif w.endswith("ing") and _has_vowel(w[:-3]):
        w, second_or_third = w[:-3], True
    if second_or_third:
        if w.endswith(("at", "bl", "iz")):
            w += "e"
        elif _double_cons(w) and w[-1] not in "lsz":
            w = w[:-1]
        elif _measure(w) == 1 and _cvc(w):
            w += "e"

    # 1c
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    w = _replace_rules(w, _STEP2, 0)
    w = _replace_rules(w, _STEP3, 0)

    # 4
    suf = _longest(w, _STEP4)
    if suf is not None:
        stem = w[: len(w) - len(suf)]
        if _measure(stem) > 1 and (suf != "ion" or stem.endswith(("s", "t"))):
            w = stem

    # 5a
    if w.endswith("e"):
        stem = w[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _cvc(stem)):
            w = stem
    # 5b
    if _measure(w) > 1 and _double_cons(w) and w.endswith("l"):
        w = w[:-1]
    return w


# ---------------------------------------------------------------------------
# scores


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: float, cand_total: float, ref_total: float) -> "RougeScore":
        p = overlap / cand_total if cand_total > 0 else 0.0
        r = overlap / ref_total if ref_total > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)

    def get(self, mode: str) -> float:
        return {"f1": self.f1, "recall": self.recall, "precision": self.precision}[mode]

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[Hashable], reference: Sequence[Hashable], n: int = 2) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    c, r = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((c & r).values())
    return RougeScore.from_counts(overlap, sum(c.values()), sum(r.values()))


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


METRICS = ("rouge1", "rouge2", "rougeL")


def score_pair(candidate, reference, metric: str) -> RougeScore:
    if metric == "rougeL":
        return rouge_l(candidate, reference)
    if metric.startswith("rouge") and metric[5:].isdigit():
        return rouge_n(candidate, reference, int(metric[5:]))
    raise ValueError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# corpus level


@dataclass
class EvalConfig:
    metrics: tuple[str, ...] = METRICS
    mode: str = "f1"
    byte_cap: int | None = None
    stem: bool = False
    bucket_width: int | None = None

    def __post_init__(self):
        if self.mode not in ("f1", "recall"):
            raise ValueError("mode must be 'f1' or 'recall'")
        if self.byte_cap is not None and self.byte_cap <= 0:
            raise ValueError("byte_cap must be positive")
        if self.bucket_width is not None and self.bucket_width <= 0:
            raise ValueError("bucket_width must be positive")
        for m in self.metrics:
            score_pair([], [], m)


def truncate_bytes(tokens: Sequence[str], cap: int) -> list[str]:
    """Tokens lying wholly inside the first ``cap`` bytes of the space-joined text."""
    out, used = [], 0
    for i, tok in enumerate(tokens):
        end = used + (1 if i else 0) + len(tok.encode("utf-8"))
        if end > cap:
            break
        out.append(tok)
        used = end
    return out


@dataclass
class Bucket:
    start: int
    end: int
    count: int
    mean_rouge2_f1: float


@dataclass
class CorpusReport:
    scores: dict[str, RougeScore]
    per_line: dict[str, list[RougeScore]] = field(repr=False, default_factory=dict)
    buckets: list[Bucket] | None = None

    def to_json(self) -> dict:
        return {m: s.as_dict() for m, s in self.scores.items()}

    def buckets_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bucket_start", "bucket_end", "count", "mean_rouge2_f1"])
        for b in self.buckets or []:
            w.writerow([b.start, b.end, b.count, f"{b.mean_rouge2_f1:.6f}"])
        return buf.getvalue()


def _prepare(tokens, cfg: EvalConfig, candidate: bool):
    tokens = list(tokens)
    if candidate and cfg.byte_cap is not None:
        tokens = truncate_bytes([str(t) for t in tokens], cfg.byte_cap)
    if cfg.stem:
        tokens = [porter_stem(t) if isinstance(t, str) else t for t in tokens]
    return tokens


def score_corpus(candidates, references, cfg: EvalConfig | None = None, lengths=None) -> CorpusReport:
    """Score line-aligned candidates against one or more references per line.

    Each line takes the best reference under ``cfg.mode``; the corpus score is
    the mean over lines of precision, recall and F1 separately.
    """
    cfg = cfg or EvalConfig()
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidate lines but {len(references)} reference lines")
    if lengths is not None and len(lengths) != len(candidates):
        raise ValueError(f"{len(lengths)} source lengths for {len(candidates)} lines")
    per_line: dict[str, list[RougeScore]] = {m: [] for m in cfg.metrics}
    bucket_metric = []
    for i, (cand, refs) in enumerate(zip(candidates, references)):
        if not refs:
            raise ValueError(f"line {i + 1} has no reference")
        c = _prepare(cand, cfg, True)
        rs = [_prepare(r, cfg, False) for r in refs]
        for m in cfg.metrics:
            per_line[m].append(max((score_pair(c, r, m) for r in rs), key=lambda s: s.get(cfg.mode)))
        if lengths is not None:
            bucket_metric.append(max(score_pair(c, r, "rouge2").f1 for r in rs))
    n = len(candidates)
    scores = {}
    for m, lines in per_line.items():
        if n == 0:
            scores[m] = RougeScore(0.0, 0.0, 0.0)
        else:
            scores[m] = RougeScore(
                sum(s.precision for s in lines) / n, sum(s.recall for s in lines) / n, sum(s.f1 for s in lines) / n
            )
    report = CorpusReport(scores, per_line)
    if lengths is not None:
        width = cfg.bucket_width or 4
        groups: dict[int, list[float]] = {}
        for length, f in zip(lengths, bucket_metric):
            groups.setdefault(int(length) // width * width, []).append(f)
        report.buckets = [
            Bucket(start, start + width - 1, len(v), sum(v) / len(v)) for start, v in sorted(groups.items())
        ]
    return report


__all__ = [
    "porter_stem", "RougeScore", "rouge_n", "rouge_l", "lcs_length", "EvalConfig", "CorpusReport",
    "Bucket", "score_corpus", "truncate_bytes", "METRICS",
]
