from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seass.rouge import (
    EvalConfig, RougeScore, lcs_length, porter_stem, rouge_l, rouge_n, score_corpus, truncate_bytes,
)

toks = st.lists(st.sampled_from("a b c d e f".split()), max_size=12)


def _brute_lcs(a, b):
    # exhaustive over subsequences of the shorter side
    import itertools

    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), k):
            sub, j = [short[i] for i in idx], 0
            for t in long_:
                if j < k and t == sub[j]:
                    j += 1
            if j == k:
                return k
    return 0


class TestPorter:
    @pytest.mark.parametrize(
        "word,stem",
        [
            ("caresses", "caress"), ("ponies", "poni"), ("ties", "ti"), ("cats", "cat"), ("feed", "feed"),
            ("agreed", "agre"), ("plastered", "plaster"), ("bled", "bled"), ("motoring", "motor"), ("sing", "sing"),
            ("conflated", "conflat"), ("troubled", "troubl"), ("sized", "size"), ("hopping", "hop"),
            ("falling", "fall"), ("hissing", "hiss"), ("filing", "file"), ("happy", "happi"), ("sky", "sky"),
            ("relational", "relat"), ("conditional", "condit"), ("digitizer", "digit"), ("generalization", "gener"),
            ("killed", "kill"), ("kill", "kill"), ("gunman", "gunman"), ("is", "is"), ("as", "as"),
        ],
    )
    def test_known_stems(self, word, stem):
        assert porter_stem(word) == stem

    def test_agrees_with_nltk(self):
        porter = pytest.importorskip("nltk.stem.porter")
        ref = porter.PorterStemmer(mode=porter.PorterStemmer.ORIGINAL_ALGORITHM)
        words = (
            "police officers arrested gunmen yesterday following reports happiness generously operational "
            "adjustable allowance electricity hopefulness formalize sensitivity adoption controlling rolling "
            "agreement dependent irritant replacement adjustment communism activate angularity homologous "
            "effective bowdlerize ceasing probate rate cease controll roll summaries summarization selective "
            "encoding sentences abstractive networks gating mechanisms attention decoder headlines"
        ).split()
        for w in words:
            assert porter_stem(w) == ref.stem(w), w

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=12))
    def test_idempotent_on_short_output(self, w):
        s = porter_stem(w)
        assert len(s) <= len(w) + 1 and s[:1] == w[:1]


class TestFixtures:
    def test_rouge2_counts(self):
        s = rouge_n("a b c d x".split(), "a b c d e f".split(), 2)
        assert Fraction(s.recall).limit_denominator(100) == Fraction(3, 5)
        assert abs(s.recall - 3 / 5) <= 1e-9
        assert abs(s.precision - 3 / 4) <= 1e-9
        assert abs(s.f1 - 2 / 3) <= 1e-9

    def test_rouge_l(self):
        s = rouge_l("police killed the gunman".split(), "police kill the gunman".split())
        assert abs(s.f1 - 0.75) <= 1e-9 and abs(s.recall - 0.75) <= 1e-9

    def test_stemming_merges_forms(self):
        cfg = EvalConfig(metrics=("rougeL",), stem=True)
        r = score_corpus([["police", "killed", "the", "gunman"]], [[["police", "kill", "the", "gunman"]]], cfg)
        assert r.scores["rougeL"].f1 == 1.0

    @pytest.mark.parametrize("n", [1, 2])
    def test_identical_and_disjoint(self, n):
        assert rouge_n("x y z".split(), "x y z".split(), n).f1 == 1.0
        assert rouge_n("x y z".split(), "p q r".split(), n).f1 == 0.0
        assert rouge_l("x y z".split(), "x y z".split()).f1 == 1.0
        assert rouge_l("x y z".split(), "p q r".split()).f1 == 0.0

    def test_clipped_counts(self):
        s = rouge_n("the the the".split(), "the cat".split(), 1)
        assert s.precision == pytest.approx(1 / 3, abs=1e-12) and s.recall == 0.5

    def test_empty(self):
        assert rouge_n([], ["a", "b"], 2) == RougeScore(0.0, 0.0, 0.0)
        assert rouge_n(["a"], ["a"], 2).f1 == 0.0

    def test_byte_truncation(self):
        words = ["abcdefghi"] * 10  # 9 bytes each, 10 bytes per word with the separator
        cut = truncate_bytes(words, 75)
        assert len(cut) == 7 and len(" ".join(cut).encode()) == 69
        assert truncate_bytes(["x" * 75], 75) == ["x" * 75]
        assert truncate_bytes(["x" * 76], 75) == []
        assert truncate_bytes(["é" * 38], 75) == []  # 76 bytes in utf-8

    def test_byte_cap_applies_to_candidates_only(self):
        ref = [["w%d" % i for i in range(40)]]
        cfg = EvalConfig(metrics=("rouge1",), byte_cap=75)
        r = score_corpus([ref[0]], [ref], cfg)
        kept = len(truncate_bytes(ref[0], 75))
        assert r.scores["rouge1"].precision == 1.0
        assert abs(r.scores["rouge1"].recall - kept / 40) <= 1e-12

    def test_multi_reference_max(self):
        cand = "a b c d".split()
        refs = ["x y z w".split(), "a b c d".split(), "a b".split()]
        r = score_corpus([cand], [refs], EvalConfig(metrics=("rouge2",)))
        assert r.scores["rouge2"].f1 == 1.0

    def test_recall_mode_picks_by_recall(self):
        cand = "a b c".split()
        refs = ["a b c d e f g h".split(), "a b".split()]
        f1 = score_corpus([cand], [refs], EvalConfig(metrics=("rouge1",), mode="f1")).scores["rouge1"]
        rec = score_corpus([cand], [refs], EvalConfig(metrics=("rouge1",), mode="recall")).scores["rouge1"]
        assert rec.recall == 1.0
        assert f1.f1 == pytest.approx(0.8)


class TestCorpus:
    def test_mean_over_lines(self):
        r = score_corpus([["a", "b"], ["c", "d"]], [[["a", "b"]], [["x", "y"]]], EvalConfig(metrics=("rouge2",)))
        assert r.scores["rouge2"].f1 == 0.5
        assert len(r.per_line["rouge2"]) == 2

    def test_misaligned(self):
        with pytest.raises(ValueError, match="reference"):
            score_corpus([["a"]], [], EvalConfig())

    def test_line_without_reference(self):
        with pytest.raises(ValueError, match="line 1"):
            score_corpus([["a"]], [[]], EvalConfig())

    def test_empty_corpus(self):
        assert score_corpus([], [], EvalConfig()).scores["rouge2"].f1 == 0.0

    def test_bad_config(self):
        with pytest.raises(ValueError):
            EvalConfig(mode="precision")
        with pytest.raises(ValueError):
            EvalConfig(metrics=("bleu",))

    def test_buckets(self):
        cands = [["a", "b"]] * 4
        refs = [[["a", "b"]], [["x", "y"]], [["a", "b"]], [["a", "b"]]]
        r = score_corpus(cands, refs, EvalConfig(metrics=("rouge2",), bucket_width=4), lengths=[3, 5, 7, 12])
        assert [(b.start, b.end, b.count) for b in r.buckets] == [(0, 3, 1), (4, 7, 2), (12, 15, 1)]
        assert r.buckets[1].mean_rouge2_f1 == 0.5
        assert r.buckets_csv().splitlines()[0] == "bucket_start,bucket_end,count,mean_rouge2_f1"


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(toks, toks)
    def test_bounds_and_symmetry(self, a, b):
        for n in (1, 2):
            s, t = rouge_n(a, b, n), rouge_n(b, a, n)
            assert 0.0 <= s.f1 <= 1.0
            assert s.precision == t.recall and s.f1 == pytest.approx(t.f1)
        assert rouge_l(a, b).f1 == pytest.approx(rouge_l(b, a).f1)

    @settings(max_examples=200, deadline=None)
    @given(toks, toks)
    def test_lcs_against_brute_force(self, a, b):
        a, b = a[:8], b[:8]
        assert lcs_length(a, b) == _brute_lcs(a, b)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from("a b c d".split()), min_size=2, max_size=10))
    def test_identity(self, a):
        assert rouge_n(a, a, 2).f1 == 1.0 and rouge_l(a, a).f1 == 1.0
