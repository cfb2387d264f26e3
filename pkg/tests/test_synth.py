from collections import Counter

import pytest
from scipy.stats import chisquare

from seass.rouge import rouge_n
from seass.synth import SynthSpec, copy_spec, generate_copy_corpus, generate_selection_corpus, oracle_extract, write_corpus
from seass.text import read_parallel

SMALL = SynthSpec(n_salient=20, n_noise=20, n_train=600, n_dev=100, n_test=100, seed=3)


@pytest.fixture(scope="module")
def corpus():
    return generate_selection_corpus(SMALL)


def test_sizes(corpus):
    assert (len(corpus.train), len(corpus.dev), len(corpus.test)) == (600, 100, 100)


def test_lengths_and_noise_share(corpus):
    for src, tgt in corpus.train:
        assert SMALL.min_len <= len(src) <= SMALL.max_len
        assert sum(t.startswith("n") for t in src) == round(0.5 * len(src))
        assert len(tgt) == len(src) - SMALL.noise_count(len(src))


def test_targets_never_copy_source(corpus):
    for src, tgt in corpus.train:
        assert not set(src) & set(tgt)


def test_oracle_extractor_is_perfect(corpus):
    for src, tgt in corpus.test:
        assert rouge_n(oracle_extract(src, SMALL), tgt, 2).f1 == 1.0 or len(tgt) < 2


def test_salient_mask_matches_tokens(corpus):
    for (src, _), mask in zip(corpus.dev, corpus.salient_mask["dev"]):
        assert mask == [t.startswith("s") for t in src]


def test_splits_disjoint(corpus):
    seen = [{tuple(s) for s, _ in split} for split in corpus.splits().values()]
    assert not (seen[0] & seen[1]) and not (seen[0] & seen[2]) and not (seen[1] & seen[2])


def test_token_draws_are_uniform(corpus):
    counts = Counter(t for s, _ in corpus.train for t in s if t.startswith("s"))
    assert chisquare([counts[f"s{i}"] for i in range(20)]).pvalue > 1e-3


def test_deterministic():
    a, b = generate_selection_corpus(SMALL), generate_selection_corpus(SMALL)
    assert a.train == b.train
    assert generate_selection_corpus(SynthSpec(**{**SMALL.to_dict(), "seed": 4})).train != a.train


def test_copy_corpus():
    c = generate_copy_corpus(copy_spec(vocab=20, n_train=300, n_dev=20, n_test=20))
    for src, tgt in c.train:
        assert src == tgt and 1 <= len(src) <= 10


@pytest.mark.parametrize(
    "kw",
    [{"noise_ratio": 1.5}, {"min_len": 0}, {"max_len": 5, "min_len": 9}, {"noise_ratio": 1.0},
     {"copy": True, "noise_ratio": 0.5}, {"n_noise": 0}],
)
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        SynthSpec(**kw)


def test_too_small_space():
    with pytest.raises(ValueError, match="distinct"):
        generate_copy_corpus(copy_spec(vocab=2, max_len=2, n_train=50))


def test_selection_rejects_copy_spec():
    with pytest.raises(ValueError):
        generate_selection_corpus(copy_spec())


def test_write_corpus(tmp_path, corpus):
    write_corpus(corpus, tmp_path)
    assert read_parallel(tmp_path / "dev.src.txt", tmp_path / "dev.tgt.txt") == corpus.dev
    assert (tmp_path / "spec.json").exists()
