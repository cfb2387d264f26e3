import json

import numpy as np
import pytest

from _reference import fd_gate_grad
from seass.model import ModelConfig, ModelParams
from seass.saliency import saliency_csv, saliency_map
from seass.tensor import relative_error
from seass.text import EOS

SRC, SUMMARY = [4, 5, 6, 7, 8], [9, 10, EOS]


def test_gradient_matches_finite_differences(tiny_cfg, tiny_params):
    sal = saliency_map(SRC, SUMMARY, tiny_params, tiny_cfg)
    fd = fd_gate_grad(SRC, SUMMARY, tiny_params, tiny_cfg)
    assert np.max(relative_error(sal.gate_grad, fd)) <= 1e-4


def test_norms_and_normalization(tiny_cfg, tiny_params):
    sal = saliency_map(SRC, SUMMARY, tiny_params, tiny_cfg)
    np.testing.assert_allclose(sal.raw, np.linalg.norm(sal.gate_grad, axis=1))
    assert sal.normalized.max() == 1.0 and np.all(sal.normalized >= 0)
    assert sal.raw.shape == (len(SRC),)


def test_gate_off_model_still_has_saliency(tiny_params):
    cfg = ModelConfig(src_vocab=12, tgt_vocab=12, emb_dim=8, enc_hidden=8, dec_hidden=8, use_gate=False)
    sal = saliency_map(SRC, SUMMARY, tiny_params, cfg)
    assert np.all(np.isfinite(sal.raw)) and sal.raw.max() > 0


def test_does_not_mutate_params(tiny_cfg, tiny_params):
    before = tiny_params.copy()
    saliency_map(SRC, SUMMARY, tiny_params, tiny_cfg)
    assert all(np.array_equal(before.arrays[k], a) for k, a in tiny_params.items())


def test_rejects_bad_input(tiny_cfg, tiny_params):
    with pytest.raises(ValueError):
        saliency_map(SRC, [], tiny_params, tiny_cfg)
    with pytest.raises(ValueError):
        saliency_map([], SUMMARY, tiny_params, tiny_cfg)
    with pytest.raises(IndexError):
        saliency_map(SRC, [99], tiny_params, tiny_cfg)


def test_outputs(tiny_cfg, tiny_params):
    sal = saliency_map(SRC, SUMMARY, tiny_params, tiny_cfg)
    tokens = ["a", "b", "c", "d", "e"]
    rec = json.loads(sal.to_json(tokens))
    assert rec["tokens"] == tokens and len(rec["normalized"]) == 5
    lines = saliency_csv([(tokens, sal)]).splitlines()
    assert lines[0] == "sentence,position,token,raw,normalized" and len(lines) == 6


def test_zero_gradient_normalizes_to_zero():
    cfg = ModelConfig(src_vocab=8, tgt_vocab=8, emb_dim=4, enc_hidden=4, dec_hidden=4)
    p = ModelParams.zeros(cfg)
    sal = saliency_map([4, 5], [EOS], p, cfg)
    assert np.all(sal.normalized == 0)
