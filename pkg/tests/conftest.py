import numpy as np
import pytest

from seass.model import ModelConfig, ModelParams
from seass.text import collate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(src_vocab=12, tgt_vocab=12, emb_dim=8, enc_hidden=8, dec_hidden=8, dropout=0.0)


@pytest.fixture
def tiny_params(tiny_cfg, rng):
    return ModelParams.init(tiny_cfg, rng)


@pytest.fixture
def tiny_batch():
    # ragged on both sides so masking is exercised
    return collate([([4, 5, 6, 7], [8, 9, 10, 2]), ([5, 6], [4, 2]), ([11], [7, 7, 2])])


_CRITERIA: dict[str, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert."""

    def check(number, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[str(number)] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
