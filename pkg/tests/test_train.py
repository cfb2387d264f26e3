import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seass.model import ModelConfig, ModelParams, NonFiniteLossError
from seass.train import (
    MAGIC, BadMagicError, CorruptCheckpointError, OptimizerConfig, ShapeMismatchError, TrainState,
    VersionMismatchError, adam_update, clip_gradients, dev_rouge2, load_checkpoint, loss_and_grads,
    save_checkpoint, training_run,
)
from seass.text import EOS, collate

CFG = ModelConfig(src_vocab=10, tgt_vocab=10, emb_dim=4, enc_hidden=4, dec_hidden=4, dropout=0.3)


def _pairs(n=24, seed=0):
    rs = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        src = rs.integers(4, 10, size=int(rs.integers(1, 6))).tolist()
        out.append((src, src[:2] + [EOS]))
    return out


def _opt(**kw):
    base = dict(batch_size=5, max_steps=12, eval_every=4, log_every=2, log_wallclock=False, dev_max_len=4)
    base.update(kw)
    return OptimizerConfig(**base)


class TestClip:
    def test_clamps(self):
        g = clip_gradients({"w": np.array([-7.0, -5.0, 0.3, 5.0, 12.0])}, 5.0)
        np.testing.assert_array_equal(g["w"], [-5, -5, 0.3, 5, 5])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.floats(0.1, 10))
    def test_idempotent_within_range(self, xs, c):
        once = clip_gradients({"w": np.array(xs)}, c)["w"]
        assert np.all(np.abs(once) <= c)
        np.testing.assert_array_equal(clip_gradients({"w": once}, c)["w"], once)

    def test_bad_range(self):
        with pytest.raises(ValueError):
            clip_gradients({}, 0.0)


class TestAdam:
    def test_first_step_is_sign_times_alpha(self):
        p = ModelParams({"w": np.array([1.0, 1.0, 1.0])})
        s = TrainState.fresh(p, 0.01)
        adam_update(p, s, {"w": np.array([0.5, -3.0, 0.0])}, OptimizerConfig())
        np.testing.assert_allclose(p.arrays["w"], [0.99, 1.01, 1.0], atol=1e-9)
        assert s.step == 1

    def test_matches_hand_computed_second_step(self):
        cfg = OptimizerConfig(alpha=0.1)
        p = ModelParams({"w": np.array([0.0])})
        s = TrainState.fresh(p, cfg.alpha)
        adam_update(p, s, {"w": np.array([2.0])}, cfg)
        adam_update(p, s, {"w": np.array([1.0])}, cfg)
        m = 0.9 * 0.1 * 2.0 + 0.1 * 1.0
        v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0
        first = 0.1 * 2.0 / (2.0 + 1e-8)
        second = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        assert abs(p.arrays["w"][0] - (-first - second)) < 1e-12

    def test_non_finite_rejected_without_mutation(self):
        p = ModelParams({"a": np.ones(2), "b": np.ones(2)})
        s = TrainState.fresh(p, 0.01)
        with pytest.raises(FloatingPointError):
            adam_update(p, s, {"a": np.ones(2), "b": np.array([np.nan, 1.0])}, OptimizerConfig())
        np.testing.assert_array_equal(p.arrays["a"], 1.0)
        assert s.step == 0


class TestSchedule:
    @pytest.mark.parametrize(
        "scores,patience,expected",
        [
            ([0.5, 0.4, 0.3], 2, [False, False, True]),
            ([0.5, 0.4, 0.5, 0.4], 2, [False, False, False, False]),
            ([0.5, 0.4, 0.5, 0.4, 0.3], 2, [False, False, False, False, True]),
            ([0.5] + [0.1] * 6, 3, [False, False, False, True, False, False, True]),
        ],
    )
    def test_halving_points(self, scores, patience, expected):
        s = TrainState.fresh(ModelParams({}), 1.0)
        assert [s.record_dev(x, patience) for x in scores] == expected

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), max_size=40), st.integers(1, 5))
    def test_alpha_never_increases(self, scores, patience):
        s = TrainState.fresh(ModelParams({}), 1.0)
        prev = s.alpha
        for x in scores:
            halved = s.record_dev(x, patience)
            assert s.alpha == (prev / 2 if halved else prev)
            prev = s.alpha


class TestCheckpoint:
    def _save(self, path):
        p = ModelParams.init(CFG, np.random.default_rng(0))
        s = TrainState.fresh(p, 0.001)
        s.step, s.bad_evals, s.best_score = 7, 1, 0.25
        save_checkpoint(path, p, s, CFG, OptimizerConfig(), {"seed": 3})
        return p, s

    def test_round_trip(self, tmp_path):
        p, s = self._save(tmp_path / "c.ckpt")
        ck = load_checkpoint(tmp_path / "c.ckpt", CFG)
        for k, a in p.items():
            assert np.array_equal(ck.params.arrays[k], a)
        assert (ck.state.step, ck.state.bad_evals, ck.state.best_score) == (7, 1, 0.25)
        assert ck.model_config == CFG and ck.extra == {"seed": 3}

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOTACHECKPOINT" + b"\0" * 20)
        with pytest.raises(BadMagicError):
            load_checkpoint(tmp_path / "x")

    def test_version(self, tmp_path):
        self._save(tmp_path / "c.ckpt")
        data = bytearray((tmp_path / "c.ckpt").read_bytes())
        struct.pack_into("<I", data, len(MAGIC), 99)
        (tmp_path / "c.ckpt").write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError):
            load_checkpoint(tmp_path / "c.ckpt")

    @pytest.mark.parametrize("keep", [5, len(MAGIC) + 6, len(MAGIC) + 40, -10])
    def test_truncated(self, tmp_path, keep):
        self._save(tmp_path / "c.ckpt")
        data = (tmp_path / "c.ckpt").read_bytes()
        (tmp_path / "c.ckpt").write_bytes(data[:keep])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / "c.ckpt")

    def test_shape_mismatch(self, tmp_path):
        self._save(tmp_path / "c.ckpt")
        bigger = ModelConfig(src_vocab=10, tgt_vocab=10, emb_dim=4, enc_hidden=6, dec_hidden=4)
        with pytest.raises(ShapeMismatchError, match="enc_fwd"):
            load_checkpoint(tmp_path / "c.ckpt", bigger)


class TestTrainingRun:
    def test_loss_decreases(self):
        cfg = ModelConfig(src_vocab=10, tgt_vocab=10, emb_dim=8, enc_hidden=8, dec_hidden=8, dropout=0.0)
        pairs = _pairs(40)
        batch = collate(pairs)
        p0 = ModelParams.init(cfg, np.random.default_rng([0, 0]))
        before, _ = loss_and_grads(p0, batch, cfg, train=False)
        res = training_run(cfg, _opt(max_steps=150, eval_every=1000, batch_size=8), pairs, pairs, seed=0)
        after, _ = loss_and_grads(res.params, batch, cfg, train=False)
        assert after < 0.7 * before

    def test_same_seed_same_log(self, tmp_path):
        a = training_run(CFG, _opt(), _pairs(), _pairs(6, 1), seed=5, out_dir=tmp_path / "a")
        b = training_run(CFG, _opt(), _pairs(), _pairs(6, 1), seed=5, out_dir=tmp_path / "b")
        c = training_run(CFG, _opt(), _pairs(), _pairs(6, 1), seed=6)
        assert a.log == b.log and a.log != c.log
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()

    def test_resume_reproduces_losses(self, tmp_path):
        full = training_run(CFG, _opt(max_steps=12), _pairs(), _pairs(6, 1), seed=2, out_dir=tmp_path / "full")
        training_run(CFG, _opt(max_steps=6), _pairs(), _pairs(6, 1), seed=2, out_dir=tmp_path / "part")
        ck = load_checkpoint(tmp_path / "part" / "last.ckpt", CFG)
        resumed = training_run(CFG, _opt(max_steps=12), _pairs(), _pairs(6, 1), seed=2, out_dir=tmp_path / "part", resume=ck)
        assert resumed.log == full.log
        for k, a in full.params.items():
            assert np.array_equal(resumed.params.arrays[k], a)
        for k, a in full.best_params.items():
            assert np.array_equal(resumed.best_params.arrays[k], a)

    def test_log_records(self, tmp_path):
        res = training_run(CFG, _opt(log_wallclock=True), _pairs(), _pairs(6, 1), seed=0, out_dir=tmp_path)
        lines = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
        assert [r["step"] for r in lines] == [1, 2, 4, 6, 8, 10, 12]
        assert all(set(r) == {"step", "loss", "dev_rouge2", "alpha", "wallclock"} for r in lines)
        assert [r["dev_rouge2"] is not None for r in lines] == [False, False, True, False, True, False, True]
        assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
        assert res.state.step == 12

    def test_injected_scores_drive_alpha(self):
        scores = iter([0.5, 0.4, 0.3, 0.2])
        res = training_run(CFG, _opt(max_steps=16, patience=2), _pairs(), [], seed=0, evaluate=lambda p: next(scores))
        alphas = [r["alpha"] for r in res.log if r["dev_rouge2"] is not None]
        assert alphas == [0.001, 0.001, 0.0005, 0.0005]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_keeps_last_checkpoint(self, tmp_path):
        bad = ModelParams.init(CFG, np.random.default_rng(0))
        bad.arrays["out.Wo"][:] = np.inf
        with pytest.raises(NonFiniteLossError):
            training_run(CFG, _opt(), _pairs(), _pairs(4), seed=0, out_dir=tmp_path, init_params=bad)
        assert (tmp_path / "last.ckpt").exists()

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            training_run(CFG, _opt(), [], _pairs(3))
        with pytest.raises(ValueError):
            training_run(CFG, _opt(), _pairs(3), [])

    def test_dev_rouge2_range(self):
        p = ModelParams.init(CFG, np.random.default_rng(0))
        assert 0.0 <= dev_rouge2(p, CFG, _pairs(5), max_len=4) <= 1.0


def test_repeated_batch_loss_non_increasing():
    cfg = ModelConfig(src_vocab=10, tgt_vocab=10, emb_dim=8, enc_hidden=8, dec_hidden=8, dropout=0.0)
    batch = collate(_pairs(8))
    p = ModelParams.init(cfg, np.random.default_rng(0))
    opt = OptimizerConfig()
    s = TrainState.fresh(p, opt.alpha)
    losses = []
    for _ in range(50):
        loss, grads = loss_and_grads(p, batch, cfg, train=False)
        losses.append(loss)
        adam_update(p, s, clip_gradients(grads), opt)
    assert all(b <= a * 1.05 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_dev_evaluation_does_not_mutate(tiny_cfg, tiny_params):
    before = tiny_params.copy()
    dev_rouge2(tiny_params, tiny_cfg, [([4, 5, 6], [7, 8, EOS])] * 3, max_len=5)
    assert all(np.array_equal(before.arrays[k], a) for k, a in tiny_params.items())


def test_schedule_example_ten_nine_nine():
    s = TrainState.fresh(ModelParams({}), 1.0)
    assert [s.record_dev(x, 2) for x in (10, 9, 9)] == [False, False, True]
    assert s.alpha == 0.5
