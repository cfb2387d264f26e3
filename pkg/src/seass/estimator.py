"""scikit-learn style wrapper around the full pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_corpus
from .decode import DecodeConfig, beam_decode, greedy_decode_batch
from .model import ModelConfig
from .rouge import EvalConfig, score_corpus
from .saliency import saliency_map
from .text import EOS, build_vocabulary, encode_pairs, encode_sequence, normalize_token_stream
from .train import OptimizerConfig, training_run


class SelectiveSummarizer(BaseEstimator):
    """Selective-encoding sentence summarizer.

    ``fit`` takes source documents and reference summaries (strings or token
    lists) and trains from scratch; ``predict`` returns space-joined
    summaries. Setting ``use_gate=False`` gives the plain attention baseline.

    Parameters mirror :class:`~seass.model.ModelConfig`,
    :class:`~seass.train.OptimizerConfig` and
    :class:`~seass.decode.DecodeConfig`. When no dev set is passed to
    ``fit``, ``validation_fraction`` of the training pairs is held out.
    """

    def __init__(
        self,
        emb_dim=300,
        enc_hidden=512,
        dec_hidden=512,
        attn_dim=None,
        dropout=0.5,
        use_gate=True,
        min_count=5,
        normalize=True,
        batch_size=64,
        max_steps=10000,
        learning_rate=0.001,
        clip_range=5.0,
        eval_every=2000,
        patience=12,
        beam_size=12,
        max_len=30,
        fixed_len=None,
        suppress_unk=False,
        validation_fraction=0.05,
        random_state=0,
    ):
        self.emb_dim = emb_dim
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.attn_dim = attn_dim
        self.dropout = dropout
        self.use_gate = use_gate
        self.min_count = min_count
        self.normalize = normalize
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.learning_rate = learning_rate
        self.clip_range = clip_range
        self.eval_every = eval_every
        self.patience = patience
        self.beam_size = beam_size
        self.max_len = max_len
        self.fixed_len = fixed_len
        self.suppress_unk = suppress_unk
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _prep(self, docs):
        return [normalize_token_stream(d) for d in docs] if self.normalize else docs

    def fit(self, X, y, X_dev=None, y_dev=None):
        X, y = check_corpus(X, y)
        X, y = self._prep(X), self._prep(y)
        seed = 0 if self.random_state is None else int(self.random_state)
        if X_dev is None:
            rng = np.random.default_rng(seed)
            order = rng.permutation(len(X))
            n_dev = max(1, int(round(self.validation_fraction * len(X)))) if len(X) > 1 else 0
            dev_idx, tr_idx = order[:n_dev], order[n_dev:]
            dev = [(X[i], y[i]) for i in dev_idx]
            train = [(X[i], y[i]) for i in tr_idx] or dev
        else:
            Xd, yd = check_corpus(X_dev, y_dev)
            dev = list(zip(self._prep(Xd), self._prep(yd)))
            train = list(zip(X, y))

        self.src_vocab_ = build_vocabulary((s for s, _ in train), self.min_count)
        self.tgt_vocab_ = build_vocabulary((t for _, t in train), self.min_count)
        self.model_config_ = ModelConfig(
            src_vocab=len(self.src_vocab_), tgt_vocab=len(self.tgt_vocab_), emb_dim=self.emb_dim,
            enc_hidden=self.enc_hidden, dec_hidden=self.dec_hidden, attn_dim=self.attn_dim,
            dropout=self.dropout, use_gate=self.use_gate,
        )
        opt = OptimizerConfig(
            alpha=self.learning_rate, clip_range=self.clip_range, batch_size=self.batch_size,
            eval_every=self.eval_every, patience=self.patience, max_steps=self.max_steps,
            log_wallclock=False, dev_max_len=self.max_len,
        )
        result = training_run(
            self.model_config_, opt,
            encode_pairs(train, self.src_vocab_, self.tgt_vocab_),
            encode_pairs(dev, self.src_vocab_, self.tgt_vocab_),
            seed=seed,
        )
        self.params_ = result.best_params
        self.final_params_ = result.params
        self.train_state_ = result.state
        self.log_ = result.log
        return self

    def _decode_config(self) -> DecodeConfig:
        return DecodeConfig(beam_size=self.beam_size, max_len=self.max_len, fixed_len=self.fixed_len,
                            suppress_unk=self.suppress_unk)

    def predict_ids(self, X) -> list[list[int]]:
        check_is_fitted(self, "params_")
        X = self._prep(check_corpus(X))
        srcs = [encode_sequence(x, self.src_vocab_, "source") for x in X]
        dcfg = self._decode_config()
        if dcfg.beam_size == 1:
            return greedy_decode_batch(srcs, self.params_, self.model_config_, dcfg)
        return [beam_decode(s, self.params_, self.model_config_, dcfg)[0].tokens for s in srcs]

    def predict(self, X) -> list[str]:
        return [" ".join(self.tgt_vocab_.decode(ids)) for ids in self.predict_ids(X)]

    def score(self, X, y) -> float:
        """Mean ROUGE-2 F1 of the predictions against ``y``."""
        X, y = check_corpus(X, y)
        cands = [p.split() for p in self.predict(X)]
        report = score_corpus(cands, [[t] for t in self._prep(y)], EvalConfig(metrics=("rouge2",)))
        return report.scores["rouge2"].f1

    def saliency(self, X, y=None):
        """Gate saliency maps; summaries default to the model's own predictions."""
        check_is_fitted(self, "params_")
        X = self._prep(check_corpus(X))
        if y is None:
            summaries = [ids + [EOS] for ids in self.predict_ids(X)]
        else:
            _, y = check_corpus(X, y)
            summaries = [encode_sequence(t, self.tgt_vocab_, "target") for t in self._prep(y)]
        return [
            saliency_map(encode_sequence(x, self.src_vocab_, "source"), s, self.params_, self.model_config_)
            for x, s in zip(X, summaries)
        ]
