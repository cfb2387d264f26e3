"""Selective encoding for abstractive sentence summarization, built on a small numpy autodiff kernel."""
from .decode import DecodeConfig, Hypothesis, beam_decode, greedy_decode, greedy_decode_batch
from .estimator import SelectiveSummarizer
from .model import (
    DecoderStep, EncodedSentence, ModelConfig, ModelParams, apply_selective_gate, decode_step,
    encode_sentence, sequence_nll,
)
from .rouge import EvalConfig, RougeScore, porter_stem, rouge_l, rouge_n, score_corpus
from .saliency import SaliencyMap, saliency_map
from .synth import SynthSpec, copy_spec, generate_copy_corpus, generate_selection_corpus
from .text import Vocabulary, build_vocabulary, encode_sequence, make_batches, normalize_token_stream
from .train import OptimizerConfig, TrainState, load_checkpoint, save_checkpoint, training_run

__version__ = "0.1.0"

__all__ = [
    "DecodeConfig", "Hypothesis", "beam_decode", "greedy_decode", "greedy_decode_batch",
    "SelectiveSummarizer",
    "DecoderStep", "EncodedSentence", "ModelConfig", "ModelParams", "apply_selective_gate", "decode_step",
    "encode_sentence", "sequence_nll",
    "EvalConfig", "RougeScore", "porter_stem", "rouge_l", "rouge_n", "score_corpus",
    "SaliencyMap", "saliency_map",
    "SynthSpec", "copy_spec", "generate_copy_corpus", "generate_selection_corpus",
    "Vocabulary", "build_vocabulary", "encode_sequence", "make_batches", "normalize_token_stream",
    "OptimizerConfig", "TrainState", "load_checkpoint", "save_checkpoint", "training_run",
]
