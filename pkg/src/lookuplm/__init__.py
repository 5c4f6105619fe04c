"""Transformer LM with a hashed lookup-dictionary memory for long-tail prediction."""

from .config import RunConfig, TrainConfig
from .corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    TailSet,
    TokenFrequencyTable,
    Vocabulary,
    build_frequency_table,
    extract_tail,
    ngram_counts,
    tail_error_rate,
    tokenize,
)
from .evaluate import EvalReport, attention_entropy, information_gain, perplexity
from .memory import DictConfig, LookupDictionary, index, update_ratio
from .model import ModelConfig, TransformerLM
from .rescore import FusionConfig, Hypothesis, rescore, score_sequence
from .training import run_training, train_step

__version__ = "0.1.0"
