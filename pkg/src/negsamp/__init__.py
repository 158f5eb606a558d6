"""Negative-sampling embeddings of discrete joint distributions and
unnormalized language models (NCE / NEG / NEGLM) with exact perplexity
evaluation."""

from .config import TrainConfig
from .corpus import Vocabulary, build_vocab, encode_stream, make_batches
from .distlab import (
    DivergenceError,
    FactorPair,
    JointDistribution,
    PmiMatrix,
    ScoreConfig,
    cond_score,
    exact_gradient,
    kl_gap,
    mixture_q,
    pmi_matrix,
    posterior,
    score,
    train_exact,
    train_sampled,
)
from .encoder import EncoderSpec, grad_check
from .estimators import JointEmbedding, NegSamplingLanguageModel
from .lm import (
    LanguageModel,
    batch_loss,
    classifier_logit,
    conditional_log_probs,
    evaluate,
    perplexity,
    rank_augment_check,
    train,
)
from .modelfile import FactorModel, load_model, save_model
from .sampling import NoiseDistribution, build_noise

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "Vocabulary",
    "build_vocab",
    "encode_stream",
    "make_batches",
    "DivergenceError",
    "FactorPair",
    "JointDistribution",
    "PmiMatrix",
    "ScoreConfig",
    "cond_score",
    "exact_gradient",
    "kl_gap",
    "mixture_q",
    "pmi_matrix",
    "posterior",
    "score",
    "train_exact",
    "train_sampled",
    "EncoderSpec",
    "grad_check",
    "JointEmbedding",
    "NegSamplingLanguageModel",
    "LanguageModel",
    "batch_loss",
    "classifier_logit",
    "conditional_log_probs",
    "evaluate",
    "perplexity",
    "rank_augment_check",
    "train",
    "FactorModel",
    "load_model",
    "save_model",
    "NoiseDistribution",
    "build_noise",
    "__version__",
]
