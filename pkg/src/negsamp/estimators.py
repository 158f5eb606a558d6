"""Scikit-learn style estimators wrapping the functional core.

``JointEmbedding`` fits factor tables to an explicit joint probability
matrix; ``NegSamplingLanguageModel`` fits a language model to raw text.
Both follow the BaseEstimator contract (constructor stores parameters
verbatim, fitted attributes carry trailing underscores, ``get_params`` /
``set_params`` / ``clone`` work), so they compose with pipelines and
parameter search.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import distlab, lm
from .config import TrainConfig
from .corpus import build_vocab, encode_stream
from .distlab import JointDistribution, ScoreConfig
from .encoder import EncoderSpec
from .sampling import build_noise

__all__ = ["JointEmbedding", "NegSamplingLanguageModel"]


class JointEmbedding(BaseEstimator):
    """Low-rank embedding of a discrete joint distribution.

    ``fit`` expects an (n_x, n_y) joint probability table.  The exact
    method runs full-batch gradient ascent on the embedding score; the
    sampled method draws pairs from the table and trains from the stream
    the way the large-scale algorithm would.
    """

    def __init__(
        self,
        d: int = 4,
        k: int = 1,
        method: str = "exact",
        steps: int = 10_000,
        lr: float = 50.0,
        n_pairs: int = 500_000,
        epochs: int = 1,
        batch_size: int = 512,
        sgd_lr: float = 0.5,
        alpha: float = 1.0,
        seed: int = 0,
    ):
        self.d = d
        self.k = k
        self.method = method
        self.steps = steps
        self.lr = lr
        self.n_pairs = n_pairs
        self.epochs = epochs
        self.batch_size = batch_size
        self.sgd_lr = sgd_lr
        self.alpha = alpha
        self.seed = seed

    def fit(self, X, y=None):
        if self.method not in ("exact", "sampled"):
            raise ValueError(f"method must be 'exact' or 'sampled', got {self.method!r}")
        dist = X if isinstance(X, JointDistribution) else JointDistribution(X)
        cfg = ScoreConfig(k=self.k)
        if self.method == "exact":
            factors = distlab.train_exact(
                dist, cfg, self.d, steps=self.steps, lr=self.lr, seed=self.seed
            )
        else:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed).spawn(1)[0])
            flat = rng.choice(dist.n_x * dist.n_y, size=self.n_pairs, p=dist.p.ravel())
            pairs = np.stack(np.unravel_index(flat, dist.p.shape), axis=1)
            counts = np.bincount(pairs[:, 1], minlength=dist.n_y)
            noise = build_noise(counts, self.alpha)
            opt = TrainConfig(
                optimizer="sgd_decay",
                lr=self.sgd_lr,
                decay_factor=2.0,
                decay_start_epoch=max(1, self.epochs // 2),
                epochs=self.epochs,
                batch_size=self.batch_size,
                k=self.k,
                alpha=self.alpha,
                seed=self.seed,
            )
            factors = distlab.train_sampled(pairs, cfg, noise, self.d, opt)
        self.factors_ = factors
        self.x_embedding_ = factors.x_table
        self.y_embedding_ = factors.y_table
        self.score_ = distlab.score(dist, cfg, factors)
        if dist.full_support:
            pmi = distlab.pmi_matrix(dist, cfg)
            self.pmi_score_ = distlab.score(dist, cfg, pmi)
            self.kl_gap_ = distlab.kl_gap(dist, cfg, factors.matrix())
        else:
            self.pmi_score_ = None
            self.kl_gap_ = None
        return self

    def transform(self, X):
        """Learned log-odds scores for an (n, 2) array of (x, y) index pairs."""
        check_is_fitted(self, "factors_")
        pairs = np.asarray(X, dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValueError("expected an (n, 2) array of index pairs")
        return np.einsum(
            "nd,nd->n", self.x_embedding_[pairs[:, 0]], self.y_embedding_[pairs[:, 1]]
        )

    def score(self, X, y=None) -> float:
        """Embedding score of the fitted factors under a joint table."""
        check_is_fitted(self, "factors_")
        dist = X if isinstance(X, JointDistribution) else JointDistribution(X)
        return distlab.score(dist, ScoreConfig(k=self.k), self.factors_)


class NegSamplingLanguageModel(BaseEstimator):
    """Language model estimator over newline-delimited tokenized text."""

    def __init__(
        self,
        mode: str = "neglm",
        encoder_kind: str = "window",
        embedding_dim: int = 32,
        hidden_dim: int = 32,
        layers: int = 1,
        window_size: int = 1,
        dropout: float = 0.0,
        optimizer: str = "sgd_decay",
        lr: float = 0.5,
        decay_factor: float = 1.2,
        decay_start_epoch: int = 6,
        epochs: int = 10,
        clip_norm: float = 5.0,
        batch_size: int = 20,
        unroll: int = 20,
        k: int = 10,
        alpha: float = 0.75,
        max_vocab: int | None = None,
        min_count: int | None = None,
        seed: int = 0,
    ):
        self.mode = mode
        self.encoder_kind = encoder_kind
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.layers = layers
        self.window_size = window_size
        self.dropout = dropout
        self.optimizer = optimizer
        self.lr = lr
        self.decay_factor = decay_factor
        self.decay_start_epoch = decay_start_epoch
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.unroll = unroll
        self.k = k
        self.alpha = alpha
        self.max_vocab = max_vocab
        self.min_count = min_count
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            lr=self.lr,
            decay_factor=self.decay_factor,
            decay_start_epoch=self.decay_start_epoch,
            epochs=self.epochs,
            clip_norm=self.clip_norm,
            batch_size=self.batch_size,
            unroll=self.unroll,
            k=self.k,
            alpha=self.alpha,
            seed=self.seed,
        )

    def _spec(self) -> EncoderSpec:
        return EncoderSpec(
            kind=self.encoder_kind,
            input_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            layers=self.layers,
            window_size=self.window_size,
            dropout=self.dropout,
        )

    def fit(self, X, y=None, validation=None):
        self.vocab_ = build_vocab(X, max_size=self.max_vocab, min_count=self.min_count)
        train_ids = encode_stream(X, self.vocab_)
        valid_ids = encode_stream(validation, self.vocab_) if validation is not None else None
        self.model_, self.history_ = lm.train(
            train_ids, self.vocab_, self._spec(), self._config(), self.mode,
            valid_ids=valid_ids,
        )
        return self

    def perplexity(self, X, mode: str | None = None) -> float:
        check_is_fitted(self, "model_")
        ids = encode_stream(X, self.vocab_)
        return lm.perplexity(self.model_, ids, mode=mode)

    def score(self, X, y=None) -> float:
        """Mean per-token log-likelihood (negated log loss, higher is better)."""
        check_is_fitted(self, "model_")
        ids = encode_stream(X, self.vocab_)
        _, nll = lm.evaluate(self.model_, ids)
        return -nll

    def next_token_log_probs(self, prefix: str) -> np.ndarray:
        """Log distribution of the next token after a whitespace-tokenized prefix."""
        check_is_fitted(self, "model_")
        from . import encoder as enc

        ids = [self.vocab_.lookup(tok) for tok in prefix.split()]
        if not ids:
            raise ValueError("prefix must contain at least one token")
        state = enc.init_state(self.model_.enc_spec, 1)
        emb = self.model_.input_embed[np.asarray(ids)][:, None, :]
        contexts, _, _ = enc.forward(self.model_.enc_spec, self.model_.enc_params, state, emb)
        return lm.conditional_log_probs(self.model_, contexts[-1, 0])
