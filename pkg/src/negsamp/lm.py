"""Unnormalized language models trained as binary classifiers.

One training loop serves four estimator modes that differ only in how the
classifier logit is assembled and how test-time probabilities are formed:

    mode      train logit                          test score (pre-softmax)
    nce       w.c + b_w - log Z - log(k p_n(w))    w.c + b_w
    neg       w.c                                  w.c
    neglm     w.c                                  w.c + log p_n(w)
    neglm_b   w.c + b_w                            w.c + b_w + log p_n(w)

with p_n the stored smoothed unigram distribution (exponent alpha fixed at
training time and reused at evaluation), Z the NCE normalizer held at a
constant, and b_w a per-word bias (initialized to -log|V| for nce, zero
for neglm_b, absent otherwise).  Evaluation always applies an exact
log-softmax over the full vocabulary; perplexity is the exponential of
the mean negative conditional log probability with encoder state carried
across the whole stream.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import encoder as enc
from .config import RNG_ALGORITHM, TrainConfig
from .corpus import Vocabulary, make_batches
from .distlab import DivergenceError, log_sigmoid
from .encoder import EncoderSpec
from .sampling import NoiseDistribution, build_noise

__all__ = [
    "MODES",
    "LanguageModel",
    "classifier_logit",
    "batch_loss",
    "train",
    "conditional_log_probs",
    "perplexity",
    "evaluate",
    "rank_augment_deviation",
    "rank_augment_check",
]

MODES = ("nce", "neg", "neglm", "neglm_b")
WORD_INIT_SCALE = 0.05

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class LanguageModel:
    mode: str
    vocab: Vocabulary
    noise: NoiseDistribution
    k: int
    enc_spec: EncoderSpec
    input_embed: np.ndarray
    enc_params: dict
    word_table: np.ndarray
    bias: np.ndarray | None
    nce_log_z: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.bias is not None) != _mode_has_bias(self.mode):
            raise ValueError(f"mode {self.mode!r} and bias presence disagree")

    @property
    def size(self) -> int:
        return self.vocab.size

    def param_blocks(self) -> dict[str, np.ndarray]:
        blocks = {"input_embed": self.input_embed, "word_table": self.word_table}
        if self.bias is not None:
            blocks["bias"] = self.bias
        for name, arr in self.enc_params.items():
            blocks[f"enc.{name}"] = arr
        return blocks


def _mode_has_bias(mode: str) -> bool:
    return mode in ("nce", "neglm_b")


def init_model(
    mode: str,
    vocab: Vocabulary,
    enc_spec: EncoderSpec,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> LanguageModel:
    """Fresh model; NCE bias starts at -log|V|, NEGLM-B bias at zero."""
    v = vocab.size
    noise = build_noise(vocab.counts, cfg.alpha)
    bias = None
    if mode == "nce":
        bias = np.full(v, -np.log(v))
    elif mode == "neglm_b":
        bias = np.zeros(v)
    return LanguageModel(
        mode=mode,
        vocab=vocab,
        noise=noise,
        k=cfg.k,
        enc_spec=enc_spec,
        input_embed=rng.uniform(-WORD_INIT_SCALE, WORD_INIT_SCALE, size=(v, enc_spec.input_dim)),
        enc_params=enc.init_params(enc_spec, rng),
        word_table=rng.uniform(-WORD_INIT_SCALE, WORD_INIT_SCALE, size=(v, enc_spec.hidden_dim)),
        bias=bias,
        nce_log_z=cfg.nce_log_z,
        metadata={"rng": RNG_ALGORITHM, "seed": cfg.seed, "config": cfg.to_dict()},
    )


def _train_logits(model: LanguageModel, word_ids: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    """Classifier logits for word ids against contexts (broadcast on ids).

    ``contexts`` has shape (..., hidden); ``word_ids`` broadcasts against
    the leading dimensions (an extra trailing axis is allowed for the
    negatives).
    """
    if word_ids.ndim == contexts.ndim:  # (..., k) negatives
        dots = np.einsum("...kd,...d->...k", model.word_table[word_ids], contexts)
    else:
        dots = np.einsum("...d,...d->...", model.word_table[word_ids], contexts)
    if model.mode == "nce":
        with np.errstate(divide="ignore"):
            dots = dots + model.bias[word_ids] - model.nce_log_z \
                - np.log(model.k * model.noise.probs[word_ids])
    elif model.mode == "neglm_b":
        dots = dots + model.bias[word_ids]
    return dots


def classifier_logit(model: LanguageModel, w: int, c_vec: np.ndarray) -> float:
    """Binary-classifier logit for a single word against one context."""
    if not 0 <= w < model.size:
        raise KeyError(f"word id {w} outside vocabulary of size {model.size}")
    return float(_train_logits(model, np.asarray(w), np.asarray(c_vec, dtype=np.float64)))


def batch_loss(
    model: LanguageModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    negatives: np.ndarray,
    state,
    train: bool = False,
    rng: np.random.Generator | None = None,
    masks: dict | None = None,
):
    """Negative-sampling loss over one unroll window, with gradients.

    ``inputs`` and ``targets`` are (B, T) token ids; ``negatives`` is
    (B, T, k) ids (or (k,), shared across the batch).  The loss is
    -[log sigma(s_pos) + sum_k log sigma(-s_neg)] averaged over the B*T
    predicted tokens; gradients cover the touched word rows, touched bias
    entries, the encoder parameters and the input embedding rows.

    Returns (loss, grads, new_state).
    """
    inputs = np.asarray(inputs, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    b, t = inputs.shape
    if negatives.ndim == 1:
        negatives = np.broadcast_to(negatives, (b, t, negatives.shape[0]))

    emb = model.input_embed[inputs].transpose(1, 0, 2)  # (T, B, emb)
    contexts, new_state, cache = enc.forward(
        model.enc_spec, model.enc_params, state, emb, train=train, rng=rng, masks=masks
    )
    ctx = contexts.transpose(1, 0, 2)  # (B, T, H)

    s_pos = _train_logits(model, targets, ctx)          # (B, T)
    s_neg = _train_logits(model, negatives, ctx)        # (B, T, k)
    n_tokens = b * t
    loss = -(log_sigmoid(s_pos).sum() + log_sigmoid(-s_neg).sum()) / n_tokens

    coef_pos = (expit(s_pos) - 1.0) / n_tokens          # dloss/ds_pos
    coef_neg = expit(s_neg) / n_tokens                  # dloss/ds_neg

    d_word = np.zeros_like(model.word_table)
    np.add.at(d_word, targets, coef_pos[..., None] * ctx)
    np.add.at(
        d_word,
        negatives.reshape(-1),
        (coef_neg[..., None] * ctx[:, :, None, :]).reshape(-1, ctx.shape[-1]),
    )
    grads = {"word_table": d_word, "encoder": None, "input_embed": None, "bias": None}
    if model.bias is not None:
        d_bias = np.zeros_like(model.bias)
        np.add.at(d_bias, targets, coef_pos)
        np.add.at(d_bias, negatives.reshape(-1), coef_neg.reshape(-1))
        grads["bias"] = d_bias

    d_ctx = coef_pos[..., None] * model.word_table[targets] + np.einsum(
        "btk,btkd->btd", coef_neg, model.word_table[negatives]
    )
    enc_grads, d_emb = enc.backward(
        model.enc_spec, model.enc_params, cache, d_ctx.transpose(1, 0, 2)
    )
    grads["encoder"] = enc_grads
    d_input = np.zeros_like(model.input_embed)
    np.add.at(d_input, inputs, d_emb.transpose(1, 0, 2))
    grads["input_embed"] = d_input
    return float(loss), grads, new_state


def _flat_grads(grads: dict):
    yield grads["input_embed"]
    yield grads["word_table"]
    if grads["bias"] is not None:
        yield grads["bias"]
    yield from grads["encoder"].values()


def clip_gradients(grads: dict, clip_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most clip_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in _flat_grads(grads)))
    if total > clip_norm:
        scale = clip_norm / total
        for g in _flat_grads(grads):
            g *= scale
    return total


class _AdamState:
    def __init__(self, blocks: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in blocks.items()}
        self.v = {k: np.zeros_like(v) for k, v in blocks.items()}
        self.t = 0

    def update(self, blocks: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        correct1 = 1.0 - ADAM_BETA1 ** self.t
        correct2 = 1.0 - ADAM_BETA2 ** self.t
        for name, p in blocks.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * g * g
            p -= lr * (m / correct1) / (np.sqrt(v / correct2) + ADAM_EPS)


def _grad_blocks(grads: dict) -> dict[str, np.ndarray]:
    blocks = {"input_embed": grads["input_embed"], "word_table": grads["word_table"]}
    if grads["bias"] is not None:
        blocks["bias"] = grads["bias"]
    for name, arr in grads["encoder"].items():
        blocks[f"enc.{name}"] = arr
    return blocks


def _draw_negatives(model, cfg, shape, rng, targets):
    if cfg.share_negatives:
        negs = model.noise.sample(rng, size=(shape[2],))
        return negs
    negs = model.noise.sample(rng, size=shape)
    if cfg.reject_negative_collisions:
        for _ in range(100):
            hit = negs == targets[:, :, None]
            if not hit.any():
                break
            negs = np.where(hit, model.noise.sample(rng, size=shape), negs)
    return negs


def train(
    train_ids,
    vocab: Vocabulary,
    enc_spec: EncoderSpec,
    cfg: TrainConfig,
    mode: str,
    valid_ids=None,
    on_epoch=None,
):
    """Train a language model on a token stream.

    The stream is arranged into ``cfg.batch_size`` contiguous lanes;
    encoder state crosses window and epoch boundaries without resets.
    The sgd_decay optimizer divides the rate by ``cfg.decay_factor``
    after every epoch >= ``cfg.decay_start_epoch``; adaptive_moments
    ignores the schedule.  Gradients are clipped to ``cfg.clip_norm``
    global norm.  Deterministic per (config, seed).

    Returns (model, history).  When a validation stream is given, the
    returned model carries the parameters of the best-validation epoch;
    a non-finite loss aborts with the last completed epoch attached to
    the raised DivergenceError.
    """
    seqs = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, noise_rng, dropout_rng = (np.random.default_rng(s) for s in seqs)

    model = init_model(mode, vocab, enc_spec, cfg, init_rng)
    plan = make_batches(train_ids, cfg.batch_size, cfg.unroll,
                        drop_partial=cfg.drop_partial_windows)
    state = enc.init_state(enc_spec, cfg.batch_size)
    adam = _AdamState(model.param_blocks()) if cfg.optimizer == "adaptive_moments" else None

    lr = cfg.lr
    history: list[dict] = []
    best_ppl = np.inf
    best_params = None
    last_good = None
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        loss_sum = 0.0
        token_sum = 0
        for inputs, targets in plan.windows():
            negatives = _draw_negatives(
                model, cfg, (inputs.shape[0], inputs.shape[1], cfg.k), noise_rng, targets
            )
            loss, grads, state = batch_loss(
                model, inputs, targets, negatives, state, train=True, rng=dropout_rng
            )
            if not np.isfinite(loss):
                if last_good is not None:
                    _load_blocks(model, last_good)
                err = DivergenceError(f"non-finite loss in epoch {epoch}")
                err.checkpoint = (model if last_good is not None else None, history)
                raise err
            clip_gradients(grads, cfg.clip_norm)
            blocks = model.param_blocks()
            grad_blocks = _grad_blocks(grads)
            if adam is not None:
                adam.update(blocks, grad_blocks, lr)
            else:
                for name, p in blocks.items():
                    p -= lr * grad_blocks[name]
            n_tok = inputs.size
            loss_sum += loss * n_tok
            token_sum += n_tok

        valid_ppl = float("nan")
        if valid_ids is not None:
            valid_ppl, _ = evaluate(model, valid_ids)
        record = {
            "epoch": epoch,
            "train_loss": loss_sum / token_sum,
            "valid_ppl": valid_ppl,
            "wall_time": time.perf_counter() - start,
            "lr": lr,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        last_good = {name: arr.copy() for name, arr in model.param_blocks().items()}
        if valid_ids is not None and valid_ppl < best_ppl:
            best_ppl = valid_ppl
            best_params = last_good
            model.metadata["best_epoch"] = epoch
        if cfg.optimizer == "sgd_decay" and epoch >= cfg.decay_start_epoch:
            lr /= cfg.decay_factor

    if best_params is not None:
        _load_blocks(model, best_params)
    return model, history


def _load_blocks(model: LanguageModel, blocks: dict[str, np.ndarray]) -> None:
    for name, arr in model.param_blocks().items():
        arr[...] = blocks[name]


def _eval_scores(model: LanguageModel, contexts: np.ndarray, mode: str) -> np.ndarray:
    """Pre-softmax test scores for every vocabulary word, one row per context."""
    scores = contexts @ model.word_table.T
    if mode in ("nce", "neglm_b"):
        scores = scores + model.bias
    if mode in ("neglm", "neglm_b"):
        with np.errstate(divide="ignore"):
            scores = scores + np.log(model.noise.probs)
    return scores


def conditional_log_probs(model: LanguageModel, c_vec: np.ndarray, mode: str | None = None) -> np.ndarray:
    """Full-vocabulary log conditional distribution for one context.

    The stored training alpha enters through the smoothed unigram factor
    of the neglm variants; the result log-sums to zero exactly up to
    float rounding.
    """
    mode = model.mode if mode is None else mode
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode in ("nce", "neglm_b") and model.bias is None:
        raise ValueError(f"model has no bias; cannot evaluate in mode {mode!r}")
    scores = _eval_scores(model, np.asarray(c_vec, dtype=np.float64)[None, :], mode)[0]
    return scores - logsumexp(scores)


def evaluate(
    model: LanguageModel,
    token_ids,
    mode: str | None = None,
    chunk: int = 128,
) -> tuple[float, float]:
    """(perplexity, mean negative log probability) over a token stream.

    Every token after the first is predicted; encoder state is carried
    across the whole stream, so chunking does not affect the result.
    """
    mode = model.mode if mode is None else mode
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode in ("nce", "neglm_b") and model.bias is None:
        raise ValueError(f"model has no bias; cannot evaluate in mode {mode!r}")
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] < 2:
        raise ValueError("token stream must contain at least two tokens")
    state = enc.init_state(model.enc_spec, 1)
    nll_sum = 0.0
    n_pred = 0
    last = ids.shape[0] - 1
    for start in range(0, last, chunk):
        stop = min(start + chunk, last)
        inputs = ids[start:stop]
        targets = ids[start + 1 : stop + 1]
        emb = model.input_embed[inputs][:, None, :]  # (T, 1, emb)
        contexts, state, _ = enc.forward(model.enc_spec, model.enc_params, state, emb)
        scores = _eval_scores(model, contexts[:, 0, :], mode)
        log_z = logsumexp(scores, axis=1)
        nll_sum += float((log_z - scores[np.arange(targets.shape[0]), targets]).sum())
        n_pred += targets.shape[0]
    nll = nll_sum / n_pred
    return float(np.exp(nll)), nll


def perplexity(model: LanguageModel, token_ids, mode: str | None = None) -> float:
    return evaluate(model, token_ids, mode=mode)[0]


def rank_augment_deviation(
    word_table: np.ndarray,
    bias: np.ndarray,
    contexts: np.ndarray,
    k: int,
    noise_probs: np.ndarray,
    drop_normalizer_coord: bool = False,
) -> float:
    """Max deviation between an exactly-normalized classifier and its
    width-(d+1) rewrite with the normalizer folded into the embeddings.

    For each context c the per-context normalizer is Z_c = sum_w
    exp(w.c + b_w).  Appending 1 to every word vector and -log Z_c to
    every context vector reproduces sigma(w.c + b_w - log Z_c -
    log(k p_n(w))) with the normalizer constant set to one; dropping the
    appended context coordinate breaks the identity.
    """
    word_table = np.asarray(word_table, dtype=np.float64)
    contexts = np.asarray(contexts, dtype=np.float64)
    log_z = logsumexp(contexts @ word_table.T + bias, axis=1)  # (n_contexts,)

    logits = contexts @ word_table.T + bias - log_z[:, None] - np.log(k * noise_probs)
    reference = expit(logits)

    aug_words = np.concatenate([word_table, np.ones((word_table.shape[0], 1))], axis=1)
    extra = np.zeros_like(log_z) if drop_normalizer_coord else -log_z
    aug_contexts = np.concatenate([contexts, extra[:, None]], axis=1)
    aug_logits = aug_contexts @ aug_words.T + bias - np.log(k * noise_probs)
    augmented = expit(aug_logits)
    return float(np.abs(reference - augmented).max())


def rank_augment_check(
    word_table: np.ndarray,
    bias: np.ndarray,
    contexts: np.ndarray,
    k: int,
    noise_probs: np.ndarray,
    tol: float = 1e-12,
    drop_normalizer_coord: bool = False,
) -> bool:
    """True when the width-(d+1) rewrite reproduces the classifier within tol."""
    dev = rank_augment_deviation(
        word_table, bias, contexts, k, noise_probs, drop_normalizer_coord=drop_normalizer_coord
    )
    return dev <= tol
