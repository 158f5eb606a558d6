"""Exact laboratory for embedding a discrete joint distribution.

Given two finite alphabets with joint probabilities ``p(x, y)``, a
d-dimensional embedding is a pair of tables whose dot products form a
matrix ``m(x, y)``.  The embedding score

    S(m) = sum_{x,y} [p(x,y) log sigma(m) + k p(x) p(y) log sigma(-m)] / (k+1)

is the population log-likelihood of a binary classifier that labels draws
from the joint as positive and draws from the product of marginals as
negative, with k negatives per positive.  S is maximized cell-wise at the
shifted pointwise mutual information

    pmi(x, y) = log p(x,y) - log p(x) - log p(y) - log k,

and the shortfall of any other matrix is exactly a conditional KL
divergence, which this module computes by both routes so the identity can
be checked numerically.

Everything here is float64; the tolerances in the test suite rely on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .config import TrainConfig
from .validation import (
    as_float_matrix,
    check_finite,
    check_positive_int,
    check_probability_matrix,
)

__all__ = [
    "JointDistribution",
    "ScoreConfig",
    "FactorPair",
    "PmiMatrix",
    "DivergenceError",
    "log_sigmoid",
    "pmi_matrix",
    "mixture_q",
    "score",
    "kl_gap",
    "posterior",
    "cond_score",
    "exact_gradient",
    "train_exact",
    "train_sampled",
    "read_joint_tsv",
    "random_joint",
]


class DivergenceError(RuntimeError):
    """A trainer produced a non-finite score or gradient."""


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    """log sigma(z), computed as -log1p(exp(-|z|)) - max(-z, 0).

    Exact rearrangement of -log(1 + exp(-z)) that never overflows.
    """
    z = np.asarray(z, dtype=np.float64)
    return -np.log1p(np.exp(-np.abs(z))) - np.maximum(-z, 0.0)


@dataclass(frozen=True)
class JointDistribution:
    """Exact probability table over two finite alphabets."""

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", check_probability_matrix(self.p, "p"))

    @property
    def n_x(self) -> int:
        return self.p.shape[0]

    @property
    def n_y(self) -> int:
        return self.p.shape[1]

    @property
    def px(self) -> np.ndarray:
        return self.p.sum(axis=1)

    @property
    def py(self) -> np.ndarray:
        return self.p.sum(axis=0)

    @property
    def full_support(self) -> bool:
        return bool(np.all(self.p > 0))

    @property
    def support_mask(self) -> np.ndarray:
        return self.p > 0


@dataclass(frozen=True)
class ScoreConfig:
    """Negative-to-positive sample ratio k (a positive integer)."""

    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "k", check_positive_int(self.k, "k"))


@dataclass
class FactorPair:
    """Two embedding tables; their product is the approximation matrix."""

    x_table: np.ndarray
    y_table: np.ndarray

    def __post_init__(self):
        self.x_table = check_finite(as_float_matrix(self.x_table, "x_table"), "x_table")
        self.y_table = check_finite(as_float_matrix(self.y_table, "y_table"), "y_table")
        if self.x_table.shape[1] != self.y_table.shape[1]:
            raise ValueError("x_table and y_table must share the embedding width")
        if self.d < 1:
            raise ValueError("embedding width must be at least 1")

    @property
    def d(self) -> int:
        return self.x_table.shape[1]

    def matrix(self) -> np.ndarray:
        """m(x, y) = x_vec . y_vec, an (n_x, n_y) matrix of rank <= d."""
        return self.x_table @ self.y_table.T


@dataclass(frozen=True)
class PmiMatrix:
    """Shifted PMI values with an explicit support mask.

    Cells with p(x, y) = 0 are semantically -inf; they are masked rather
    than stored, and ``values`` holds 0.0 there.  Consumers that need a
    plain matrix must go through :meth:`dense`, which refuses partial
    support.
    """

    values: np.ndarray
    support_mask: np.ndarray

    @property
    def full_support(self) -> bool:
        return bool(np.all(self.support_mask))

    def dense(self) -> np.ndarray:
        if not self.full_support:
            raise ValueError(
                "PMI matrix has zero-support cells; a dense finite matrix "
                "exists only for full-support distributions"
            )
        return self.values


def pmi_matrix(dist: JointDistribution, cfg: ScoreConfig) -> PmiMatrix:
    """Shifted PMI: log p(x,y) - log p(x) - log p(y) - log k on the support."""
    mask = dist.support_mask
    outer = np.outer(dist.px, dist.py)
    values = np.zeros_like(dist.p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, dist.p / np.where(mask, outer, 1.0), 1.0)
    values[mask] = np.log(ratio[mask]) - np.log(cfg.k)
    return PmiMatrix(values=values, support_mask=mask)


def mixture_q(dist: JointDistribution, cfg: ScoreConfig) -> JointDistribution:
    """The (positive + k independent) / (k+1) mixture over (x, y) pairs."""
    q = (dist.p + cfg.k * np.outer(dist.px, dist.py)) / (cfg.k + 1)
    return JointDistribution(q)


def _as_matrix(m, dist: JointDistribution, name: str = "m") -> np.ndarray:
    if isinstance(m, PmiMatrix):
        m = m.dense()
    elif isinstance(m, FactorPair):
        m = m.matrix()
    arr = check_finite(as_float_matrix(m, name), name)
    if arr.shape != dist.p.shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {dist.p.shape}")
    return arr


def score(dist: JointDistribution, cfg: ScoreConfig, m) -> float:
    """Embedding score S(m); always <= 0.

    ``m`` may be a plain matrix, a FactorPair, or a full-support PmiMatrix.
    """
    m = _as_matrix(m, dist)
    pos = dist.p * log_sigmoid(m)
    neg = cfg.k * np.outer(dist.px, dist.py) * log_sigmoid(-m)
    return float((pos + neg).sum() / (cfg.k + 1))


def posterior(dist: JointDistribution, cfg: ScoreConfig) -> np.ndarray:
    """P(positive | x, y) under the mixture: p / (p + k p(x) p(y)).

    Equals sigma(pmi(x, y)) on support cells and 0 elsewhere.
    """
    noise = cfg.k * np.outer(dist.px, dist.py)
    denom = dist.p + noise
    with np.errstate(invalid="ignore"):
        t = np.where(denom > 0, dist.p / np.where(denom > 0, denom, 1.0), 0.0)
    return t


def kl_gap(dist: JointDistribution, cfg: ScoreConfig, m) -> float:
    """Conditional KL divergence between the classifiers induced by the
    PMI matrix and by ``m``, weighted by the pair mixture.

    Computed directly from the definition

        sum_{x,y} q(x,y) sum_z t_z(x,y) log [t_z(x,y) / s_z(x,y)]

    with t = P(positive | x, y) under the true mixture and s = sigma(+-m),
    never as a difference of scores; the score-gap identity is a theorem
    the test suite verifies, not an implementation shortcut.
    """
    m = _as_matrix(m, dist)
    q = mixture_q(dist, cfg).p
    t = posterior(dist, cfg)
    # xlogy handles the 0 log 0 cells that arise off support.
    pos = xlogy(t, t) - t * log_sigmoid(m)
    neg = xlogy(1.0 - t, 1.0 - t) - (1.0 - t) * log_sigmoid(-m)
    return float((q * (pos + neg)).sum())


def cond_score(dist: JointDistribution, cfg: ScoreConfig, m) -> float:
    """Score of ``m`` as an approximation of the log conditional table.

    Shifts each cell by -log(k p(x)) before applying the embedding score,
    so the cell-wise optimum moves from pmi(x, y) to log p(x | y), the log
    conditional of the first alphabet given the second.  Requires every
    row marginal to be positive.
    """
    m = _as_matrix(m, dist)
    if np.any(dist.px <= 0):
        raise ValueError("cond_score requires p(x) > 0 for every row")
    shifted = m - np.log(cfg.k * dist.px)[:, None]
    return score(dist, cfg, shifted)


def exact_gradient(dist: JointDistribution, cfg: ScoreConfig, factors: FactorPair) -> FactorPair:
    """Analytic gradient of S with respect to both factor tables.

    dS/dm(x,y) = [p(x,y) sigma(-m) - k p(x) p(y) sigma(m)] / (k+1),
    then chain through m = X Y^T.
    """
    m = factors.matrix()
    g_m = (dist.p * expit(-m) - cfg.k * np.outer(dist.px, dist.py) * expit(m)) / (cfg.k + 1)
    return FactorPair(x_table=g_m @ factors.y_table, y_table=g_m.T @ factors.x_table)


def _init_factors(n_x: int, n_y: int, d: int, rng: np.random.Generator) -> FactorPair:
    # Small symmetric init, uniform on [-0.5/d, 0.5/d].
    half = 0.5 / d
    return FactorPair(
        x_table=rng.uniform(-half, half, size=(n_x, d)),
        y_table=rng.uniform(-half, half, size=(n_y, d)),
    )


def train_exact(
    dist: JointDistribution,
    cfg: ScoreConfig,
    d: int,
    steps: int = 10_000,
    lr: float = 50.0,
    seed: int = 0,
    grad_tol: float = 1e-9,
    on_step=None,
) -> FactorPair:
    """Full-batch gradient ascent on S over a d-wide factor pair.

    The learning rate is fixed except for halving-on-decrease backoff: a
    step that lowers S is retried at half the rate, up to 30 halvings,
    after which the run stops.  The accepted score sequence is therefore
    monotone nondecreasing, and the whole run is a pure function of
    (dist, cfg, d, steps, lr, seed).  Stops early once the gradient
    max-norm falls below ``grad_tol``.
    """
    check_positive_int(d, "d")
    rng = np.random.default_rng(seed)
    factors = _init_factors(dist.n_x, dist.n_y, d, rng)
    current = score(dist, cfg, factors)
    if not np.isfinite(current):
        raise DivergenceError(f"initial score is not finite: {current!r}")

    for step in range(steps):
        grad = exact_gradient(dist, cfg, factors)
        if max(np.abs(grad.x_table).max(), np.abs(grad.y_table).max()) <= grad_tol:
            break
        accepted = False
        for _ in range(31):
            candidate = FactorPair(
                x_table=factors.x_table + lr * grad.x_table,
                y_table=factors.y_table + lr * grad.y_table,
            )
            new = score(dist, cfg, candidate)
            if not np.isfinite(new):
                raise DivergenceError(
                    f"score diverged at step {step} (lr={lr!r}); last good score {current!r}"
                )
            if new >= current:
                factors, current = candidate, new
                accepted = True
                break
            lr *= 0.5
        if on_step is not None:
            on_step(step, current, lr)
        if not accepted:
            break
    return factors


def train_sampled(
    pairs,
    cfg: ScoreConfig,
    noise,
    d: int,
    opt: TrainConfig,
) -> FactorPair:
    """Stochastic ascent on the sampled objective over a pair stream.

    Each positive pair contributes one attraction term and k repulsion
    terms against draws from ``noise`` (a NoiseDistribution over the
    second alphabet).  Pairs are processed in minibatches of
    ``opt.batch_size``; with the sgd_decay optimizer the rate is divided
    by ``opt.decay_factor`` after every epoch >= ``opt.decay_start_epoch``.
    Deterministic given ``opt.seed``.
    """
    check_positive_int(d, "d")
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError(f"pairs must be an (n, 2) index array, got shape {pairs.shape}")
    if pairs.shape[0] == 0:
        raise ValueError("empty pair stream")
    n_x = int(pairs[:, 0].max()) + 1
    n_y = max(int(pairs[:, 1].max()) + 1, noise.size)

    init_seq, noise_seq = np.random.SeedSequence(opt.seed).spawn(2)
    init_rng = np.random.default_rng(init_seq)
    noise_rng = np.random.default_rng(noise_seq)
    factors = _init_factors(n_x, n_y, d, init_rng)
    x_tab, y_tab = factors.x_table, factors.y_table

    k = cfg.k
    lr = opt.lr
    batch = opt.batch_size
    for epoch in range(1, opt.epochs + 1):
        for start in range(0, pairs.shape[0], batch):
            xs = pairs[start : start + batch, 0]
            ys = pairs[start : start + batch, 1]
            b = xs.shape[0]
            negs = noise.sample(noise_rng, size=(b, k))

            xv = x_tab[xs]                      # (b, d)
            yv = y_tab[ys]                      # (b, d)
            nv = y_tab[negs]                    # (b, k, d)

            # Minibatch-mean ascent step; scaling by 1/b keeps the step
            # size independent of the batch size.
            rate = lr / b
            pos_coef = expit(-np.einsum("bd,bd->b", xv, yv))          # sigma(-m)
            neg_coef = -expit(np.einsum("bd,bkd->bk", xv, nv))        # -sigma(m)

            gx = pos_coef[:, None] * yv + np.einsum("bk,bkd->bd", neg_coef, nv)
            if not np.isfinite(gx).all():
                raise DivergenceError(f"gradient diverged in epoch {epoch}")
            np.add.at(x_tab, xs, rate * gx)
            np.add.at(y_tab, ys, rate * pos_coef[:, None] * xv)
            np.add.at(
                y_tab,
                negs.reshape(-1),
                rate * (neg_coef[:, :, None] * xv[:, None, :]).reshape(-1, d),
            )
        if opt.optimizer == "sgd_decay" and epoch >= opt.decay_start_epoch:
            lr /= opt.decay_factor
    return FactorPair(x_table=x_tab, y_table=y_tab)


def random_joint(
    rng: np.random.Generator,
    n_x: int,
    n_y: int,
    zero_fraction: float = 0.0,
) -> JointDistribution:
    """Random joint table; optionally zero out a fraction of the cells."""
    p = rng.random((n_x, n_y))
    if zero_fraction > 0.0:
        mask = rng.random((n_x, n_y)) < zero_fraction
        # Keep at least one positive cell per row and column so the
        # marginals stay valid.
        mask[rng.integers(n_x), :] = False
        mask[:, rng.integers(n_y)] = False
        p[mask] = 0.0
    return JointDistribution(p / p.sum())


def read_joint_tsv(path) -> tuple[JointDistribution, list[str], list[str]]:
    """Load a joint distribution from TSV with header ``x<TAB>y<TAB>p``.

    One row per nonzero cell; alphabets are the sorted distinct labels.
    The probabilities must sum to 1 within 1e-9 and are renormalized to
    machine precision afterwards.
    """
    rows: list[tuple[str, str, float]] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header.split("\t") != ["x", "y", "p"]:
            raise ValueError(f"bad TSV header {header!r}, expected 'x<TAB>y<TAB>p'")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 3 tab-separated fields")
            try:
                prob = float(parts[2])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad probability {parts[2]!r}") from exc
            if prob <= 0 or not np.isfinite(prob):
                raise ValueError(f"line {lineno}: probabilities must be positive and finite")
            rows.append((parts[0], parts[1], prob))
    if not rows:
        raise ValueError("TSV contains no cells")
    x_labels = sorted({r[0] for r in rows})
    y_labels = sorted({r[1] for r in rows})
    x_index = {label: i for i, label in enumerate(x_labels)}
    y_index = {label: i for i, label in enumerate(y_labels)}
    p = np.zeros((len(x_labels), len(y_labels)))
    for x, y, prob in rows:
        if p[x_index[x], y_index[y]] != 0.0:
            raise ValueError(f"duplicate cell ({x!r}, {y!r})")
        p[x_index[x], y_index[y]] = prob
    total = p.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"cell probabilities sum to {total!r}, expected 1 within 1e-9")
    return JointDistribution(p / total), x_labels, y_labels
