"""Command-line surface: verify, embed-joint, train-lm, eval.

Every run with an --out target writes its fully resolved configuration
(defaults included) next to the outputs as flat key=value lines, so runs
can be reproduced from the sidecar alone.  Exit codes: 0 success,
1 validation or check failure, 2 usage error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np
from scipy.stats import chisquare

from . import distlab, encoder, lm, sampling
from .config import TrainConfig
from .corpus import build_vocab, encode_stream
from .distlab import (
    DivergenceError,
    JointDistribution,
    ScoreConfig,
    exact_gradient,
    kl_gap,
    pmi_matrix,
    random_joint,
    read_joint_tsv,
    score,
    train_exact,
    train_sampled,
)
from .encoder import EncoderSpec
from .modelfile import FactorModel, ModelFormatError, load_model, save_model
from .sampling import build_noise

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _write_config(path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


def _write_metrics(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            line = " ".join(f"{key}={rec[key]}" for key in rec)
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# verify


class Check:
    def __init__(self, name, value, threshold, comparator="<="):
        self.name = name
        self.value = value
        self.threshold = threshold
        self.comparator = comparator

    @property
    def passed(self) -> bool:
        if self.comparator == "<=":
            return self.value <= self.threshold
        return self.value > self.threshold

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"check={self.name} value={self.value:.3e} "
            f"threshold={self.comparator}{self.threshold:.3e} status={status}"
        )


def _parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for part in text.split(","):
        rows, _, cols = part.strip().partition("x")
        sizes.append((int(rows), int(cols)))
    return sizes


def run_verify(seed: int = 0, sizes: str = "6x5,8x6,10x10", corrupt_gradient: bool = False):
    """Randomized property checks over the numerical core."""
    rng = np.random.default_rng(seed)
    size_list = _parse_sizes(sizes)
    checks: list[Check] = []

    # Score-gap identity: S(pmi) - S(m) equals the conditional KL divergence.
    worst = 0.0
    for _ in range(100):
        n_x, n_y = size_list[rng.integers(len(size_list))]
        dist = random_joint(rng, n_x, n_y)
        cfg = ScoreConfig(k=int(rng.integers(1, 8)))
        m = rng.normal(scale=2.0, size=(n_x, n_y))
        gap = score(dist, cfg, pmi_matrix(dist, cfg)) - score(dist, cfg, m)
        worst = max(worst, abs(gap - kl_gap(dist, cfg, m)))
    checks.append(Check("score-gap-identity", worst, 1e-10))

    # The PMI matrix is the global optimum of the embedding score.
    worst = -np.inf
    for _ in range(20):
        dist = random_joint(rng, 6, 5)
        cfg = ScoreConfig(k=int(rng.integers(1, 5)))
        base = score(dist, cfg, pmi_matrix(dist, cfg))
        dense = pmi_matrix(dist, cfg).dense()
        for _ in range(10):
            delta = rng.normal(size=dense.shape)
            for eps in (1e-2, 1e-1, 1.0):
                worst = max(worst, score(dist, cfg, dense + eps * delta) - base)
    checks.append(Check("pmi-optimality", worst, 0.0))

    # Posterior is the sigmoid of the PMI values.
    worst = 0.0
    for _ in range(20):
        dist = random_joint(rng, 7, 6)
        cfg = ScoreConfig(k=int(rng.integers(1, 5)))
        post = distlab.posterior(dist, cfg)
        logit = np.log(post) - np.log1p(-post)
        worst = max(worst, float(np.abs(logit - pmi_matrix(dist, cfg).dense()).max()))
    checks.append(Check("posterior-logit", worst, 1e-10))

    # Full-rank factorization recovers the PMI matrix.
    worst = 0.0
    for trial in range(3):
        dist = random_joint(rng, 5, 5)
        cfg = ScoreConfig(k=1)
        factors = train_exact(dist, cfg, d=5, seed=seed + trial)
        worst = max(worst, kl_gap(dist, cfg, factors.matrix()))
    checks.append(Check("full-rank-recovery", worst, 1e-6))

    # Analytic factor gradient against central differences.
    dist = random_joint(rng, 4, 4)
    cfg = ScoreConfig(k=2)
    factors = distlab.FactorPair(
        x_table=rng.normal(scale=0.5, size=(4, 3)), y_table=rng.normal(scale=0.5, size=(4, 3))
    )
    grad = exact_gradient(dist, cfg, factors)
    if corrupt_gradient:
        grad.x_table[0, 0] = -grad.x_table[0, 0]
    h = 1e-5
    worst = 0.0
    for table, g_table in (("x_table", grad.x_table), ("y_table", grad.y_table)):
        arr = getattr(factors, table)
        numeric = np.zeros_like(arr)
        flat, num = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = score(dist, cfg, factors)
            flat[i] = orig - h
            lo = score(dist, cfg, factors)
            flat[i] = orig
            num[i] = (hi - lo) / (2 * h)
        scale = max(1.0, np.abs(g_table).max(), np.abs(numeric).max())
        worst = max(worst, float(np.abs(g_table - numeric).max() / scale))
    checks.append(Check("factor-gradient", worst, 1e-6))

    # Encoder gradients.
    window_spec = EncoderSpec(kind="window", input_dim=6, hidden_dim=5, window_size=3)
    report = encoder.grad_check(window_spec, seed=seed)
    checks.append(Check("encoder-gradient-window", max(report.values()), 1e-6))
    lstm_spec = EncoderSpec(kind="lstm", input_dim=6, hidden_dim=8, layers=2)
    report = encoder.grad_check(lstm_spec, seed=seed)
    checks.append(Check("encoder-gradient-lstm", max(report.values()), 1e-4))

    # Alias table reproduces the smoothed distribution exactly.
    counts = rng.integers(1, 10_000, size=5000)
    noise = build_noise(counts, 0.75)
    checks.append(
        Check(
            "alias-reconstruction",
            float(np.abs(noise.table_mass() - noise.probs).max()),
            1e-12,
        )
    )

    # Draws follow the table (chi-square goodness of fit).
    counts = rng.integers(1, 1000, size=100)
    noise = build_noise(counts, 0.75)
    draws = noise.sample(np.random.default_rng(seed + 1), size=1_000_000)
    observed = np.bincount(draws, minlength=noise.size)
    _, p_value = chisquare(observed, f_exp=noise.probs * 1_000_000)
    checks.append(Check("sampler-chi-square", float(p_value), 1e-3, comparator=">"))

    # Folding the exact normalizer into one extra embedding coordinate.
    worst = 0.0
    for _ in range(20):
        table = rng.normal(size=(10, 4))
        bias = rng.normal(size=10)
        contexts = rng.normal(size=(5, 4))
        probs = rng.random(10) + 0.05
        probs /= probs.sum()
        worst = max(worst, lm.rank_augment_deviation(table, bias, contexts, 2, probs))
    checks.append(Check("rank-augmentation", worst, 1e-12))
    return checks


def cmd_verify(args) -> int:
    start = time.perf_counter()
    checks = run_verify(seed=args.seed, sizes=args.sizes, corrupt_gradient=args.corrupt_gradient)
    lines = [check.line() for check in checks]
    for line in lines:
        print(line)
    elapsed = time.perf_counter() - start
    all_ok = all(check.passed for check in checks)
    print(f"verify: {'all checks passed' if all_ok else 'FAILURES detected'} "
          f"({len(checks)} checks, {elapsed:.1f}s)")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        _write_config(
            args.report + ".config",
            {"command": "verify", "seed": args.seed, "sizes": args.sizes,
             "corrupt_gradient": args.corrupt_gradient},
        )
    return EXIT_OK if all_ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# embed-joint


def cmd_embed_joint(args) -> int:
    dist, x_labels, y_labels = read_joint_tsv(args.dist)
    cfg = ScoreConfig(k=args.k)
    if not dist.full_support:
        raise ValueError(
            "distribution has zero-probability cells; the optimum comparison "
            "needs full support"
        )
    if args.method == "exact":
        factors = train_exact(dist, cfg, args.d, steps=args.steps, lr=args.lr, seed=args.seed)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(1)[0])
        flat = rng.choice(dist.n_x * dist.n_y, size=args.pairs, p=dist.p.ravel())
        pairs = np.stack(np.unravel_index(flat, dist.p.shape), axis=1)
        noise = build_noise(np.bincount(pairs[:, 1], minlength=dist.n_y), args.alpha)
        opt = TrainConfig(
            optimizer="sgd_decay", lr=args.sgd_lr, decay_factor=2.0,
            decay_start_epoch=max(1, args.epochs // 2), epochs=args.epochs,
            batch_size=512, k=args.k, alpha=args.alpha, seed=args.seed,
        )
        factors = train_sampled(pairs, cfg, noise, args.d, opt)

    s_m = score(dist, cfg, factors)
    s_pmi = score(dist, cfg, pmi_matrix(dist, cfg))
    gap = kl_gap(dist, cfg, factors.matrix())
    print(f"score={s_m:.12g}")
    print(f"pmi_score={s_pmi:.12g}")
    print(f"kl_gap={gap:.12g}")
    model = FactorModel(
        x_labels=x_labels, y_labels=y_labels, factors=factors,
        k=args.k, alpha=args.alpha, seed=args.seed,
        metadata={"method": args.method},
    )
    save_model(args.out, model)
    resolved = {
        "command": "embed-joint", "dist": args.dist, "d": args.d, "k": args.k,
        "method": args.method, "steps": args.steps, "lr": args.lr,
        "pairs": args.pairs, "epochs": args.epochs, "sgd_lr": args.sgd_lr,
        "alpha": args.alpha, "seed": args.seed, "out": args.out,
    }
    _write_config(args.out + ".config", resolved)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train-lm


def _read_text(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def cmd_train_lm(args) -> int:
    train_text = _read_text(args.train)
    vocab = build_vocab(train_text, max_size=args.vocab_size, min_count=args.min_count)
    train_ids = encode_stream(train_text, vocab)
    valid_ids = encode_stream(_read_text(args.valid), vocab) if args.valid else None

    spec = EncoderSpec(
        kind=args.encoder, input_dim=args.d, hidden_dim=args.hidden,
        layers=args.layers, window_size=args.window, dropout=args.dropout,
    )
    cfg = TrainConfig(
        optimizer=args.optimizer, lr=args.lr, decay_factor=args.decay,
        decay_start_epoch=args.decay_start, epochs=args.epochs,
        clip_norm=args.clip, batch_size=args.batch, unroll=args.unroll,
        k=args.k, alpha=args.alpha, seed=args.seed,
    )
    mode = args.mode.replace("-", "_")

    resolved = {"command": "train-lm", "train": args.train, "valid": args.valid,
                "mode": mode, "encoder": spec.kind, "d": spec.input_dim,
                "hidden": spec.hidden_dim, "layers": spec.layers,
                "window": spec.window_size, "dropout": spec.dropout,
                "vocab_size": args.vocab_size, "min_count": args.min_count,
                "out": args.out}
    resolved.update(cfg.to_dict())
    _write_config(args.out + ".config", resolved)

    def report(rec):
        print(" ".join(f"{key}={rec[key]}" for key in rec))

    try:
        model, history = lm.train(
            train_ids, vocab, spec, cfg, mode, valid_ids=valid_ids, on_epoch=report
        )
    except DivergenceError as err:
        checkpoint, history = getattr(err, "checkpoint", (None, []))
        print(f"aborted: {err}", file=sys.stderr)
        if checkpoint is not None:
            save_model(args.out, checkpoint)
            _write_metrics(args.out + ".metrics", history)
            print(f"last-good checkpoint written to {args.out}", file=sys.stderr)
        return EXIT_NUMERIC
    save_model(args.out, model)
    _write_metrics(args.out + ".metrics", history)
    if valid_ids is not None:
        best = min(rec["valid_ppl"] for rec in history)
        print(f"best_valid_ppl={best:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    model = load_model(args.model)
    if isinstance(model, FactorModel):
        raise ValueError("eval expects a language model file, got a factor model")
    test_ids = encode_stream(_read_text(args.test), model.vocab)
    mode = args.mode_override.replace("-", "_") if args.mode_override else None
    ppl, nll = lm.evaluate(model, test_ids, mode=mode)
    print(f"perplexity={ppl:.12g}")
    print(f"mean_log_loss={nll:.12g}")
    if args.out:
        _write_metrics(args.out, [{"perplexity": ppl, "mean_log_loss": nll}])
        _write_config(
            args.out + ".config",
            {"command": "eval", "model": args.model, "test": args.test,
             "mode_override": args.mode_override, "out": args.out},
        )
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="negsamp",
        description="Negative-sampling embeddings and language models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run randomized numerical checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="6x5,8x6,10x10",
                   help="comma list of alphabet sizes, e.g. 8x6,10x10")
    p.add_argument("--corrupt-gradient", action="store_true",
                   help="negate one analytic gradient component (harness self-test)")
    p.add_argument("--report", default=None, help="write machine-readable report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("embed-joint", help="embed a joint distribution from TSV")
    p.add_argument("--dist", required=True, help="TSV with header x<TAB>y<TAB>p")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--method", choices=("exact", "sampled"), default="exact")
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--lr", type=float, default=50.0)
    p.add_argument("--pairs", type=int, default=500_000)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--sgd-lr", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_joint)

    p = sub.add_parser("train-lm", help="train a language model")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", default=None)
    p.add_argument("--mode", choices=("nce", "neg", "neglm", "neglm-b"), default="neglm")
    p.add_argument("--encoder", choices=("window", "lstm"), default="lstm")
    p.add_argument("--d", type=int, default=300, help="input embedding width")
    p.add_argument("--hidden", type=int, default=300)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--optimizer", choices=("sgd_decay", "adaptive_moments"),
                   default="sgd_decay")
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--decay", type=float, default=1.2)
    p.add_argument("--decay-start", type=int, default=6)
    p.add_argument("--epochs", type=int, default=39)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--unroll", type=int, default=20)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("eval", help="evaluate perplexity of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mode-override", choices=("nce", "neg", "neglm", "neglm-b"),
                   default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, ModelFormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
