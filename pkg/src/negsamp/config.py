"""Run configuration shared by the stochastic trainers.

A ``TrainConfig`` plus a seed fully determines a training run: optimizer,
schedule, negative-sample count, smoothing exponent, clipping, batching.
The PRNG is numpy's PCG64 (``np.random.default_rng``); every consumer
derives its streams from ``seed`` via ``SeedSequence.spawn`` so runs are
reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

from .validation import check_positive_int, check_unit_interval

OPTIMIZERS = ("sgd_decay", "adaptive_moments")

RNG_ALGORITHM = "numpy-pcg64"


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd_decay"
    lr: float = 1.0
    decay_factor: float = 1.2
    decay_start_epoch: int = 6
    epochs: int = 39
    clip_norm: float = 5.0
    batch_size: int = 20
    unroll: int = 20
    k: int = 100
    alpha: float = 0.75
    seed: int = 0
    # Negatives are redrawn per position by default; sharing one draw per
    # batch is a throughput option only.
    share_negatives: bool = False
    # Negatives colliding with the positive word are kept (unconditional
    # draws); set True to redraw them.
    reject_negative_collisions: bool = False
    # Trailing partial windows are kept so training sees every token;
    # dropping them is opt-in.
    drop_partial_windows: bool = False
    # Constant log-normalizer for the NCE classifier (Z_c is never learned).
    nce_log_z: float = 0.0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr!r}")
        if not self.decay_factor >= 1.0:
            raise ValueError(f"decay_factor must be >= 1, got {self.decay_factor!r}")
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm!r}")
        check_positive_int(self.decay_start_epoch, "decay_start_epoch")
        check_positive_int(self.epochs, "epochs")
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.unroll, "unroll")
        check_positive_int(self.k, "k")
        check_unit_interval(self.alpha, "alpha")

    def to_dict(self) -> dict:
        return asdict(self)
