"""Text ingestion, vocabulary construction, deterministic batching.

Input is pre-tokenized plain text: whitespace tokens, one sentence per
line, no lowercasing or other normalization.  Every line is terminated by
the end-of-sentence token, which is predicted like any other word.
"""

from __future__ import annotations

from dataclasses import dataclass
from collections import Counter

import numpy as np

from .validation import check_positive_int

__all__ = ["EOS", "UNK", "Vocabulary", "BatchPlan", "build_vocab", "encode_stream", "make_batches"]

EOS = "<eos>"
UNK = "<unk>"


@dataclass
class Vocabulary:
    """Dense token<->id map with training-split counts.

    Ids 0 and 1 are the end-of-sentence and unknown tokens; the rest are
    ordered by descending count with lexicographic tie-break.
    """

    itos: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.itos) != self.counts.shape[0]:
            raise ValueError("itos and counts disagree on vocabulary size")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if self.itos[0] != EOS or self.itos[1] != UNK:
            raise ValueError(f"ids 0 and 1 must be {EOS!r} and {UNK!r}")

    @property
    def size(self) -> int:
        return len(self.itos)

    @property
    def eos_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, cnt in zip(self.itos, self.counts):
                fh.write(f"{tok}\t{int(cnt)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        itos, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok, cnt = line.rstrip("\n").split("\t")
                itos.append(tok)
                counts.append(int(cnt))
        return cls(itos=itos, counts=np.asarray(counts, dtype=np.int64))


def _lines(text) -> list[str]:
    if isinstance(text, str):
        return text.splitlines()
    return [line.rstrip("\n") for line in text]


def build_vocab(text, max_size: int | None = None, min_count: int | None = None) -> Vocabulary:
    """Count whitespace tokens, append one <eos> per line, keep the top
    ``max_size`` words (ties broken lexicographically) with count >=
    ``min_count``.  Everything else maps to <unk>.
    """
    lines = _lines(text)
    if not lines or all(not line.strip() for line in lines):
        raise ValueError("empty training text")
    counter: Counter[str] = Counter()
    n_lines = 0
    for line in lines:
        counter.update(line.split())
        n_lines += 1

    eos_count = counter.pop(EOS, 0) + n_lines
    unk_count = counter.pop(UNK, 0)

    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    if min_count is not None:
        kept = [kv for kv in ranked if kv[1] >= min_count]
        unk_count += sum(cnt for _, cnt in ranked if cnt < min_count)
        ranked = kept
    if max_size is not None:
        unk_count += sum(cnt for _, cnt in ranked[max_size:])
        ranked = ranked[:max_size]

    itos = [EOS, UNK] + [tok for tok, _ in ranked]
    counts = [eos_count, unk_count] + [cnt for _, cnt in ranked]
    return Vocabulary(itos=itos, counts=np.asarray(counts, dtype=np.int64))


def encode_stream(text, vocab: Vocabulary) -> np.ndarray:
    """Map text to a flat id sequence, one <eos> after each line."""
    ids: list[int] = []
    for line in _lines(text):
        ids.extend(vocab.lookup(tok) for tok in line.split())
        ids.append(vocab.eos_id)
    return np.asarray(ids, dtype=np.int64)


def decode(ids, vocab: Vocabulary) -> str:
    """Inverse of encode_stream up to <unk> collapse; <eos> becomes a newline."""
    lines, current = [], []
    for i in ids:
        if int(i) == vocab.eos_id:
            lines.append(" ".join(current))
            current = []
        else:
            current.append(vocab.itos[int(i)])
    if current:
        lines.append(" ".join(current))
    return "\n".join(lines)


@dataclass
class BatchPlan:
    """Token ids arranged as ``batch_size`` contiguous streams.

    ``data`` is (batch_size, stream_len); the tail of the corpus that does
    not fill a full column set is dropped and reported.  Windows pair
    ``unroll`` inputs with targets offset by one; the final window may be
    shorter unless ``drop_partial`` was requested.
    """

    data: np.ndarray
    unroll: int
    dropped_tokens: int
    drop_partial: bool = False

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    @property
    def stream_len(self) -> int:
        return self.data.shape[1]

    @property
    def n_windows(self) -> int:
        span = self.stream_len - 1
        if self.drop_partial:
            return span // self.unroll
        return -(-span // self.unroll)

    def windows(self):
        """Yield (inputs, targets) pairs of shape (batch_size, <=unroll)."""
        span = self.stream_len - 1
        for start in range(0, span, self.unroll):
            stop = min(start + self.unroll, span)
            if self.drop_partial and stop - start < self.unroll:
                return
            yield self.data[:, start:stop], self.data[:, start + 1 : stop + 1]


def make_batches(ids, batch_size: int, unroll: int, drop_partial: bool = False) -> BatchPlan:
    """Split ids into batch_size contiguous streams of equal length."""
    check_positive_int(batch_size, "batch_size")
    check_positive_int(unroll, "unroll")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("ids must be a 1-D sequence")
    stream_len = ids.shape[0] // batch_size
    if stream_len < unroll + 1:
        raise ValueError(
            f"need at least batch_size * (unroll + 1) = {batch_size * (unroll + 1)} "
            f"tokens, got {ids.shape[0]}"
        )
    used = batch_size * stream_len
    data = ids[:used].reshape(batch_size, stream_len)
    return BatchPlan(
        data=data,
        unroll=unroll,
        dropped_tokens=int(ids.shape[0] - used),
        drop_partial=drop_partial,
    )
