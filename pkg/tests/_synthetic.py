"""Shared synthetic-corpus utilities for the test suite.

A bigram Markov chain over n states whose transition logits are low-rank
plus a unigram bias.  State 0 is the sentence terminator, rendered as a
line break, so encoding the rendered text reproduces the chain's emission
sequence token for token.  The chain's entropy rate gives the analytic
perplexity an ideal model would reach.
"""

from __future__ import annotations

import numpy as np


def make_chain(
    n_states: int = 50,
    rank: int = 8,
    seed: int = 0,
    row_scale: float = 0.55,
    unigram_scale: float = 1.0,
    eos_boost: float = 0.6,
):
    """Returns (transition matrix, stationary distribution, analytic perplexity)."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_states, rank)) * row_scale
    b = rng.normal(size=(n_states, rank))
    u = rng.normal(size=n_states) * unigram_scale
    u[0] += eos_boost
    logits = a @ b.T + u
    trans = np.exp(logits - logits.max(axis=1, keepdims=True))
    trans /= trans.sum(axis=1, keepdims=True)

    pi = np.full(n_states, 1.0 / n_states)
    for _ in range(5000):
        new = pi @ trans
        if np.abs(new - pi).max() < 1e-15:
            pi = new
            break
        pi = new
    entropy_rate = -(pi[:, None] * trans * np.log(trans)).sum()
    return trans, pi, float(np.exp(entropy_rate))


def sample_chain(trans: np.ndarray, n_tokens: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cum = trans.cumsum(axis=1)
    out = np.empty(n_tokens, dtype=np.int64)
    state = int(rng.integers(trans.shape[0]))
    for t in range(n_tokens):
        state = int(np.searchsorted(cum[state], rng.random()))
        out[t] = state
    return out


def chain_text(ids: np.ndarray, n_states: int = 50) -> str:
    """Render chain emissions as text; state 0 ends a line."""
    tokens = [f"w{i:02d}" for i in range(n_states)]
    lines, current = [], []
    for i in ids:
        if i == 0:
            lines.append(" ".join(current))
            current = []
        else:
            current.append(tokens[i])
    return "\n".join(lines) + "\n"
