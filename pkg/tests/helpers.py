"""Shared independent oracles and data builders for the test suite.

Everything here is deliberately written along a different code path than the
library (pure python / brute force) so the tests check against independent
computations.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np

from cbtcode.corpus import CodeScores, Session, Token, Turn


# ---------------------------------------------------------------------------
# Chain-model enumeration oracle


def enumerate_chain(E: np.ndarray, T: np.ndarray):
    """Brute-force log-partition, marginals, pairwise marginals, best path."""
    n, k = E.shape
    seqs = np.array(list(itertools.product(range(k), repeat=n)), dtype=int)
    scores = E[np.arange(n), seqs].sum(axis=1)
    if n > 1:
        scores = scores + T[seqs[:, :-1], seqs[:, 1:]].sum(axis=1)
    m = scores.max()
    log_z = m + math.log(np.exp(scores - m).sum())
    probs = np.exp(scores - log_z)
    marg = np.zeros((n, k))
    for t in range(n):
        for tag in range(k):
            marg[t, tag] = probs[seqs[:, t] == tag].sum()
    pair = np.zeros((max(n - 1, 0), k, k))
    for t in range(n - 1):
        for a in range(k):
            for b in range(k):
                pair[t, a, b] = probs[(seqs[:, t] == a) & (seqs[:, t + 1] == b)].sum()
    best = int(np.argmax(scores))
    return log_z, marg, pair, scores[best], list(seqs[best])


# ---------------------------------------------------------------------------
# tf-idf brute-force oracle (pure python)


def brute_tfidf(docs: list[tuple[str, list[str]]], max_df: float, min_df: float):
    n = len(docs)
    df: Counter[str] = Counter()
    for _, toks in docs:
        df.update(set(toks))
    vocab = sorted(t for t in df if min_df <= df[t] / n <= max_df)
    idf = {t: math.log((1 + n) / (1 + df[t])) + 1.0 for t in vocab}

    def transform(tokens: list[str]) -> list[float]:
        counts: Counter[str] = Counter(t for t in tokens if t in idf)
        raw = [counts[t] * idf[t] for t in vocab]
        norm = math.sqrt(sum(x * x for x in raw))
        return [x / norm if norm > 0 else 0.0 for x in raw]

    return vocab, idf, transform


# ---------------------------------------------------------------------------
# Weighted-hinge subgradient oracle (independent of the SMO solver)


def subgradient_hinge_oracle(
    X: np.ndarray,
    y_signed: np.ndarray,
    sample_c: np.ndarray,
    rounds: int = 28,
    iters_per_round: int = 400,
) -> float:
    """Long projected-subgradient run with a halving Polyak target."""

    def obj(w: np.ndarray, b: float) -> float:
        margins = y_signed * (X @ w + b)
        return 0.5 * float(w @ w) + float(np.dot(sample_c, np.maximum(0.0, 1.0 - margins)))

    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    f_best = obj(w, b)
    w_best, b_best = w.copy(), b
    delta = 0.5 * max(1.0, f_best)
    for _ in range(rounds):
        target = f_best - delta
        for _ in range(iters_per_round):
            margins = y_signed * (X @ w + b)
            act = margins < 1.0
            gw = w - X[act].T @ (sample_c[act] * y_signed[act])
            gb = -float(np.sum(sample_c[act] * y_signed[act]))
            gn2 = float(gw @ gw) + gb * gb
            f = obj(w, b)
            if f < f_best:
                f_best, w_best, b_best = f, w.copy(), b
            if gn2 == 0.0:
                return f_best
            step = (f - target) / gn2
            w = w - step * gw
            b = b - step * gb
        delta *= 0.5
        w, b = w_best.copy(), b_best
    return f_best


# ---------------------------------------------------------------------------
# Random corpus builders


def random_scores(rng: np.random.Generator) -> CodeScores:
    from cbtcode.corpus import CODES

    return CodeScores(tuple(int(v) for v in rng.integers(0, 7, size=len(CODES))))


def random_turn(rng: np.random.Generator, speaker: str, n_tokens: int, start: float = 0.0) -> Turn:
    words = ["w%d" % rng.integers(0, 50) for _ in range(n_tokens)]
    tokens = []
    clock = start
    for w in words:
        gap = float(rng.uniform(0.0, 3.0))
        dur = float(rng.uniform(0.1, 0.5))
        tokens.append(Token(text=w, start_s=round(clock + gap, 3), end_s=round(clock + gap + dur, 3)))
        clock += gap + dur
    return Turn(speaker=speaker, tokens=tuple(tokens))


def random_session(rng: np.random.Generator, sid: str, with_scores: bool = True) -> Session:
    n_turns = int(rng.integers(1, 6))
    turns = []
    clock = 0.0
    for _ in range(n_turns):
        speaker = "therapist" if rng.random() < 0.5 else "patient"
        turn = random_turn(rng, speaker, int(rng.integers(1, 8)), start=clock)
        clock = turn.tokens[-1].end_s + float(rng.uniform(0.1, 1.0))
        turns.append(turn)
    return Session(
        id=sid,
        turns=tuple(turns),
        scores=random_scores(rng) if with_scores else None,
    )
