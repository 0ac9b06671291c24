"""Linear-chain sequence primitives: forward-backward and Viterbi in log space.

Scores are additive: a labeling y of a length-n sequence scores
sum_t emissions[t, y_t] + sum_{t>0} transitions[y_{t-1}, y_t].  There are no
separate start/stop potentials.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _check_inputs(emissions, transitions) -> tuple[np.ndarray, np.ndarray]:
    E = np.asarray(emissions, dtype=float)
    T = np.asarray(transitions, dtype=float)
    if E.ndim != 2 or E.shape[0] < 1 or E.shape[1] < 1:
        raise ValidationError(f"emissions must be a (length, n_tags) matrix, got shape {E.shape}")
    k = E.shape[1]
    if T.shape != (k, k):
        raise ValidationError(f"transitions must be ({k}, {k}), got {T.shape}")
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(T))):
        raise ValidationError("emissions and transitions must be finite")
    return E, T


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def forward_backward(emissions, transitions) -> tuple[float, np.ndarray, np.ndarray]:
    """Exact marginal inference.

    Returns (log_partition, marginals, pairwise) where marginals is
    (n, k) with rows summing to 1 and pairwise is (n-1, k, k) giving the
    joint probability of tags at adjacent positions.
    """
    E, T = _check_inputs(emissions, transitions)
    n, k = E.shape

    alpha = np.empty((n, k))
    alpha[0] = E[0]
    for t in range(1, n):
        alpha[t] = E[t] + _logsumexp(alpha[t - 1][:, None] + T, axis=0)

    beta = np.zeros((n, k))
    for t in range(n - 2, -1, -1):
        beta[t] = _logsumexp(T + (E[t + 1] + beta[t + 1])[None, :], axis=1)

    log_z = float(_logsumexp(alpha[-1], axis=0))
    marginals = np.exp(alpha + beta - log_z)
    if n > 1:
        pairwise = np.exp(
            alpha[:-1, :, None] + T[None, :, :] + (E[1:] + beta[1:])[:, None, :] - log_z
        )
    else:
        pairwise = np.zeros((0, k, k))
    return log_z, marginals, pairwise


def viterbi(emissions, transitions) -> list[int]:
    """Highest-scoring tag sequence; ties resolved toward the lowest tag index."""
    E, T = _check_inputs(emissions, transitions)
    n, k = E.shape

    delta = E[0].copy()
    backptr = np.empty((n - 1, k), dtype=np.intp) if n > 1 else None
    for t in range(1, n):
        cand = delta[:, None] + T
        backptr[t - 1] = np.argmax(cand, axis=0)  # first max = lowest prev tag
        delta = E[t] + np.max(cand, axis=0)

    path = [int(np.argmax(delta))]
    for t in range(n - 2, -1, -1):
        path.append(int(backptr[t][path[-1]]))
    path.reverse()
    return path


def sequence_score(emissions, transitions, path) -> float:
    """Additive score of one labeling under the chain model."""
    E, T = _check_inputs(emissions, transitions)
    if len(path) != E.shape[0]:
        raise ValidationError("path length does not match emissions")
    score = float(E[np.arange(len(path)), path].sum())
    if len(path) > 1:
        score += float(T[path[:-1], path[1:]].sum())
    return score
