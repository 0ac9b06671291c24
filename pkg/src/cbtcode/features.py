"""Feature extraction and fusion.

Word-level features are tf-idf over unigrams of the therapist's tokens
(idf = ln((1+N)/(1+df)) + 1, raw counts, L2-normalized vectors, inclusive
document-frequency pruning bounds).  Utterance-level features are 14-dim
tag-count blocks (per tag: utterance proportion, then word proportion).
Fusion is either concatenation or word augmentation, where each token is
rewritten as "word|TAG" before tf-idf so the same word in different
utterance contexts becomes distinct vocabulary.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .tagger import TagSet, TaggedUtterance
from .util import corpus_fingerprint

PROVENANCES = ("tfidf", "tag_counts", "augmented_tfidf", "concat")


@dataclass(frozen=True)
class FeatureSpace:
    """A named, ordered feature vocabulary with document statistics."""

    names: tuple[str, ...]
    df: tuple[int, ...]
    idf: np.ndarray
    max_df: float
    min_df: float
    provenance: str
    n_docs: int
    fingerprint: str
    selectable: tuple[bool, ...]

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("feature names must be unique")
        if len(self.names) != len(self.selectable) or len(self.names) != len(self.idf):
            raise ValidationError("feature space fields disagree in length")

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}


@dataclass(frozen=True)
class SparseFeatureVector:
    """(index, value) pairs sorted by index over a feature space."""

    indices: tuple[int, ...]
    values: tuple[float, ...]
    dim: int
    fingerprint: str

    def __post_init__(self) -> None:
        if len(self.indices) != len(self.values):
            raise ValidationError("indices/values length mismatch")
        prev = -1
        for i in self.indices:
            if i <= prev or i >= self.dim:
                raise ValidationError("indices must be strictly increasing and within the space")
            prev = i
        if any(not math.isfinite(v) for v in self.values):
            raise ValidationError("feature values must be finite")

    def to_dense(self) -> np.ndarray:
        x = np.zeros(self.dim)
        if self.indices:
            x[list(self.indices)] = self.values
        return x


def _dense_to_sparse(x: np.ndarray, fingerprint: str) -> SparseFeatureVector:
    nz = np.flatnonzero(x)
    return SparseFeatureVector(
        indices=tuple(int(i) for i in nz),
        values=tuple(float(x[i]) for i in nz),
        dim=len(x),
        fingerprint=fingerprint,
    )


# ---------------------------------------------------------------------------
# tf-idf


def fit_tfidf(
    documents: Sequence[tuple[str, Sequence[str]]],
    max_df: float = 0.95,
    min_df: float = 0.05,
    provenance: str = "tfidf",
) -> FeatureSpace:
    """Fit a unigram tf-idf vocabulary over (session_id, tokens) documents.

    A term is retained iff min_df <= df/N <= max_df with both bounds
    inclusive; idf(t) = ln((1+N)/(1+df(t))) + 1.
    """
    if not documents:
        raise ValidationError("no documents to fit tf-idf on")
    if not (0.0 <= min_df < max_df <= 1.0):
        raise ValidationError(f"need 0 <= min_df < max_df <= 1, got min_df={min_df}, max_df={max_df}")
    n = len(documents)
    df_counter: Counter[str] = Counter()
    for _, tokens in documents:
        df_counter.update(set(tokens))
    kept = [t for t in sorted(df_counter) if min_df <= df_counter[t] / n <= max_df]
    if not kept:
        raise ValidationError(
            f"tf-idf vocabulary is empty after document-frequency pruning "
            f"(min_df={min_df}, max_df={max_df}); widen the bounds"
        )
    df = tuple(df_counter[t] for t in kept)
    idf = np.array([math.log((1 + n) / (1 + d)) + 1.0 for d in df])
    return FeatureSpace(
        names=tuple(kept),
        df=df,
        idf=idf,
        max_df=max_df,
        min_df=min_df,
        provenance=provenance,
        n_docs=n,
        fingerprint=corpus_fingerprint([sid for sid, _ in documents]),
        selectable=tuple(True for _ in kept),
    )


def transform_tfidf(tokens: Sequence[str], space: FeatureSpace) -> SparseFeatureVector:
    """count(t) * idf(t), L2-normalized; out-of-vocabulary terms are ignored."""
    index = space.index()
    counts: Counter[int] = Counter()
    for t in tokens:
        j = index.get(t)
        if j is not None:
            counts[j] += 1
    if not counts:
        return SparseFeatureVector((), (), space.dim, space.fingerprint)
    idx = sorted(counts)
    vals = np.array([counts[j] * space.idf[j] for j in idx])
    vals /= np.linalg.norm(vals)
    return SparseFeatureVector(tuple(idx), tuple(float(v) for v in vals), space.dim, space.fingerprint)


# ---------------------------------------------------------------------------
# Tag-count blocks and word augmentation


def tag_block_space(scheme: TagSet, fingerprint: str, n_docs: int) -> FeatureSpace:
    """The 14-dim feature space of a tag-count block (not subject to selection)."""
    names = [f"{scheme.name}:utt:{t}" for t in scheme.labels]
    names += [f"{scheme.name}:wrd:{t}" for t in scheme.labels]
    k = len(names)
    return FeatureSpace(
        names=tuple(names),
        df=tuple(n_docs for _ in names),
        idf=np.ones(k),
        max_df=1.0,
        min_df=0.0,
        provenance="tag_counts",
        n_docs=n_docs,
        fingerprint=fingerprint,
        selectable=tuple(False for _ in names),
    )


def tag_count_features(
    tagged: Sequence[TaggedUtterance],
    scheme: TagSet,
    *,
    total_words: int | None = None,
) -> np.ndarray:
    """Utterance- and word-proportion counts per tag (2 x 7 = 14 values).

    The first 7 entries are utterance proportions in tag order, the last 7
    word proportions.  total_words overrides the word denominator (used when
    word proportions are normalized by the whole session rather than the
    therapist side); it must be at least the tagged utterances' word count.
    """
    k = len(scheme.labels)
    out = np.zeros(2 * k)
    if not tagged:
        warnings.warn(f"no utterances to count {scheme.name} tags over; emitting a zero block", stacklevel=2)
        return out
    utt_counts = np.zeros(k)
    word_counts = np.zeros(k)
    n_words = 0
    for tu in tagged:
        tag = tu.tag(scheme.name)
        if tag is None:
            raise ValidationError(f"utterance without a {scheme.name} tag")
        j = scheme.index(tag)
        w = len(tu.utterance.tokens)
        utt_counts[j] += 1
        word_counts[j] += w
        n_words += w
    denom_words = n_words if total_words is None else int(total_words)
    if denom_words < n_words:
        raise ValidationError("total_words is smaller than the tagged utterances' word count")
    out[:k] = utt_counts / len(tagged)
    if denom_words > 0:
        out[k:] = word_counts / denom_words
    return out


def augment_tokens(tagged: Sequence[TaggedUtterance], scheme: TagSet) -> list[str]:
    """Rewrite each token as word|TAG using its utterance's tag, order preserved."""
    out: list[str] = []
    for tu in tagged:
        tag = tu.tag(scheme.name)
        if tag is None:
            raise ValidationError(f"cannot augment: utterance without a {scheme.name} tag")
        out.extend(f"{tok.text}|{tag}" for tok in tu.utterance.tokens)
    return out


# ---------------------------------------------------------------------------
# Fusion by concatenation


def concat_spaces(word_space: FeatureSpace, block_space: FeatureSpace) -> FeatureSpace:
    """Concatenated space: word-level features first, tag block second."""
    if word_space.fingerprint != block_space.fingerprint:
        raise ValidationError(
            "cannot concatenate feature spaces fitted on different corpora "
            f"({word_space.fingerprint} vs {block_space.fingerprint})"
        )
    names = tuple(f"{word_space.provenance}:{n}" for n in word_space.names) + block_space.names
    return FeatureSpace(
        names=names,
        df=word_space.df + block_space.df,
        idf=np.concatenate([word_space.idf, block_space.idf]),
        max_df=word_space.max_df,
        min_df=word_space.min_df,
        provenance="concat",
        n_docs=word_space.n_docs,
        fingerprint=word_space.fingerprint,
        selectable=word_space.selectable + block_space.selectable,
    )


def fuse_concat(
    word_vec: SparseFeatureVector,
    block: SparseFeatureVector | np.ndarray,
    fused: FeatureSpace,
) -> SparseFeatureVector:
    """Concatenate a word-level vector with a tag block (word-level first)."""
    if isinstance(block, SparseFeatureVector):
        if block.fingerprint != fused.fingerprint:
            raise ValidationError("tag block comes from a different corpus than the fused space")
        block_dense = block.to_dense()
    else:
        block_dense = np.asarray(block, dtype=float)
    if word_vec.fingerprint != fused.fingerprint:
        raise ValidationError("word-level vector comes from a different corpus than the fused space")
    word_dim = fused.dim - len(block_dense)
    if word_vec.dim != word_dim:
        raise ValidationError(
            f"dimension mismatch: word vector dim {word_vec.dim}, expected {word_dim}"
        )
    dense = np.concatenate([word_vec.to_dense(), block_dense])
    return _dense_to_sparse(dense, fused.fingerprint)


# ---------------------------------------------------------------------------
# Univariate F scores, K-best selection, z-normalization


def anova_f_scores(X: np.ndarray, y: Sequence[bool]) -> np.ndarray:
    """One-way ANOVA F statistic of each feature against a binary label.

    Zero within-group variance with distinct means gives +inf (ranked
    first); zero between-group variance gives 0.
    """
    X = np.asarray(X, dtype=float)
    yb = np.asarray(y, dtype=bool)
    if X.shape[0] != len(yb):
        raise ValidationError("X and y disagree in sample count")
    n1 = int(yb.sum())
    n0 = len(yb) - n1
    if n0 == 0 or n1 == 0:
        raise ValidationError("both classes must be present to compute F scores")
    n = len(yb)
    mean0 = X[~yb].mean(axis=0)
    mean1 = X[yb].mean(axis=0)
    grand = X.mean(axis=0)
    ss_between = n0 * (mean0 - grand) ** 2 + n1 * (mean1 - grand) ** 2
    ss_within = ((X[~yb] - mean0) ** 2).sum(axis=0) + ((X[yb] - mean1) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = ss_between / (ss_within / max(n - 2, 1))
    f[ss_within == 0.0] = np.inf
    f[ss_between == 0.0] = 0.0
    return f


def top_k_mask(f_scores: np.ndarray, selectable: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask keeping the k best selectable features plus every
    non-selectable one.  Ties rank the lower feature index first."""
    selectable = np.asarray(selectable, dtype=bool)
    mask = ~selectable  # non-selectable features are always kept
    sel_idx = np.flatnonzero(selectable)
    if k > 0 and len(sel_idx):
        k = min(k, len(sel_idx))
        order = np.lexsort((sel_idx, -f_scores[sel_idx]))
        mask[sel_idx[order[:k]]] = True
    return mask


def select_k_by_cv(
    X: np.ndarray,
    session_ids: Sequence[str],
    selectable: Sequence[bool],
    y_total: Mapping[str, bool],
    k_grid: Sequence[int],
    folds: int,
    seed: int,
    svm_c: float = 1.0,
) -> tuple[int, np.ndarray]:
    """Choose K by cross-validated pooled F1 on the total-score labels.

    For each k in the grid, F scores are recomputed inside every training
    fold.  Ties prefer the smallest k.  Returns the chosen k and the top-k
    mask computed on the full data (for inspection; the evaluation protocol
    refits per fold).
    """
    from .evaluate import cv_pooled_counts, make_folds, pooled_f1

    if not k_grid:
        raise ValidationError("k grid is empty")
    if any(k < 1 for k in k_grid):
        raise ValidationError("k grid entries must be positive")
    selectable = np.asarray(selectable, dtype=bool)
    n_selectable = int(selectable.sum())
    if n_selectable == 0:
        # Nothing is subject to selection (pure tag-count sets).
        return 0, ~selectable
    y = np.array([_require_label(y_total, sid) for sid in session_ids], dtype=bool)
    plan = make_folds(session_ids, folds, seed, dict(zip(session_ids, (bool(v) for v in y))))
    best_k = None
    best_f1 = -1.0
    for k in sorted({min(k, n_selectable) for k in k_grid}):
        counts = cv_pooled_counts(X, session_ids, selectable, y, plan, k, svm_c)
        f1 = pooled_f1([(tp, fp, fn) for tp, fp, fn, _ in counts])
        if f1 > best_f1:
            best_f1 = f1
            best_k = k
    full_scores = anova_f_scores(X, y)
    return int(best_k), top_k_mask(full_scores, selectable, int(best_k))


def _require_label(labels: Mapping[str, bool], sid: str) -> bool:
    if sid not in labels:
        raise ValidationError(f"missing label for session {sid!r}")
    return bool(labels[sid])


@dataclass(frozen=True)
class ScalerStats:
    """Per-feature mean and standard deviation estimated on training data."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        if self.mean.shape != self.std.shape:
            raise ValidationError("scaler mean/std shape mismatch")
        if np.any(self.std < 0):
            raise ValidationError("scaler std must be non-negative")


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-session feature rows plus the metadata the protocol needs.

    space carries the fitted FeatureSpace when the matrix was built in
    process; it is not stored in the matrix file.
    """

    set_name: str
    names: tuple[str, ...]
    selectable: tuple[bool, ...]
    provenance: str
    fingerprint: str
    session_ids: tuple[str, ...]
    X: np.ndarray
    space: "FeatureSpace | None" = None

    def __post_init__(self) -> None:
        if self.X.shape != (len(self.session_ids), len(self.names)):
            raise ValidationError(
                f"matrix shape {self.X.shape} disagrees with {len(self.session_ids)} sessions "
                f"x {len(self.names)} features"
            )
        if len(self.selectable) != len(self.names):
            raise ValidationError("selectable flags disagree with feature names")
        if len(set(self.session_ids)) != len(self.session_ids):
            raise ValidationError("duplicate session ids in feature matrix")


def fit_scaler(X: np.ndarray) -> ScalerStats:
    X = np.asarray(X, dtype=float)
    if X.size == 0 or X.shape[0] == 0:
        raise ValidationError("cannot fit a scaler on an empty matrix")
    return ScalerStats(mean=X.mean(axis=0), std=X.std(axis=0))


def apply_scaler(X: np.ndarray, stats: ScalerStats) -> np.ndarray:
    """(x - mean) / std per feature; zero-variance features map to 0."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != stats.mean.shape[0]:
        raise ValidationError(
            f"dimension mismatch: data has {X.shape[-1]} features, scaler has {stats.mean.shape[0]}"
        )
    safe = np.where(stats.std == 0.0, 1.0, stats.std)
    out = (X - stats.mean) / safe
    return np.where(stats.std == 0.0, 0.0, out)
