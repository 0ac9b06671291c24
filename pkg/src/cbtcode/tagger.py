"""Utterance taggers: a linear-chain CRF for dialog acts and a multinomial
linear classifier for MI skill codes, plus the shared training machinery.

Both models score an utterance from lowercased unigrams, bigrams, a length
bucket, and a bias feature.  The DA tagger decodes a whole session's
utterance sequence jointly (therapist and patient interleaved, in order);
the MC tagger labels each utterance independently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Sequence

import numpy as np

from .chain import viterbi
from .corpus import CodeScores
from .errors import ValidationError
from .optimize import OptResult, minimize_lbfgs

if TYPE_CHECKING:  # segmenter imports this module at runtime
    from .segmenter import Utterance

FeatureSeq = Sequence[Sequence[str]]
LabeledSequence = tuple[FeatureSeq, Sequence[str]]


@dataclass(frozen=True)
class TagSet:
    """A named, ordered utterance label scheme."""

    name: str
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError(f"tag set {self.name!r} has duplicate labels")
        if not self.labels:
            raise ValidationError(f"tag set {self.name!r} is empty")

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown {self.name} tag {label!r}") from None


DA_TAG_SET = TagSet(
    "da",
    ("Question", "Statement", "Agreement", "Other", "Appreciation", "Incomplete", "Backchannel"),
)
# Reflections are a single class RE (simple/complex variants are not separated).
MC_TAG_SET = TagSet("mc", ("FA", "GI", "RE", "QUC", "QUO", "MIA", "MIN"))
TAG_SETS: dict[str, TagSet] = {"da": DA_TAG_SET, "mc": MC_TAG_SET}

UTTERANCE_FEATURE_TEMPLATE = "unigram+bigram+length-bucket+bias"


def _length_bucket(n: int) -> str:
    if n <= 3:
        return str(n)
    if n <= 5:
        return "4-5"
    if n <= 8:
        return "6-8"
    if n <= 15:
        return "9-15"
    return "16+"


def utterance_features(words: Sequence[str]) -> list[str]:
    """Emission features for one utterance (case stripped)."""
    low = [w.lower() for w in words]
    feats = ["bias", "len=" + _length_bucket(len(low))]
    feats.extend("w=" + w for w in low)
    feats.extend("b=" + a + " " + b for a, b in zip(low, low[1:]))
    return feats


@dataclass(frozen=True)
class TaggedUtterance:
    """An utterance plus its (optional) DA and MC tags."""

    utterance: Utterance
    da: str | None = None
    mc: str | None = None

    def __post_init__(self) -> None:
        if self.da is not None and self.da not in DA_TAG_SET.labels:
            raise ValidationError(f"unknown da tag {self.da!r}")
        if self.mc is not None and self.mc not in MC_TAG_SET.labels:
            raise ValidationError(f"unknown mc tag {self.mc!r}")

    def tag(self, scheme: str) -> str | None:
        return self.da if scheme == "da" else self.mc


@dataclass(frozen=True)
class TaggedSession:
    """A session in utterance form, optionally tagged and scored."""

    id: str
    utterances: tuple[TaggedUtterance, ...]
    scores: CodeScores | None = None

    def therapist_utterances(self) -> list[TaggedUtterance]:
        return [tu for tu in self.utterances if tu.utterance.speaker == "therapist"]


# ---------------------------------------------------------------------------
# Chain CRF


@dataclass(frozen=True)
class ChainCRF:
    """Linear-chain CRF with named emission features and dense transitions."""

    scheme: str
    labels: tuple[str, ...]
    feature_names: tuple[str, ...]
    weights: np.ndarray  # (n_features, n_labels)
    transitions: np.ndarray  # (n_labels, n_labels)
    l2: float
    seed: int
    n_iter: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    feature_template: str = UTTERANCE_FEATURE_TEMPLATE

    @cached_property
    def _feature_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.feature_names)}

    def emission_matrix(self, feats_per_pos: FeatureSeq) -> np.ndarray:
        idx = self._feature_index
        k = len(self.labels)
        E = np.zeros((len(feats_per_pos), k))
        for t, feats in enumerate(feats_per_pos):
            for f in feats:
                j = idx.get(f)
                if j is not None:
                    E[t] += self.weights[j]
        return E

    def decode(self, feats_per_pos: FeatureSeq) -> list[int]:
        if not feats_per_pos:
            return []
        return viterbi(self.emission_matrix(feats_per_pos), self.transitions)


class _CrfData:
    """Sequences packed by length so the forward-backward loop vectorizes."""

    def __init__(self, sequences: list[tuple[list[np.ndarray], np.ndarray]], n_labels: int):
        self.n_labels = n_labels
        self.n_sequences = len(sequences)
        by_len: dict[int, list[tuple[list[np.ndarray], np.ndarray]]] = {}
        for seq in sequences:
            by_len.setdefault(len(seq[1]), []).append(seq)
        self.groups = []
        for length in sorted(by_len):
            batch = by_len[length]
            b = len(batch)
            gold = np.stack([g for _, g in batch])  # (b, length)
            ids_flat: list[np.ndarray] = []
            rows: list[np.ndarray] = []
            for bi, (feats, _) in enumerate(batch):
                for t, ids in enumerate(feats):
                    ids_flat.append(ids)
                    rows.append(np.full(len(ids), bi * length + t, dtype=np.intp))
            ids_cat = np.concatenate(ids_flat) if ids_flat else np.empty(0, dtype=np.intp)
            rows_cat = np.concatenate(rows) if rows else np.empty(0, dtype=np.intp)
            self.groups.append((length, b, ids_cat, rows_cat, gold))


def _prepare_sequences(
    data: Iterable[LabeledSequence],
    label_index: Mapping[str, int],
    feature_index: Mapping[str, int],
    *,
    drop_unknown: bool,
) -> list[tuple[list[np.ndarray], np.ndarray]]:
    out = []
    for si, (feats_per_pos, labels) in enumerate(data):
        if len(feats_per_pos) != len(labels):
            raise ValidationError(f"sequence {si}: features and labels differ in length")
        if len(labels) == 0:
            raise ValidationError(f"sequence {si} is empty")
        gold = np.empty(len(labels), dtype=np.intp)
        for t, lab in enumerate(labels):
            if lab not in label_index:
                raise ValidationError(f"sequence {si}: unknown gold tag {lab!r}")
            gold[t] = label_index[lab]
        id_rows = []
        for feats in feats_per_pos:
            if drop_unknown:
                ids = [feature_index[f] for f in feats if f in feature_index]
            else:
                ids = [feature_index[f] for f in feats]
            id_rows.append(np.asarray(ids, dtype=np.intp))
        out.append((id_rows, gold))
    return out


def _crf_objective(packed: _CrfData, n_features: int, l2: float) -> Callable:
    """Negative penalized log-likelihood and gradient over [W.flat, T.flat]."""
    k = packed.n_labels

    def fun(theta: np.ndarray) -> tuple[float, np.ndarray]:
        W = theta[: n_features * k].reshape(n_features, k)
        T = theta[n_features * k :].reshape(k, k)
        loglik = 0.0
        obs_minus_exp_W = np.zeros_like(W)
        obs_minus_exp_T = np.zeros_like(T)

        for length, b, ids_cat, rows_cat, gold in packed.groups:
            E_flat = np.zeros((b * length, k))
            if len(ids_cat):
                np.add.at(E_flat, rows_cat, W[ids_cat])
            E = E_flat.reshape(b, length, k)

            alpha = np.empty((length, b, k))
            alpha[0] = E[:, 0]
            for t in range(1, length):
                m = alpha[t - 1][:, :, None] + T[None, :, :]
                mm = m.max(axis=1, keepdims=True)
                alpha[t] = E[:, t] + (mm[:, 0, :] + np.log(np.exp(m - mm).sum(axis=1)))
            beta = np.zeros((length, b, k))
            for t in range(length - 2, -1, -1):
                m = T[None, :, :] + (E[:, t + 1] + beta[t + 1])[:, None, :]
                mm = m.max(axis=2, keepdims=True)
                beta[t] = mm[:, :, 0] + np.log(np.exp(m - mm).sum(axis=2))

            last = alpha[length - 1]
            lm = last.max(axis=1)
            log_z = lm + np.log(np.exp(last - lm[:, None]).sum(axis=1))  # (b,)

            # Unary residuals: gold one-hot minus marginals.
            marg = np.exp(alpha.transpose(1, 0, 2) + beta.transpose(1, 0, 2) - log_z[:, None, None])
            resid = -marg.reshape(b * length, k)
            flat_gold = gold.reshape(-1)
            resid[np.arange(b * length), flat_gold] += 1.0
            if len(ids_cat):
                np.add.at(obs_minus_exp_W, ids_cat, resid[rows_cat])

            gold_score = E.reshape(b * length, k)[np.arange(b * length), flat_gold].reshape(b, length).sum(axis=1)
            if length > 1:
                gold_score = gold_score + T[gold[:, :-1], gold[:, 1:]].sum(axis=1)
                for t in range(length - 1):
                    pair = np.exp(
                        alpha[t][:, :, None]
                        + T[None, :, :]
                        + (E[:, t + 1] + beta[t + 1])[:, None, :]
                        - log_z[:, None, None]
                    )
                    obs_minus_exp_T -= pair.sum(axis=0)
                np.add.at(
                    obs_minus_exp_T,
                    (gold[:, :-1].reshape(-1), gold[:, 1:].reshape(-1)),
                    1.0,
                )
            loglik += float((gold_score - log_z).sum())

        penalty = 0.5 * l2 * (float(np.dot(W.reshape(-1), W.reshape(-1))) + float(np.dot(T.reshape(-1), T.reshape(-1))))
        nll = -loglik + penalty
        grad = np.concatenate(
            [
                (-obs_minus_exp_W + l2 * W).reshape(-1),
                (-obs_minus_exp_T + l2 * T).reshape(-1),
            ]
        )
        return nll, grad

    return fun


def train_chain_crf(
    data: Sequence[LabeledSequence],
    labels: tuple[str, ...] | TagSet,
    *,
    l2: float = 0.1,
    seed: int = 0,
    scheme: str | None = None,
    tol: float = 1e-4,
    max_iter: int = 500,
    feature_template: str = UTTERANCE_FEATURE_TEMPLATE,
) -> ChainCRF:
    """Fit a chain CRF by penalized maximum likelihood (deterministic)."""
    if isinstance(labels, TagSet):
        scheme = scheme or labels.name
        labels = labels.labels
    if scheme is None:
        scheme = "chain"
    if not data:
        raise ValidationError("no training sequences")
    label_index = {lab: i for i, lab in enumerate(labels)}
    names = sorted({f for feats_per_pos, _ in data for feats in feats_per_pos for f in feats})
    feature_index = {f: i for i, f in enumerate(names)}
    sequences = _prepare_sequences(data, label_index, feature_index, drop_unknown=False)
    packed = _CrfData(sequences, len(labels))
    fun = _crf_objective(packed, len(names), float(l2))
    theta0 = np.zeros(len(names) * len(labels) + len(labels) ** 2)
    res = minimize_lbfgs(fun, theta0, tol=tol, max_iter=max_iter)
    if not res.converged:
        warnings.warn(
            f"chain CRF training stopped at max_iter={max_iter} with gradient norm "
            f"{res.grad_norm:.3e} > {tol:.0e}",
            stacklevel=2,
        )
    k = len(labels)
    W = res.x[: len(names) * k].reshape(len(names), k)
    T = res.x[len(names) * k :].reshape(k, k)
    return ChainCRF(
        scheme=scheme,
        labels=tuple(labels),
        feature_names=tuple(names),
        weights=W,
        transitions=T,
        l2=float(l2),
        seed=int(seed),
        n_iter=res.n_iter,
        grad_norm=res.grad_norm,
        converged=res.converged,
        feature_template=feature_template,
    )


def crf_loglik_grad(model: ChainCRF, data: Sequence[LabeledSequence]) -> tuple[float, np.ndarray]:
    """Penalized log-likelihood and its gradient at the model's weights.

    The gradient is ordered [emission weights (row-major), transitions
    (row-major)] and equals observed minus expected feature counts minus the
    L2 term.
    """
    label_index = {lab: i for i, lab in enumerate(model.labels)}
    sequences = _prepare_sequences(data, label_index, model._feature_index, drop_unknown=True)
    packed = _CrfData(sequences, len(model.labels))
    fun = _crf_objective(packed, len(model.feature_names), model.l2)
    theta = np.concatenate([model.weights.reshape(-1), model.transitions.reshape(-1)])
    nll, grad = fun(theta)
    return -nll, -grad


def crf_training_objective(
    data: Sequence[LabeledSequence],
    labels: tuple[str, ...],
    feature_names: Sequence[str],
    l2: float,
) -> Callable:
    """The exact objective train_chain_crf minimizes, exposed for testing."""
    label_index = {lab: i for i, lab in enumerate(labels)}
    feature_index = {f: i for i, f in enumerate(feature_names)}
    sequences = _prepare_sequences(data, label_index, feature_index, drop_unknown=False)
    packed = _CrfData(sequences, len(labels))
    return _crf_objective(packed, len(feature_names), float(l2))


def tag_da(utterances: Sequence[Utterance], model: ChainCRF) -> list[TaggedUtterance]:
    """Tag a session's utterance sequence with dialog acts via Viterbi."""
    if model.scheme != "da":
        raise ValidationError(f"model tags scheme {model.scheme!r}, expected 'da'")
    if not utterances:
        return []
    feats = [utterance_features([t.text for t in u.tokens]) for u in utterances]
    path = model.decode(feats)
    return [TaggedUtterance(u, da=model.labels[i]) for u, i in zip(utterances, path)]


# ---------------------------------------------------------------------------
# Per-utterance multinomial classifier (MC tags)


@dataclass(frozen=True)
class UtteranceClassifier:
    """Linear multinomial classifier over utterance features."""

    scheme: str
    labels: tuple[str, ...]
    feature_names: tuple[str, ...]
    weights: np.ndarray  # (n_features, n_labels)
    bias: np.ndarray  # (n_labels,)
    l2: float
    seed: int
    n_iter: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    feature_template: str = UTTERANCE_FEATURE_TEMPLATE

    @cached_property
    def _feature_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.feature_names)}

    def scores(self, words: Sequence[str]) -> np.ndarray:
        s = self.bias.copy()
        idx = self._feature_index
        for f in utterance_features(words):
            j = idx.get(f)
            if j is not None:
                s += self.weights[j]
        return s

    def predict(self, words: Sequence[str]) -> str:
        return self.labels[int(np.argmax(self.scores(words)))]


def _multinomial_objective(
    ids_cat: np.ndarray,
    rows_cat: np.ndarray,
    gold: np.ndarray,
    n_examples: int,
    n_features: int,
    n_labels: int,
    l2: float,
) -> Callable:
    def fun(theta: np.ndarray) -> tuple[float, np.ndarray]:
        W = theta[: n_features * n_labels].reshape(n_features, n_labels)
        b = theta[n_features * n_labels :]
        S = np.tile(b, (n_examples, 1))
        if len(ids_cat):
            np.add.at(S, rows_cat, W[ids_cat])
        m = S.max(axis=1, keepdims=True)
        log_z = m[:, 0] + np.log(np.exp(S - m).sum(axis=1))
        nll = float((log_z - S[np.arange(n_examples), gold]).sum())
        nll += 0.5 * l2 * float(np.dot(W.reshape(-1), W.reshape(-1)))

        probs = np.exp(S - log_z[:, None])
        resid = probs
        resid[np.arange(n_examples), gold] -= 1.0  # d nll / d score
        gW = np.zeros_like(W)
        if len(ids_cat):
            np.add.at(gW, ids_cat, resid[rows_cat])
        gW += l2 * W
        gb = resid.sum(axis=0)
        return nll, np.concatenate([gW.reshape(-1), gb])

    return fun


def multinomial_training_objective(
    examples: Sequence[tuple[Sequence[str], str]],
    labels: tuple[str, ...],
    feature_names: Sequence[str],
    l2: float,
) -> Callable:
    """Objective over [W.flat, bias] for labeled (words, tag) examples."""
    label_index = {lab: i for i, lab in enumerate(labels)}
    feature_index = {f: i for i, f in enumerate(feature_names)}
    ids_flat, rows = [], []
    gold = np.empty(len(examples), dtype=np.intp)
    for i, (words, lab) in enumerate(examples):
        if lab not in label_index:
            raise ValidationError(f"unknown tag {lab!r}")
        gold[i] = label_index[lab]
        ids = np.asarray(
            [feature_index[f] for f in utterance_features(words) if f in feature_index],
            dtype=np.intp,
        )
        ids_flat.append(ids)
        rows.append(np.full(len(ids), i, dtype=np.intp))
    ids_cat = np.concatenate(ids_flat) if ids_flat else np.empty(0, dtype=np.intp)
    rows_cat = np.concatenate(rows) if rows else np.empty(0, dtype=np.intp)
    return _multinomial_objective(
        ids_cat, rows_cat, gold, len(examples), len(feature_names), len(labels), float(l2)
    )


def train_utterance_classifier(
    data: Sequence[tuple[Sequence[str], str]],
    *,
    tag_set: TagSet = MC_TAG_SET,
    l2: float = 0.1,
    seed: int = 0,
    tol: float = 1e-4,
    max_iter: int = 500,
) -> UtteranceClassifier:
    """Fit the multinomial utterance classifier (deterministic)."""
    if not data:
        raise ValidationError("no training utterances")
    present = {lab for _, lab in data}
    for lab in tag_set.labels:
        if lab not in present:
            raise ValidationError(f"class {lab!r} absent from training data")
    names = sorted({f for words, _ in data for f in utterance_features(words)})
    fun = multinomial_training_objective(data, tag_set.labels, names, l2)
    k = len(tag_set.labels)
    theta0 = np.zeros(len(names) * k + k)
    res: OptResult = minimize_lbfgs(fun, theta0, tol=tol, max_iter=max_iter)
    if not res.converged:
        warnings.warn(
            f"utterance classifier stopped at max_iter={max_iter} with gradient norm "
            f"{res.grad_norm:.3e} > {tol:.0e}",
            stacklevel=2,
        )
    return UtteranceClassifier(
        scheme=tag_set.name,
        labels=tag_set.labels,
        feature_names=tuple(names),
        weights=res.x[: len(names) * k].reshape(len(names), k),
        bias=res.x[len(names) * k :],
        l2=float(l2),
        seed=int(seed),
        n_iter=res.n_iter,
        grad_norm=res.grad_norm,
        converged=res.converged,
    )


def tag_mc(utterances: Sequence[Utterance], model: UtteranceClassifier) -> list[TaggedUtterance]:
    """Tag each utterance independently with an MI skill code."""
    if model.scheme != "mc":
        raise ValidationError(f"model tags scheme {model.scheme!r}, expected 'mc'")
    return [TaggedUtterance(u, mc=model.predict([t.text for t in u.tokens])) for u in utterances]


# ---------------------------------------------------------------------------
# Training-data builders from gold-tagged sessions


def da_training_sequences(sessions: Sequence[TaggedSession]) -> list[LabeledSequence]:
    out: list[LabeledSequence] = []
    for s in sessions:
        feats = []
        labels = []
        for tu in s.utterances:
            if tu.da is None:
                raise ValidationError(f"session {s.id}: utterance without a da tag")
            feats.append(utterance_features([t.text for t in tu.utterance.tokens]))
            labels.append(tu.da)
        if feats:
            out.append((feats, labels))
    return out


def mc_training_examples(sessions: Sequence[TaggedSession]) -> list[tuple[list[str], str]]:
    out: list[tuple[list[str], str]] = []
    for s in sessions:
        for tu in s.utterances:
            if tu.mc is None:
                raise ValidationError(f"session {s.id}: utterance without an mc tag")
            out.append(([t.text for t in tu.utterance.tokens], tu.mc))
    return out
