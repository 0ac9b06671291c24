"""Pipeline configuration, feature-set assembly, and the end-to-end run.

The seven feature sets: tfidf (therapist unigrams), da / mc (14-dim
tag-count blocks), tfidf+da / tfidf+mc (concatenation), and da-tfidf /
mc-tfidf (tf-idf over word|TAG augmented tokens).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CodeScores, Session, Turn, parse_corpus, write_corpus
from .errors import MissingArtifactError, ValidationError
from .evaluate import EvalReport, run_protocol
from .features import (
    FeatureMatrix,
    concat_spaces,
    fit_tfidf,
    fuse_concat,
    tag_block_space,
    tag_count_features,
    augment_tokens,
    transform_tfidf,
)
from .segmenter import DEFAULT_PAUSE_THRESHOLD, BoundaryModel, Utterance, segment_session
from .tagger import (
    TAG_SETS,
    ChainCRF,
    TaggedSession,
    TaggedUtterance,
    UtteranceClassifier,
    tag_da,
    tag_mc,
)
from .util import corpus_fingerprint, ordered_map

FEATURE_SETS = ("tfidf", "da", "mc", "tfidf+da", "tfidf+mc", "da-tfidf", "mc-tfidf")

_SET_SCHEME = {
    "tfidf": None,
    "da": "da",
    "mc": "mc",
    "tfidf+da": "da",
    "tfidf+mc": "mc",
    "da-tfidf": "da",
    "mc-tfidf": "mc",
}

DEFAULT_K_GRID = (16, 32, 64, 128)


@dataclass(frozen=True)
class PipelineConfig:
    feature_set: str = "tfidf"
    pause_threshold: float = DEFAULT_PAUSE_THRESHOLD
    segmentation: bool = True
    max_df: float = 0.95
    min_df: float = 0.05
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    svm_c: float = 1.0
    folds: int = 5
    seed: int = 0
    word_denominator: str = "therapist"
    threads: int = 1

    def __post_init__(self) -> None:
        if self.feature_set not in FEATURE_SETS:
            raise ValidationError(f"unknown feature set {self.feature_set!r}; expected one of {FEATURE_SETS}")
        if self.pause_threshold <= 0:
            raise ValidationError("pause_threshold must be positive")
        if self.folds < 2:
            raise ValidationError("folds must be at least 2")
        if not self.k_grid or any((not isinstance(k, int)) or k < 1 for k in self.k_grid):
            raise ValidationError("k_grid must be a non-empty list of positive integers")
        if self.word_denominator not in ("therapist", "session"):
            raise ValidationError("word_denominator must be 'therapist' or 'session'")
        if self.threads < 1:
            raise ValidationError("threads must be at least 1")
        if self.svm_c <= 0:
            raise ValidationError("svm C must be positive")

    def to_payload(self) -> dict:
        return {
            "feature_set": self.feature_set,
            "pause_threshold": self.pause_threshold,
            "segmentation": self.segmentation,
            "max_df": self.max_df,
            "min_df": self.min_df,
            "k_grid": list(self.k_grid),
            "svm_c": self.svm_c,
            "folds": self.folds,
            "seed": self.seed,
            "word_denominator": self.word_denominator,
            "threads": self.threads,
        }

    @classmethod
    def from_payload(cls, payload: Mapping) -> "PipelineConfig":
        kwargs = dict(payload)
        if "k_grid" in kwargs:
            kwargs["k_grid"] = tuple(int(k) for k in kwargs["k_grid"])
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown pipeline config fields: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"pipeline config not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_payload(json.load(fh))


def required_scheme(feature_set: str) -> str | None:
    if feature_set not in _SET_SCHEME:
        raise ValidationError(f"unknown feature set {feature_set!r}")
    return _SET_SCHEME[feature_set]


def utterances_to_session(tagged: TaggedSession) -> Session:
    """Materialize utterances as one turn each (segmented corpus form)."""
    return Session(
        id=tagged.id,
        turns=tuple(
            Turn(speaker=tu.utterance.speaker, tokens=tu.utterance.tokens)
            for tu in tagged.utterances
        ),
        scores=tagged.scores,
    )


def session_to_utterances(session: Session) -> TaggedSession:
    """Read a segmented corpus record back as untagged utterances."""
    utts = tuple(
        TaggedUtterance(
            Utterance(tokens=turn.tokens, speaker=turn.speaker, index_in_session=i)
        )
        for i, turn in enumerate(session.turns)
    )
    return TaggedSession(id=session.id, utterances=utts, scores=session.scores)


def segment_corpus(
    sessions: Sequence[Session],
    model: BoundaryModel | None,
    threshold: float = DEFAULT_PAUSE_THRESHOLD,
    threads: int = 1,
) -> list[TaggedSession]:
    """Segment every session into (untagged) utterances."""

    def one(session: Session) -> TaggedSession:
        utts = segment_session(session, model, threshold)
        return TaggedSession(
            id=session.id,
            utterances=tuple(TaggedUtterance(u) for u in utts),
            scores=session.scores,
        )

    return ordered_map(one, sessions, threads)


def tag_corpus(
    sessions: Sequence[TaggedSession],
    scheme: str,
    model: ChainCRF | UtteranceClassifier,
    threads: int = 1,
) -> list[TaggedSession]:
    """Tag every session's utterances with one scheme, keeping other tags."""
    if scheme not in TAG_SETS:
        raise ValidationError(f"unknown tag scheme {scheme!r}")

    def one(session: TaggedSession) -> TaggedSession:
        utts = [tu.utterance for tu in session.utterances]
        if scheme == "da":
            fresh = tag_da(utts, model)
            merged = tuple(
                TaggedUtterance(tu.utterance, da=new.da, mc=tu.mc)
                for tu, new in zip(session.utterances, fresh)
            )
        else:
            fresh = tag_mc(utts, model)
            merged = tuple(
                TaggedUtterance(tu.utterance, da=tu.da, mc=new.mc)
                for tu, new in zip(session.utterances, fresh)
            )
        return TaggedSession(id=session.id, utterances=merged, scores=session.scores)

    return ordered_map(one, sessions, threads)


def build_feature_matrix(
    sessions: Sequence[TaggedSession],
    feature_set: str,
    max_df: float = 0.95,
    min_df: float = 0.05,
    word_denominator: str = "therapist",
    threads: int = 1,
) -> FeatureMatrix:
    """Featurize a tagged corpus into one of the seven feature sets."""
    scheme_name = required_scheme(feature_set)
    ids = tuple(s.id for s in sessions)
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate session ids in corpus")
    fingerprint = corpus_fingerprint(ids)
    therapist = [s.therapist_utterances() for s in sessions]

    def block_rows(scheme) -> np.ndarray:
        rows = []
        for s, utts in zip(sessions, therapist):
            total = None
            if word_denominator == "session":
                total = sum(len(tu.utterance.tokens) for tu in s.utterances)
            rows.append(tag_count_features(utts, scheme, total_words=total))
        return np.stack(rows) if rows else np.zeros((0, 14))

    if feature_set == "tfidf":
        docs = [
            (s.id, [t.text for tu in utts for t in tu.utterance.tokens])
            for s, utts in zip(sessions, therapist)
        ]
        space = fit_tfidf(docs, max_df, min_df, provenance="tfidf")
        vecs = ordered_map(lambda d: transform_tfidf(d[1], space), docs, threads)
        X = np.stack([v.to_dense() for v in vecs]) if vecs else np.zeros((0, space.dim))
    elif feature_set in ("da", "mc"):
        scheme = TAG_SETS[feature_set]
        space = tag_block_space(scheme, fingerprint, len(sessions))
        X = block_rows(scheme)
    elif feature_set in ("tfidf+da", "tfidf+mc"):
        scheme = TAG_SETS[scheme_name]
        docs = [
            (s.id, [t.text for tu in utts for t in tu.utterance.tokens])
            for s, utts in zip(sessions, therapist)
        ]
        word_space = fit_tfidf(docs, max_df, min_df, provenance="tfidf")
        block_space = tag_block_space(scheme, word_space.fingerprint, len(sessions))
        space = concat_spaces(word_space, block_space)
        blocks = block_rows(scheme)
        vecs = ordered_map(lambda d: transform_tfidf(d[1], word_space), docs, threads)
        X = np.stack(
            [fuse_concat(v, b, space).to_dense() for v, b in zip(vecs, blocks)]
        ) if vecs else np.zeros((0, space.dim))
    else:  # da-tfidf / mc-tfidf: tf-idf over augmented tokens
        scheme = TAG_SETS[scheme_name]
        docs = [(s.id, augment_tokens(utts, scheme)) for s, utts in zip(sessions, therapist)]
        space = fit_tfidf(docs, max_df, min_df, provenance="augmented_tfidf")
        vecs = ordered_map(lambda d: transform_tfidf(d[1], space), docs, threads)
        X = np.stack([v.to_dense() for v in vecs]) if vecs else np.zeros((0, space.dim))

    return FeatureMatrix(
        set_name=feature_set,
        names=space.names,
        selectable=space.selectable,
        provenance=space.provenance,
        fingerprint=fingerprint,
        session_ids=ids,
        X=X,
        space=space,
    )


@dataclass(frozen=True)
class PipelineModels:
    """Paths to the trained models the pipeline may need."""

    boundary: str | None = None
    da: str | None = None
    mc: str | None = None


def _load_boundary(models: PipelineModels) -> BoundaryModel:
    from .serialize import load_chain_crf

    if models.boundary is None:
        raise MissingArtifactError(
            "segmentation is enabled but no boundary model was given (--boundary-model)"
        )
    return load_chain_crf(models.boundary, expect_scheme="boundary")


def _load_tagger(scheme: str, models: PipelineModels):
    from .serialize import load_chain_crf, load_utterance_classifier

    path = models.da if scheme == "da" else models.mc
    if path is None:
        raise MissingArtifactError(
            f"feature set requires the {scheme} tagger model but none was given (--{scheme}-model)"
        )
    if scheme == "da":
        return load_chain_crf(path, expect_scheme="da")
    return load_utterance_classifier(path, expect_scheme="mc")


def run_end_to_end(
    config: PipelineConfig,
    corpus_path: str | Path,
    models: PipelineModels,
    out_dir: str | Path,
    scores: Mapping[str, CodeScores] | None = None,
) -> tuple[EvalReport, dict[str, Path]]:
    """segment (unless disabled) -> tag -> featurize -> evaluate, writing artifacts.

    With segmentation disabled, each pause-split fragment is one utterance.
    The evaluation report depends only on the feature matrix, labels, and
    protocol parameters, so feature sets that ignore utterance boundaries
    produce identical reports with segmentation on or off.
    """
    from .serialize import save_artifact, save_report, write_matrix, write_tagged_corpus

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sessions = parse_corpus(corpus_path)

    boundary = _load_boundary(models) if config.segmentation else None
    segmented = segment_corpus(sessions, boundary, config.pause_threshold, config.threads)
    segmented_path = out_dir / "corpus_segmented.jsonl"
    write_corpus([utterances_to_session(s) for s in segmented], segmented_path)

    scheme = required_scheme(config.feature_set)
    if scheme is not None:
        tagger_model = _load_tagger(scheme, models)
        tagged = tag_corpus(segmented, scheme, tagger_model, config.threads)
    else:
        tagged = segmented
    tagged_path = out_dir / "corpus_tagged.jsonl"
    write_tagged_corpus(tagged, tagged_path)

    matrix = build_feature_matrix(
        tagged,
        config.feature_set,
        config.max_df,
        config.min_df,
        config.word_denominator,
        config.threads,
    )
    matrix_path = out_dir / f"features_{config.feature_set.replace('+', '_')}.mtx"
    write_matrix(matrix, matrix_path)

    if scores is None:
        scores = {s.id: s.scores for s in sessions if s.scores is not None}
    report = run_protocol(matrix, scores, config.folds, config.seed, config.k_grid, config.svm_c)
    report_path = out_dir / "report.json"
    save_report(report, report_path)
    table_path = out_dir / "report.txt"
    table_path.write_text(report.format_table(), encoding="utf-8")
    manifest_path = out_dir / "run_manifest.json"
    save_artifact(manifest_path, "run_manifest", {"config": config.to_payload()})

    return report, {
        "segmented": segmented_path,
        "tagged": tagged_path,
        "matrix": matrix_path,
        "report": report_path,
        "table": table_path,
        "manifest": manifest_path,
    }
