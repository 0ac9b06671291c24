"""Versioned artifact files.

Every artifact is self-describing: JSON files carry format_version, a kind
tag, and tool metadata; the sparse matrix file carries the same fields in
its header.  Writers are byte-deterministic (sorted keys, no timestamps) so
identical runs produce identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .corpus import CodeScores, session_from_record, session_to_record
from .errors import MissingArtifactError, ParseError, ValidationError
from .evaluate import EvalReport, FiveByTwoResult
from .features import FeatureMatrix
from .segmenter import Utterance
from .svm import LinearModel
from .tagger import ChainCRF, TaggedSession, TaggedUtterance, UtteranceClassifier

FORMAT_VERSION = 1


def _meta() -> dict:
    return {"tool": "cbtcode", "version": __version__}


def save_artifact(path: str | Path, kind: str, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"format_version": FORMAT_VERSION, "kind": kind, "meta": _meta(), "payload": payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, allow_nan=False, separators=(",", ": "), indent=1)
        fh.write("\n")


def load_artifact(path: str | Path, kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{kind} artifact not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    if doc.get("kind") != kind:
        raise ValidationError(f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}")
    return doc["payload"]


# ---------------------------------------------------------------------------
# Tagged corpus (utterance-level) JSONL


def tagged_session_to_record(session: TaggedSession) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "id": session.id,
        "scores": session.scores.to_dict() if session.scores is not None else None,
        "utterances": [
            {
                "speaker": tu.utterance.speaker,
                "index": tu.utterance.index_in_session,
                "tokens": [
                    {"text": t.text, "start_s": t.start_s, "end_s": t.end_s}
                    for t in tu.utterance.tokens
                ],
                "da": tu.da,
                "mc": tu.mc,
            }
            for tu in session.utterances
        ],
    }


def tagged_session_from_record(rec: dict, where: str) -> TaggedSession:
    from .corpus import Token

    if rec.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{where}: missing or unsupported format_version")
    if "id" not in rec or "utterances" not in rec:
        raise ParseError(f"{where}: tagged session record needs id and utterances")
    utts = []
    for ui, urec in enumerate(rec["utterances"]):
        tokens = tuple(
            Token(text=t["text"], start_s=float(t["start_s"]), end_s=float(t["end_s"]))
            for t in urec["tokens"]
        )
        utts.append(
            TaggedUtterance(
                Utterance(
                    tokens=tokens,
                    speaker=urec["speaker"],
                    index_in_session=int(urec.get("index", ui)),
                ),
                da=urec.get("da"),
                mc=urec.get("mc"),
            )
        )
    scores = CodeScores.from_dict(rec["scores"]) if rec.get("scores") is not None else None
    return TaggedSession(id=str(rec["id"]), utterances=tuple(utts), scores=scores)


def write_tagged_corpus(sessions: Sequence[TaggedSession], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(json.dumps(tagged_session_to_record(s), sort_keys=True, allow_nan=False))
            fh.write("\n")


def read_tagged_corpus(path: str | Path) -> list[TaggedSession]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"tagged corpus not found: {path}")
    out: list[TaggedSession] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}, line {lineno}: invalid JSON ({exc.msg})") from None
            session = tagged_session_from_record(rec, where=f"{path}, line {lineno}")
            if session.id in seen:
                raise ValidationError(f"{path}, line {lineno}: duplicate session id {session.id!r}")
            seen.add(session.id)
            out.append(session)
    return out


def sniff_corpus_kind(path: str | Path) -> str:
    """Distinguish a turn-level corpus file from an utterance-level one."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"corpus not found: {path}")
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise ParseError(f"{path}: first record is not valid JSON") from None
            if "turns" in rec:
                return "turns"
            if "utterances" in rec:
                return "utterances"
            raise ParseError(f"{path}: record has neither turns nor utterances")
    raise ValidationError(f"{path}: empty corpus file")


# ---------------------------------------------------------------------------
# Models


def save_chain_crf(model: ChainCRF, path: str | Path) -> None:
    save_artifact(
        path,
        "chain_crf",
        {
            "scheme": model.scheme,
            "labels": list(model.labels),
            "feature_names": list(model.feature_names),
            "weights": [[float(v) for v in row] for row in model.weights],
            "transitions": [[float(v) for v in row] for row in model.transitions],
            "l2": model.l2,
            "seed": model.seed,
            "n_iter": model.n_iter,
            "grad_norm": model.grad_norm,
            "converged": model.converged,
            "feature_template": model.feature_template,
        },
    )


def load_chain_crf(path: str | Path, expect_scheme: str | None = None) -> ChainCRF:
    p = load_artifact(path, "chain_crf")
    model = ChainCRF(
        scheme=p["scheme"],
        labels=tuple(p["labels"]),
        feature_names=tuple(p["feature_names"]),
        weights=np.array(p["weights"], dtype=float),
        transitions=np.array(p["transitions"], dtype=float),
        l2=float(p["l2"]),
        seed=int(p["seed"]),
        n_iter=int(p["n_iter"]),
        grad_norm=float(p["grad_norm"]),
        converged=bool(p["converged"]),
        feature_template=p.get("feature_template", ""),
    )
    if expect_scheme is not None and model.scheme != expect_scheme:
        raise ValidationError(
            f"{path}: model tags scheme {model.scheme!r}, expected {expect_scheme!r}"
        )
    return model


def save_utterance_classifier(model: UtteranceClassifier, path: str | Path) -> None:
    save_artifact(
        path,
        "utterance_classifier",
        {
            "scheme": model.scheme,
            "labels": list(model.labels),
            "feature_names": list(model.feature_names),
            "weights": [[float(v) for v in row] for row in model.weights],
            "bias": [float(v) for v in model.bias],
            "l2": model.l2,
            "seed": model.seed,
            "n_iter": model.n_iter,
            "grad_norm": model.grad_norm,
            "converged": model.converged,
            "feature_template": model.feature_template,
        },
    )


def load_utterance_classifier(path: str | Path, expect_scheme: str | None = None) -> UtteranceClassifier:
    p = load_artifact(path, "utterance_classifier")
    model = UtteranceClassifier(
        scheme=p["scheme"],
        labels=tuple(p["labels"]),
        feature_names=tuple(p["feature_names"]),
        weights=np.array(p["weights"], dtype=float),
        bias=np.array(p["bias"], dtype=float),
        l2=float(p["l2"]),
        seed=int(p["seed"]),
        n_iter=int(p["n_iter"]),
        grad_norm=float(p["grad_norm"]),
        converged=bool(p["converged"]),
        feature_template=p.get("feature_template", ""),
    )
    if expect_scheme is not None and model.scheme != expect_scheme:
        raise ValidationError(
            f"{path}: model tags scheme {model.scheme!r}, expected {expect_scheme!r}"
        )
    return model


def save_linear_model(model: LinearModel, path: str | Path, code: str | None = None) -> None:
    save_artifact(
        path,
        "linear_svm",
        {
            "code": code,
            "weights": [float(v) for v in model.weights],
            "bias": model.bias,
            "C": model.C,
            "weight_low": model.weight_low,
            "weight_high": model.weight_high,
            "seed": model.seed,
            "n_iter": model.n_iter,
            "gap": model.gap,
            "converged": model.converged,
            "space_fingerprint": model.space_fingerprint,
            "feature_mask": list(model.feature_mask) if model.feature_mask is not None else None,
            "scaler_mean": [float(v) for v in model.scaler_mean]
            if model.scaler_mean is not None
            else None,
            "scaler_std": [float(v) for v in model.scaler_std]
            if model.scaler_std is not None
            else None,
        },
    )


def load_linear_model(path: str | Path) -> LinearModel:
    p = load_artifact(path, "linear_svm")
    return LinearModel(
        weights=np.array(p["weights"], dtype=float),
        bias=float(p["bias"]),
        C=float(p["C"]),
        weight_low=float(p["weight_low"]),
        weight_high=float(p["weight_high"]),
        seed=int(p["seed"]),
        n_iter=int(p["n_iter"]),
        gap=float(p["gap"]),
        converged=bool(p["converged"]),
        space_fingerprint=p.get("space_fingerprint"),
        feature_mask=tuple(p["feature_mask"]) if p.get("feature_mask") is not None else None,
        scaler_mean=np.array(p["scaler_mean"], dtype=float)
        if p.get("scaler_mean") is not None
        else None,
        scaler_std=np.array(p["scaler_std"], dtype=float)
        if p.get("scaler_std") is not None
        else None,
    )


def save_feature_space(matrix: FeatureMatrix, path: str | Path) -> None:
    """Write the fitted feature space (names, df, idf, bounds, provenance)."""
    if matrix.space is None:
        raise ValidationError("this matrix was loaded from disk and carries no fitted space")
    space = matrix.space
    save_artifact(
        path,
        "feature_space",
        {
            "set": matrix.set_name,
            "provenance": space.provenance,
            "fingerprint": space.fingerprint,
            "n_docs": space.n_docs,
            "max_df": space.max_df,
            "min_df": space.min_df,
            "names": list(space.names),
            "df": list(space.df),
            "idf": [float(v) for v in space.idf],
            "selectable": [bool(s) for s in space.selectable],
        },
    )


# ---------------------------------------------------------------------------
# Feature matrix (sparse triplet text)


def write_matrix(matrix: FeatureMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#format_version {FORMAT_VERSION}\n")
        fh.write("#kind feature_matrix\n")
        fh.write(f"#tool cbtcode {__version__}\n")
        fh.write(f"#set {matrix.set_name}\n")
        fh.write(f"#provenance {matrix.provenance}\n")
        fh.write(f"#fingerprint {matrix.fingerprint}\n")
        fh.write(f"#shape {len(matrix.session_ids)} {len(matrix.names)}\n")
        for sid in matrix.session_ids:
            fh.write(f"#row {sid}\n")
        for sel, name in zip(matrix.selectable, matrix.names):
            fh.write(f"#col {int(sel)} {name}\n")
        rows, cols = np.nonzero(matrix.X)
        for r, c in zip(rows, cols):
            fh.write(f"{r} {c} {float(matrix.X[r, c])!r}\n")


def read_matrix(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"feature matrix not found: {path}")
    headers: dict[str, str] = {}
    row_ids: list[str] = []
    col_names: list[str] = []
    col_sel: list[bool] = []
    triplets: list[tuple[int, int, float]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#row "):
                row_ids.append(line[5:])
            elif line.startswith("#col "):
                rest = line[5:]
                sel, name = rest.split(" ", 1)
                col_sel.append(bool(int(sel)))
                col_names.append(name)
            elif line.startswith("#"):
                key, _, value = line[1:].partition(" ")
                headers[key] = value
            else:
                parts = line.split(" ")
                if len(parts) != 3:
                    raise ParseError(f"{path}, line {lineno}: expected 'row col value'")
                triplets.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if headers.get("kind") != "feature_matrix":
        raise ValidationError(f"{path}: not a feature matrix file")
    if headers.get("format_version") != str(FORMAT_VERSION):
        raise ValidationError(f"{path}: unsupported format_version {headers.get('format_version')!r}")
    n, d = (int(v) for v in headers["shape"].split(" "))
    if len(row_ids) != n or len(col_names) != d:
        raise ParseError(f"{path}: header shape disagrees with row/col entries")
    X = np.zeros((n, d))
    for r, c, v in triplets:
        if not (0 <= r < n and 0 <= c < d):
            raise ParseError(f"{path}: triplet out of bounds ({r}, {c})")
        X[r, c] = v
    return FeatureMatrix(
        set_name=headers.get("set", ""),
        names=tuple(col_names),
        selectable=tuple(col_sel),
        provenance=headers.get("provenance", "tfidf"),
        fingerprint=headers.get("fingerprint", ""),
        session_ids=tuple(row_ids),
        X=X,
    )


# ---------------------------------------------------------------------------
# Reports


def save_report(report: EvalReport, path: str | Path) -> None:
    save_artifact(path, "eval_report", report.to_payload())


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_payload(load_artifact(path, "eval_report"))


def save_comparison(result: FiveByTwoResult, path: str | Path, *, set_a: str, set_b: str, code: str, seed: int) -> None:
    f_value: float | str | None = result.f_statistic
    if f_value is not None and not np.isfinite(f_value):
        f_value = "inf"
    save_artifact(
        path,
        "comparison",
        {
            "set_a": set_a,
            "set_b": set_b,
            "code": code,
            "seed": seed,
            "f_statistic": f_value,
            "degrees": list(result.degrees),
            "p_value": result.p_value,
            "significant": result.significant,
            "degenerate": result.degenerate,
            "verdict": result.verdict,
            "p_matrix": [list(row) for row in result.p_matrix],
        },
    )
