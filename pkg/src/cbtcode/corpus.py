"""Transcript and label data model, file ingestion, and score binarization.

A corpus is a list of sessions; each session is an ordered list of talk
turns; each turn is a single speaker's ordered, timestamped words.  Sessions
optionally carry one 0..6 score per behavioral code, which binarize_scores
turns into low/high labels (per-code anchor 4, total threshold 40).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ParseError, ValidationError

CODES = ("ag", "at", "co", "fb", "gd", "hw", "ip", "cb", "pt", "sc", "un")

THERAPIST = "therapist"
PATIENT = "patient"
ROLES = (THERAPIST, PATIENT)

SCORE_MIN = 0
SCORE_MAX = 6
HIGH_ANCHOR = 4
TOTAL_THRESHOLD = 40

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Token:
    """One word with start/end times in seconds."""

    text: str
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not self.text or any(c.isspace() for c in self.text):
            raise ValidationError(f"token text must be non-empty without whitespace: {self.text!r}")
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)):
            raise ValidationError(f"token {self.text!r} has non-finite times")
        if self.start_s < 0:
            raise ValidationError(f"token {self.text!r} has negative start time {self.start_s}")
        if self.end_s < self.start_s:
            raise ValidationError(
                f"token {self.text!r} ends before it starts ({self.end_s} < {self.start_s})"
            )


@dataclass(frozen=True)
class Turn:
    """One speaker's uninterrupted sequence of tokens."""

    speaker: str
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        if self.speaker not in ROLES:
            raise ValidationError(f"unknown speaker role {self.speaker!r}; expected one of {ROLES}")
        if not self.tokens:
            raise ValidationError("turn has no tokens")
        for a, b in zip(self.tokens, self.tokens[1:]):
            if b.start_s < a.start_s:
                raise ValidationError(
                    f"tokens out of time order in turn: {b.text!r} starts before {a.text!r}"
                )

    def words(self) -> list[str]:
        return [t.text for t in self.tokens]


@dataclass(frozen=True)
class CodeScores:
    """Integer score in [0, 6] for each of the 11 codes, in CODES order."""

    values: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(CODES):
            raise ValidationError(f"expected {len(CODES)} scores, got {len(self.values)}")
        for code, v in zip(CODES, self.values):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ValidationError(f"score for {code} must be an integer, got {v!r}")
            if not (SCORE_MIN <= v <= SCORE_MAX):
                raise ValidationError(f"score for {code} out of range [0, 6]: {v}")

    @classmethod
    def from_dict(cls, d: Mapping[str, int]) -> "CodeScores":
        unknown = set(d) - set(CODES)
        if unknown:
            raise ValidationError(f"unknown score codes: {sorted(unknown)}")
        missing = [c for c in CODES if c not in d]
        if missing:
            raise ValidationError(f"missing score codes: {missing} (all 11 required)")
        return cls(tuple(int(d[c]) for c in CODES))

    def to_dict(self) -> dict[str, int]:
        return {c: v for c, v in zip(CODES, self.values)}

    def __getitem__(self, code: str) -> int:
        return self.values[CODES.index(code)]


@dataclass(frozen=True)
class CodeLabels:
    """Binary high/low label per code plus the total; True means high."""

    per_code: tuple[bool, ...]
    total: bool

    def __getitem__(self, code: str) -> bool:
        if code == "total":
            return self.total
        return self.per_code[CODES.index(code)]

    def to_dict(self) -> dict[str, str]:
        d = {c: ("high" if v else "low") for c, v in zip(CODES, self.per_code)}
        d["total"] = "high" if self.total else "low"
        return d


@dataclass(frozen=True)
class Session:
    """One recorded session: an id, ordered turns, and optional scores."""

    id: str
    turns: tuple[Turn, ...]
    scores: CodeScores | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("session id must be non-empty")

    def therapist_tokens(self) -> list[Token]:
        out: list[Token] = []
        for turn in self.turns:
            if turn.speaker == THERAPIST:
                out.extend(turn.tokens)
        return out


def total_ctrs(scores: CodeScores) -> int:
    """Sum of the 11 code scores; range [0, 66]."""
    return sum(scores.values)


def binarize_scores(scores: CodeScores) -> CodeLabels:
    """Per-code label is high iff score >= 4; total is high iff the sum >= 40."""
    return CodeLabels(
        per_code=tuple(v >= HIGH_ANCHOR for v in scores.values),
        total=total_ctrs(scores) >= TOTAL_THRESHOLD,
    )


# ---------------------------------------------------------------------------
# Corpus file IO: UTF-8 JSONL, one session record per line.


def _token_from_record(rec: object, where: str) -> Token:
    if not isinstance(rec, dict):
        raise ParseError(f"{where}: token record must be an object, got {type(rec).__name__}")
    try:
        text = rec["text"]
        start_s = float(rec["start_s"])
        end_s = float(rec["end_s"])
    except KeyError as exc:
        raise ParseError(f"{where}: token record missing field {exc}") from None
    except (TypeError, ValueError):
        raise ParseError(f"{where}: token times must be numbers") from None
    return Token(text=text, start_s=start_s, end_s=end_s)


def session_from_record(rec: dict, where: str = "record") -> Session:
    """Build a Session from a parsed JSON record, validating invariants."""
    if "id" not in rec:
        raise ParseError(f"{where}: missing session id")
    if rec.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{where}: missing or unsupported format_version (expected {FORMAT_VERSION})")
    turns = []
    for ti, trec in enumerate(rec.get("turns", [])):
        if not isinstance(trec, dict) or "speaker" not in trec or "tokens" not in trec:
            raise ParseError(f"{where}, turn {ti}: expected object with speaker and tokens")
        tokens = tuple(
            _token_from_record(tok, f"{where}, turn {ti}, token {wi}")
            for wi, tok in enumerate(trec["tokens"])
        )
        turns.append(Turn(speaker=trec["speaker"], tokens=tokens))
    scores = None
    if rec.get("scores") is not None:
        scores = CodeScores.from_dict(rec["scores"])
    return Session(id=str(rec["id"]), turns=tuple(turns), scores=scores)


def session_to_record(session: Session) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "id": session.id,
        "turns": [
            {
                "speaker": turn.speaker,
                "tokens": [
                    {"text": t.text, "start_s": t.start_s, "end_s": t.end_s} for t in turn.tokens
                ],
            }
            for turn in session.turns
        ],
        "scores": session.scores.to_dict() if session.scores is not None else None,
    }


def parse_corpus(path: str | Path) -> list[Session]:
    """Read a JSONL transcript corpus; raises ParseError/ValidationError on bad input."""
    path = Path(path)
    if not path.exists():
        from .errors import MissingArtifactError

        raise MissingArtifactError(f"corpus file not found: {path}")
    sessions: list[Session] = []
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
            if not isinstance(rec, dict):
                raise ParseError(f"{path}, line {lineno}: expected a JSON object")
            try:
                session = session_from_record(rec, where=f"{path}, line {lineno}")
            except ValidationError as exc:
                raise type(exc)(f"{path}, line {lineno}: {exc}") from None
            if session.id in seen:
                raise ValidationError(f"{path}, line {lineno}: duplicate session id {session.id!r}")
            seen.add(session.id)
            sessions.append(session)
    return sessions


def write_corpus(sessions: Iterable[Session], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for session in sessions:
            fh.write(json.dumps(session_to_record(session), sort_keys=True, allow_nan=False))
            fh.write("\n")


def read_scores_table(path: str | Path) -> dict[str, CodeScores]:
    """Read a delimited label table (header: id,ag,...,un) keyed by session id."""
    path = Path(path)
    if not path.exists():
        from .errors import MissingArtifactError

        raise MissingArtifactError(f"labels file not found: {path}")
    out: dict[str, CodeScores] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = [c.strip() for c in header.split(",")]
        if cols[:1] != ["id"] or tuple(cols[1:]) != CODES:
            raise ParseError(f"{path}: header must be 'id,{','.join(CODES)}', got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != len(CODES) + 1:
                raise ParseError(f"{path}, line {lineno}: expected {len(CODES) + 1} columns")
            sid = parts[0]
            if sid in out:
                raise ValidationError(f"{path}, line {lineno}: duplicate session id {sid!r}")
            try:
                values = {c: int(v) for c, v in zip(CODES, parts[1:])}
            except ValueError:
                raise ParseError(f"{path}, line {lineno}: scores must be integers") from None
            out[sid] = CodeScores.from_dict(values)
    return out


def write_scores_table(scores: Mapping[str, CodeScores], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id," + ",".join(CODES) + "\n")
        for sid in scores:
            row = scores[sid]
            fh.write(sid + "," + ",".join(str(v) for v in row.values) + "\n")
