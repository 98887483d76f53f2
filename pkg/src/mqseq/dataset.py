"""Loading, validation, and summarisation of MedMCQA-format question files.

Input files are UTF-8 JSON Lines: one flat object per line with keys
"id", "question", "opa".."opd", "cop", "subject_name", "topic_name".
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import EmptyInput, MalformedRecord, MissingField


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


_OPTION_KEYS = ("opa", "opb", "opc", "opd")


@dataclass(frozen=True)
class QuestionRecord:
    """One exam question with its subject label and split tag."""

    id: str
    question_text: str
    options: tuple[str, ...]  # 4 option texts, or empty when absent
    correct_option: int | None  # 0..3 when known
    subject_name: str
    topic_name: str | None
    split: Split


@dataclass(frozen=True)
class SubjectVocabulary:
    """Deterministic subject-name -> class-index mapping, sorted by byte order."""

    names: tuple[str, ...]

    @property
    def index_of(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    @property
    def K(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.index_of


@dataclass
class SplitSummary:
    counts: dict[tuple[Split, str], int]
    totals: dict[Split, int]
    rejected: dict[Split, int]
    rejected_subjects: Counter


def _parse_object(obj: dict, line_number: int, split: Split) -> QuestionRecord:
    for key in ("id", "question", "subject_name"):
        if key not in obj or obj[key] is None:
            raise MissingField(key, line_number)

    rec_id = obj["id"]
    if isinstance(rec_id, int):
        rec_id = str(rec_id)
    if not isinstance(rec_id, str) or not rec_id:
        raise MalformedRecord(line_number, "field 'id' must be a non-empty string")

    question = str(obj["question"]).strip()
    if not question:
        raise MalformedRecord(line_number, "field 'question' is blank")

    subject = str(obj["subject_name"]).strip()
    if not subject:
        raise MissingField("subject_name", line_number)

    if all(k in obj and obj[k] is not None for k in _OPTION_KEYS):
        options = tuple(str(obj[k]) for k in _OPTION_KEYS)
    else:
        options = ()

    correct = obj.get("cop")
    if correct in (None, -1, ""):  # -1 marks a withheld answer in released test files
        correct = None
    else:
        if isinstance(correct, bool) or not isinstance(correct, int):
            raise MalformedRecord(line_number, f"field 'cop' must be an integer, got {correct!r}")
        if not 0 <= correct <= 3:
            raise MalformedRecord(line_number, f"field 'cop' out of range 0..3: {correct}")

    topic = obj.get("topic_name")
    if topic is not None:
        topic = str(topic).strip() or None

    return QuestionRecord(
        id=rec_id,
        question_text=question,
        options=options,
        correct_option=correct,
        subject_name=subject,
        topic_name=topic,
        split=split,
    )


def parse_records(source: Iterable[str], split: Split) -> list[QuestionRecord]:
    """Parse a line-oriented stream of JSON records, in file order.

    Blank lines are skipped. Raises MalformedRecord for lines that fail to
    parse or violate field constraints, MissingField for absent required keys.
    """
    records = []
    for line_number, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord(line_number, f"invalid JSON: {e.msg}") from e
        if not isinstance(obj, dict):
            raise MalformedRecord(line_number, "record is not a key-value object")
        records.append(_parse_object(obj, line_number, split))
    return records


def load_split(path: str | Path, split: Split) -> list[QuestionRecord]:
    with open(path, encoding="utf-8") as f:
        return parse_records(f, split)


def serialize_records(records: Iterable[QuestionRecord]) -> Iterator[str]:
    """Yield one JSON line per record, re-parseable by parse_records."""
    for rec in records:
        obj: dict = {"id": rec.id, "question": rec.question_text}
        if rec.options:
            obj.update(zip(_OPTION_KEYS, rec.options))
        if rec.correct_option is not None:
            obj["cop"] = rec.correct_option
        obj["subject_name"] = rec.subject_name
        if rec.topic_name is not None:
            obj["topic_name"] = rec.topic_name
        yield json.dumps(obj, ensure_ascii=False)


def write_records(records: Iterable[QuestionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in serialize_records(records):
            f.write(line + "\n")


def build_vocabulary(records: Iterable[QuestionRecord]) -> SubjectVocabulary:
    """Build the class vocabulary from observed subject names.

    Names are sorted lexicographically (UTF-8 byte order), giving contiguous
    indices 0..K-1 independent of record order.
    """
    names = sorted({rec.subject_name for rec in records})
    if not names:
        raise EmptyInput("no records to build a vocabulary from")
    return SubjectVocabulary(names=tuple(names))


def write_vocabulary(vocab: SubjectVocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for name in vocab.names:
            f.write(name + "\n")


def read_vocabulary(path: str | Path) -> SubjectVocabulary:
    with open(path, encoding="utf-8") as f:
        names = tuple(line.rstrip("\n") for line in f if line.strip())
    if not names:
        raise EmptyInput(f"vocabulary file {path} is empty")
    return SubjectVocabulary(names=names)


def summarize_splits(records: Iterable[QuestionRecord], vocab: SubjectVocabulary) -> SplitSummary:
    """Count records per (split, subject); unknown subjects go to a reject bucket."""
    counts: dict[tuple[Split, str], int] = {}
    totals: dict[Split, int] = {s: 0 for s in Split}
    rejected: dict[Split, int] = {s: 0 for s in Split}
    rejected_subjects: Counter = Counter()
    known = vocab.index_of
    for rec in records:
        if rec.subject_name in known:
            key = (rec.split, rec.subject_name)
            counts[key] = counts.get(key, 0) + 1
            totals[rec.split] += 1
        else:
            rejected[rec.split] += 1
            rejected_subjects[rec.subject_name] += 1
    return SplitSummary(counts=counts, totals=totals, rejected=rejected,
                        rejected_subjects=rejected_subjects)


def format_summary(summary: SplitSummary, vocab: SubjectVocabulary) -> str:
    """Human-readable split/subject table."""
    lines = [f"{'subject':<40}" + "".join(f"{s.value:>10}" for s in Split)]
    for name in vocab.names:
        row = "".join(f"{summary.counts.get((s, name), 0):>10}" for s in Split)
        lines.append(f"{name:<40}" + row)
    lines.append(f"{'total':<40}" + "".join(f"{summary.totals[s]:>10}" for s in Split))
    if any(summary.rejected.values()):
        lines.append(f"{'rejected (unknown subject)':<40}"
                     + "".join(f"{summary.rejected[s]:>10}" for s in Split))
        for name, n in summary.rejected_subjects.most_common():
            lines.append(f"  unknown subject {name!r}: {n}")
    return "\n".join(lines)
