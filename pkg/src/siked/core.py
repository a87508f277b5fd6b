"""Domain types shared by every module, plus the JSONL dataset store.

Datasets are line-delimited JSON files with a canonical ordering and a
dedup rule keyed on (question_id, strategy, rationale). All types here are
immutable values and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import ClassVar, Iterable, Optional


class SikedError(Exception):
    """Base class for domain errors."""


class DatasetFormatError(SikedError):
    """A dataset or question file violates the line schema."""


class Strategy(str, Enum):
    COT = "cot"
    L2M = "l2m"
    POT = "pot"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, value: str) -> "Strategy":
        try:
            return cls(value.lower())
        except ValueError:
            raise DatasetFormatError(f"unknown strategy tag: {value!r}") from None


ALL_STRATEGIES = (Strategy.COT, Strategy.L2M, Strategy.POT)


def parse_decimal(text: str) -> Decimal:
    """Parse a canonical decimal string, rejecting NaN/Inf."""
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise DatasetFormatError(f"not a decimal number: {text!r}") from None
    if not value.is_finite():
        raise DatasetFormatError(f"non-finite number: {text!r}")
    return value


def format_decimal(value: Decimal) -> str:
    """Canonical string form: no exponent for ordinary magnitudes, no trailing zeros."""
    normalized = value.normalize()
    sign, digits, exponent = normalized.as_tuple()
    if exponent > 0:
        normalized = normalized.quantize(Decimal(1))
    return str(normalized)


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    text: str
    gold_answer: Decimal

    def __post_init__(self):
        if not self.gold_answer.is_finite():
            raise DatasetFormatError(f"gold answer for {self.id} is not finite")


@dataclass(frozen=True)
class Origin:
    """Provenance of a rationale: the teacher, or the student at iteration t."""

    kind: str  # "teacher" | "student"
    iteration: Optional[int] = None
    sample_index: Optional[int] = None

    TEACHER: ClassVar["Origin"]  # assigned after the class body

    @classmethod
    def student(cls, iteration: int, sample_index: int) -> "Origin":
        if sample_index < 1:
            raise DatasetFormatError("sample_index must be >= 1")
        return cls("student", iteration, sample_index)

    def sort_key(self):
        if self.kind == "teacher":
            return (0, 0, 0)
        return (1, self.iteration, self.sample_index)

    def to_json(self) -> dict:
        if self.kind == "teacher":
            return {"kind": "teacher"}
        return {"kind": "student", "iteration": self.iteration, "sample_index": self.sample_index}

    @classmethod
    def from_json(cls, obj: dict) -> "Origin":
        kind = obj.get("kind")
        if kind == "teacher":
            return cls.TEACHER
        if kind == "student":
            it, k = obj.get("iteration"), obj.get("sample_index")
            if not isinstance(it, int) or not isinstance(k, int):
                raise DatasetFormatError(f"bad student origin: {obj!r}")
            return cls.student(it, k)
        raise DatasetFormatError(f"bad origin kind: {kind!r}")


Origin.TEACHER = Origin("teacher")


@dataclass(frozen=True)
class RationaleSample:
    question_id: str
    strategy: Strategy
    rationale: str
    extracted_answer: Optional[Decimal]
    correct: bool
    origin: Origin

    def dedup_key(self):
        return (self.question_id, self.strategy.value, self.rationale)

    def sort_key(self):
        return (self.question_id, self.strategy.value) + self.origin.sort_key() + (self.rationale,)

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "strategy": self.strategy.value,
            "rationale": self.rationale,
            "extracted_answer": None if self.extracted_answer is None else format_decimal(self.extracted_answer),
            "correct": self.correct,
            "origin": self.origin.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RationaleSample":
        required = {"question_id", "strategy", "rationale", "extracted_answer", "correct", "origin"}
        missing = required - obj.keys()
        if missing:
            raise DatasetFormatError(f"missing fields: {sorted(missing)}")
        extracted = obj["extracted_answer"]
        if extracted is not None:
            if not isinstance(extracted, str):
                raise DatasetFormatError(f"extracted_answer must be a string or null, got {extracted!r}")
            extracted = parse_decimal(extracted)
        if not isinstance(obj["correct"], bool):
            raise DatasetFormatError(f"correct must be a boolean, got {obj['correct']!r}")
        return cls(
            question_id=obj["question_id"],
            strategy=Strategy.parse(obj["strategy"]),
            rationale=obj["rationale"],
            extracted_answer=extracted,
            correct=obj["correct"],
            origin=Origin.from_json(obj["origin"]),
        )


@dataclass(frozen=True)
class DatasetKind:
    """llm | self(t) | mixed(t)."""

    name: str
    iteration: Optional[int] = None

    @classmethod
    def llm(cls) -> "DatasetKind":
        return cls("llm")

    @classmethod
    def self_(cls, iteration: int) -> "DatasetKind":
        return cls("self", iteration)

    @classmethod
    def mixed(cls, iteration: int) -> "DatasetKind":
        return cls("mixed", iteration)


@dataclass(frozen=True)
class Dataset:
    """An ordered, deduplicated collection of rationale samples.

    Construction canonicalizes: samples are sorted by
    (question_id, strategy, origin, sample_index) and byte-identical
    (question_id, strategy, rationale) repeats are dropped (first in
    canonical order wins). `duplicates_dropped` reports how many were removed.
    """

    samples: tuple[RationaleSample, ...]
    kind: DatasetKind
    duplicates_dropped: int = 0

    @classmethod
    def build(cls, samples: Iterable[RationaleSample], kind: DatasetKind) -> "Dataset":
        ordered = sorted(samples, key=RationaleSample.sort_key)
        seen = set()
        kept = []
        dropped = 0
        for sample in ordered:
            key = sample.dedup_key()
            if key in seen:
                dropped += 1
                continue
            seen.add(key)
            kept.append(sample)
        return cls(tuple(kept), kind, dropped)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def question_ids(self) -> set[str]:
        return {s.question_id for s in self.samples}


def _infer_kind(samples: list[RationaleSample]) -> DatasetKind:
    kinds = {s.origin.kind for s in samples}
    if kinds <= {"teacher"}:
        return DatasetKind.llm()
    iterations = {s.origin.iteration for s in samples if s.origin.kind == "student"}
    if kinds == {"student"} and len(iterations) == 1:
        return DatasetKind.self_(iterations.pop())
    return DatasetKind.mixed(max(iterations))


def load_dataset(path: str | Path, kind: Optional[DatasetKind] = None) -> Dataset:
    """Load a JSONL dataset file into canonical form.

    Duplicate (question_id, strategy, rationale) rows are dropped and counted.
    When `kind` is omitted it is inferred from sample origins.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    samples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                samples.append(RationaleSample.from_json(obj))
            except (json.JSONDecodeError, DatasetFormatError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    if kind is None:
        kind = _infer_kind(samples) if samples else DatasetKind.llm()
    return Dataset.build(samples, kind)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset in canonical order, one JSON object per line."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for sample in dataset.samples:
                fh.write(json.dumps(sample.to_json(), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise SikedError(f"failed to write dataset to {path}: {exc}") from exc


def load_questions(path: str | Path) -> list[QuestionRecord]:
    """Load a question bank: JSONL with fields id, text, gold_answer."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"question file not found: {path}")
    questions = []
    seen_ids = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record = QuestionRecord(obj["id"], obj["text"], parse_decimal(obj["gold_answer"]))
            except (json.JSONDecodeError, KeyError, TypeError, DatasetFormatError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            if record.id in seen_ids:
                raise DatasetFormatError(f"{path}:{lineno}: duplicate question id {record.id!r}")
            seen_ids.add(record.id)
            questions.append(record)
    return questions


def save_questions(questions: Iterable[QuestionRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(
                json.dumps(
                    {"id": q.id, "text": q.text, "gold_answer": format_decimal(q.gold_answer)},
                    ensure_ascii=False,
                )
                + "\n"
            )


def index_questions(questions: Iterable[QuestionRecord]) -> dict[str, QuestionRecord]:
    return {q.id: q for q in questions}
