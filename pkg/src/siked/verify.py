"""Answer extraction, numeric matching, and the correctness filter."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable, Optional

from . import potlang
from .core import (
    Dataset,
    DatasetKind,
    Origin,
    QuestionRecord,
    RationaleSample,
    SikedError,
    Strategy,
)

# Last `Final Answer:` marker wins; few-shot leakage can echo earlier ones.
FINAL_ANSWER_RE = re.compile(r"final\s+answer\s*:\s*(.+)", re.IGNORECASE)


@dataclass(frozen=True)
class MatchPolicy:
    absolute_tolerance: Decimal = Decimal("1e-4")
    relative_tolerance: Decimal = Decimal("1e-4")
    integer_exact: bool = True

    def __post_init__(self):
        if self.absolute_tolerance < 0 or self.relative_tolerance < 0:
            raise SikedError("tolerances must be non-negative")


def normalize_numeric(text: str) -> Optional[Decimal]:
    """Parse a noisy numeric string: strips $, thousands commas, trailing %/period.

    Word numerals are out of scope; returns None when unparseable.
    """
    cleaned = text.strip()
    # Keep only the leading token; drop trailing unit words ("66 dollars").
    cleaned = cleaned.split()[0] if cleaned.split() else ""
    cleaned = cleaned.lstrip("$").replace(",", "")
    cleaned = cleaned.rstrip("%.")
    if not cleaned:
        return None
    try:
        value = Decimal(cleaned)
    except InvalidOperation:
        return None
    if not value.is_finite():
        return None
    return value


def extract_final_answer(rationale: str, strategy: Strategy) -> Optional[Decimal]:
    """Strategy-aware final-answer extraction; None on any failure.

    CoT/L2M read the last `Final Answer:` marker line. PoT parses and
    evaluates the program and reads the `answer` variable. Calculator
    annotations `<<...>>` never participate.
    """
    if strategy is Strategy.POT:
        try:
            value = potlang.run_program(rationale)
        except SikedError:
            return None
        return potlang.fraction_to_decimal(value)
    last = None
    for match in FINAL_ANSWER_RE.finditer(rationale):
        last = match.group(1)
    if last is None:
        return None
    return normalize_numeric(last)


def answers_match(predicted: Decimal, gold: Decimal, policy: MatchPolicy) -> bool:
    """Tolerance match; exact equality required when both sides are integers."""
    if policy.integer_exact:
        pred_int = predicted == predicted.to_integral_value()
        gold_int = gold == gold.to_integral_value()
        if pred_int and gold_int:
            return predicted == gold
    bound = max(policy.absolute_tolerance, policy.relative_tolerance * abs(gold))
    return abs(predicted - gold) <= bound


@dataclass
class FilterReport:
    """Rejection tally for one filter invocation."""

    kept: int = 0
    extraction_failures: int = 0
    mismatches: int = 0
    by_strategy_kept: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "kept": self.kept,
            "extraction_failures": self.extraction_failures,
            "mismatches": self.mismatches,
            "by_strategy_kept": dict(sorted(self.by_strategy_kept.items())),
        }


def filter_correct(
    triples: Iterable[tuple[str, Strategy, str]],
    questions: dict[str, QuestionRecord],
    policy: MatchPolicy,
    origin_for: "Origin | callable",
    kind: Optional[DatasetKind] = None,
) -> tuple[Dataset, FilterReport]:
    """Keep exactly the triples whose extracted answer matches gold.

    `origin_for` is either a fixed Origin or a callable mapping the triple
    index within its (question, strategy) group to an Origin (used to stamp
    student sample indices k).
    """
    report = FilterReport()
    kept: list[RationaleSample] = []
    group_counts: dict[tuple[str, str], int] = {}
    for question_id, strategy, rationale in triples:
        if question_id not in questions:
            raise SikedError(f"unknown question id in triples: {question_id!r}")
        group = (question_id, strategy.value)
        group_counts[group] = group_counts.get(group, 0) + 1
        k = group_counts[group]
        extracted = extract_final_answer(rationale, strategy)
        if extracted is None:
            report.extraction_failures += 1
            continue
        if not answers_match(extracted, questions[question_id].gold_answer, policy):
            report.mismatches += 1
            continue
        origin = origin_for(k) if callable(origin_for) else origin_for
        kept.append(
            RationaleSample(
                question_id=question_id,
                strategy=strategy,
                rationale=rationale,
                extracted_answer=extracted,
                correct=True,
                origin=origin,
            )
        )
        report.kept += 1
        report.by_strategy_kept[strategy.value] = report.by_strategy_kept.get(strategy.value, 0) + 1
    if kind is None:
        kind = DatasetKind.llm()
    return Dataset.build(kept, kind), report
