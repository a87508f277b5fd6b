"""Few-shot generation prompts and the fine-tuning record serialization.

The fine-tune target always opens with a `Strategy: <tag>` line so the
strategy choice is emitted before the rationale; `parse_finetune_target`
is the exact inverse.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .core import Dataset, QuestionRecord, RationaleSample, SikedError, Strategy

DEFAULT_EXEMPLAR_COUNT = 8
DEFAULT_FINETUNE_INSTRUCTION = "Choose a reasoning strategy and solve the problem."

STRATEGY_INSTRUCTIONS = {
    Strategy.COT: (
        "Solve the given math problem step by step. "
        "Put your final answer after 'Final answer:'."
    ),
    Strategy.L2M: (
        "Solve the given math problem by decomposing it into smaller, "
        "manageable sub-questions. Put your final answer after 'Final answer: '."
    ),
    Strategy.POT: (
        "Solve the given math problem by writing a python program. "
        "Store your result as a variable named 'answer'."
    ),
}

STRATEGY_LINE_RE = re.compile(r"^strategy\s*:\s*(\w+)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class PromptTemplate:
    strategy: Strategy
    instruction: str
    exemplars: tuple[tuple[str, str], ...]
    header: str
    layout: str  # text with {{instruction}}, {{exemplars}}, {{question}} placeholders

    def __post_init__(self):
        if not self.exemplars:
            raise SikedError("a prompt template needs at least one exemplar")
        if not self.instruction.strip():
            raise SikedError("a prompt template needs a non-empty instruction")


@dataclass(frozen=True)
class FinetuneRecord:
    input: str
    target: str


def _load_layout(strategy: Strategy) -> str:
    return resources.files("siked.templates").joinpath(f"{strategy.value}.txt").read_text("utf-8")


def load_exemplar_pool(strategy: Strategy, path: Optional[Path] = None) -> list[tuple[str, str]]:
    """Load (input, response) exemplar pairs; defaults to the shipped pool."""
    if path is None:
        text = (
            resources.files("siked.templates")
            .joinpath(f"exemplars/{strategy.value}.jsonl")
            .read_text("utf-8")
        )
    else:
        text = Path(path).read_text("utf-8")
    pool = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        pool.append((obj["input"], obj["response"]))
    return pool


def sample_exemplars(
    pool: Sequence[tuple[str, str]], n: int, seed: int
) -> list[tuple[str, str]]:
    """Draw n distinct exemplars, deterministically for a fixed seed."""
    if len(pool) < n:
        raise SikedError(f"exemplar pool of {len(pool)} is smaller than n={n}")
    rng = random.Random(seed)
    return rng.sample(list(pool), n)


def default_template(
    strategy: Strategy,
    exemplar_count: int = DEFAULT_EXEMPLAR_COUNT,
    seed: int = 0,
    exemplar_pool: Optional[Sequence[tuple[str, str]]] = None,
) -> PromptTemplate:
    pool = list(exemplar_pool) if exemplar_pool is not None else load_exemplar_pool(strategy)
    layout = _load_layout(strategy)
    header = layout.split("\n\nInstruction:")[0]
    return PromptTemplate(
        strategy=strategy,
        instruction=STRATEGY_INSTRUCTIONS[strategy],
        exemplars=tuple(sample_exemplars(pool, exemplar_count, seed)),
        header=header,
        layout=layout,
    )


def default_templates(
    strategies: Sequence[Strategy],
    exemplar_count: int = DEFAULT_EXEMPLAR_COUNT,
    seed: int = 0,
) -> dict[Strategy, PromptTemplate]:
    return {s: default_template(s, exemplar_count, seed) for s in strategies}


def build_generation_prompt(template: PromptTemplate, question: QuestionRecord) -> str:
    """Render the few-shot prompt ending in a bare `Response:` cue."""
    exemplar_block = "".join(
        f"Input:\n{inp}\n\nResponse:\n{resp}\n\n" for inp, resp in template.exemplars
    )
    return (
        template.layout
        .replace("{{instruction}}", template.instruction)
        .replace("{{exemplars}}", exemplar_block.rstrip("\n") + "\n")
        .replace("{{question}}", question.text)
    )


def build_finetune_record(
    sample: RationaleSample,
    instruction: str,
    questions: dict[str, QuestionRecord],
) -> FinetuneRecord:
    """Serialize one sample for fine-tuning: strategy line first, then rationale."""
    question = questions.get(sample.question_id)
    if question is None:
        raise SikedError(f"unknown question id: {sample.question_id!r}")
    return FinetuneRecord(
        input=f"{instruction}\n\n{question.text}",
        target=f"Strategy: {sample.strategy.value}\n{sample.rationale}",
    )


def parse_finetune_target(target: str) -> tuple[Strategy, str]:
    """Inverse of build_finetune_record's target serialization."""
    head, sep, rest = target.partition("\n")
    match = STRATEGY_LINE_RE.match(head)
    if not match:
        raise SikedError(f"target does not start with a strategy line: {head!r}")
    return Strategy.parse(match.group(1)), rest


def dataset_to_finetune_records(
    dataset: Dataset,
    instruction: str,
    questions: dict[str, QuestionRecord],
) -> list[FinetuneRecord]:
    return [build_finetune_record(s, instruction, questions) for s in dataset]


def save_finetune_records(records: Sequence[FinetuneRecord], path: Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps({"input": record.input, "target": record.target}, ensure_ascii=False) + "\n")
