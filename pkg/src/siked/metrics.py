"""Strategy distributions, mixtures, KL divergence, and maj@1 evaluation.

KL is computed over the strategy marginal only (the observable quantity at
the data level), in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .core import Dataset, QuestionRecord, SikedError, Strategy
from .verify import MatchPolicy, answers_match, extract_final_answer

if TYPE_CHECKING:
    from .genclient import GenerationBackend

KL_SMOOTHING = 1e-9


@dataclass(frozen=True)
class StrategyDistribution:
    probs: Mapping[Strategy, float]

    def __post_init__(self):
        total = sum(self.probs.values())
        if any(p < 0 for p in self.probs.values()):
            raise SikedError("probabilities must be non-negative")
        if abs(total - 1.0) > 1e-9:
            raise SikedError(f"probabilities sum to {total}, not 1")

    def __getitem__(self, strategy: Strategy) -> float:
        return self.probs.get(strategy, 0.0)

    def support(self) -> set[Strategy]:
        return {s for s, p in self.probs.items() if p > 0}

    def to_json(self) -> dict:
        return {s.value: p for s, p in sorted(self.probs.items(), key=lambda kv: kv[0].value)}

    @classmethod
    def from_counts(cls, counts: Mapping[Strategy, int | float]) -> "StrategyDistribution":
        total = sum(counts.values())
        if total <= 0:
            raise SikedError("cannot normalize an empty count vector")
        return cls({s: c / total for s, c in counts.items()})

    @classmethod
    def uniform(cls, strategies: Sequence[Strategy]) -> "StrategyDistribution":
        return cls({s: 1.0 / len(strategies) for s in strategies})


def strategy_distribution(samples: Dataset | Iterable) -> StrategyDistribution:
    """Normalized strategy counts over a dataset or generation batch."""
    counts: dict[Strategy, int] = {}
    n = 0
    for sample in samples:
        strategy = sample.strategy if hasattr(sample, "strategy") else sample[1]
        counts[strategy] = counts.get(strategy, 0) + 1
        n += 1
    if n == 0:
        raise SikedError("cannot compute a strategy distribution of an empty input")
    return StrategyDistribution.from_counts(counts)


def mixture(
    alpha: float, p_llm: StrategyDistribution, p_sm: StrategyDistribution
) -> StrategyDistribution:
    """Pointwise convex combination alpha*p_llm + (1-alpha)*p_sm."""
    if not 0.0 <= alpha <= 1.0:
        raise SikedError(f"alpha must be in [0, 1], got {alpha}")
    keys = set(p_llm.probs) | set(p_sm.probs)
    return StrategyDistribution(
        {s: alpha * p_llm[s] + (1.0 - alpha) * p_sm[s] for s in keys}
    )


def kl_divergence(p: StrategyDistribution, q: StrategyDistribution) -> float:
    """Sum p log(p/q) in nats; q is epsilon-smoothed then renormalized."""
    keys = sorted(set(p.probs) | set(q.probs), key=lambda s: s.value)
    q_smoothed = {s: q[s] + KL_SMOOTHING for s in keys}
    z = sum(q_smoothed.values())
    total = 0.0
    for s in keys:
        p_s = p[s]
        if p_s == 0.0:
            continue
        total += p_s * math.log(p_s / (q_smoothed[s] / z))
    return total


def accuracy(correct: int, total: int) -> float:
    if total == 0:
        raise SikedError("cannot compute accuracy over zero items")
    return correct / total


def evaluate_maj1(
    backend: "GenerationBackend",
    eval_questions: Sequence[QuestionRecord],
    policy: MatchPolicy,
    seed: int = 0,
) -> float:
    """Top-1 accuracy: one greedy generation per question, model-chosen strategy.

    The backend emits a `Strategy: <tag>` line followed by the rationale
    (the fine-tune serialization); grading extracts the final answer under
    that strategy and matches it against gold.
    """
    from .genclient import EvalRequest  # local import to avoid a cycle

    correct = 0
    for question in eval_questions:
        completion = backend.complete_eval(EvalRequest(question=question, seed=seed))
        from .prompts import parse_finetune_target

        try:
            strategy, rationale = parse_finetune_target(completion)
        except SikedError:
            continue
        extracted = extract_final_answer(rationale, strategy)
        if extracted is not None and answers_match(extracted, question.gold_answer, policy):
            correct += 1
    return accuracy(correct, len(eval_questions))


def stats_csv_rows(manifest_entries: Sequence[dict]) -> list[dict]:
    """Plot-ready rows: one per (iteration, strategy)."""
    rows = []
    for entry in manifest_entries:
        iteration = entry["iteration"]
        p_llm = entry.get("p_llm", {})
        p_sm = entry.get("p_sm", {})
        p_train = entry.get("p_train", {})
        strategies = sorted(set(p_llm) | set(p_sm) | set(p_train))
        for s in strategies:
            rows.append(
                {
                    "iteration": iteration,
                    "strategy": s,
                    "p_llm": p_llm.get(s, 0.0),
                    "p_sm": p_sm.get(s, 0.0),
                    "p_train": p_train.get(s, 0.0),
                    "alpha": entry["alpha"],
                    "kl": entry["kl"],
                }
            )
    return rows
