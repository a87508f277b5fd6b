"""Dataset mixing policies (All / Adaptive), biased selection, and the mixing rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import Dataset, DatasetKind, SikedError, Strategy


@dataclass(frozen=True)
class MixStats:
    n_llm_used: int
    n_self_used: int
    alpha: float
    policy: str  # "all" | "adaptive"
    bias: Optional[Strategy] = None

    def to_json(self) -> dict:
        return {
            "n_llm_used": self.n_llm_used,
            "n_self_used": self.n_self_used,
            "alpha": self.alpha,
            "policy": self.policy,
            "bias": self.bias.value if self.bias else None,
        }


def compute_alpha(n_llm: int, n_self: int) -> float:
    """LLM share of the mixed dataset: n_llm / (n_llm + n_self)."""
    if n_llm < 0 or n_self < 0:
        raise SikedError("counts must be non-negative")
    if n_llm + n_self == 0:
        raise SikedError("cannot mix two empty datasets")
    return n_llm / (n_llm + n_self)


def _mix_iteration(d_self: Dataset) -> int:
    return d_self.kind.iteration if d_self.kind.iteration is not None else 0


def mix_all(d_llm: Dataset, d_self: Dataset) -> tuple[Dataset, MixStats]:
    """Union of all LLM data with all self data; alpha from post-dedup counts."""
    mixed = Dataset.build(
        list(d_llm) + list(d_self), DatasetKind.mixed(_mix_iteration(d_self))
    )
    n_llm = sum(1 for s in mixed if s.origin.kind == "teacher")
    n_self = len(mixed) - n_llm
    return mixed, MixStats(n_llm, n_self, compute_alpha(n_llm, n_self), "all")


def mix_adaptive(d_llm: Dataset, d_self: Dataset) -> tuple[Dataset, MixStats]:
    """Include LLM rows only for questions with no correct self-generated rationale."""
    solved = d_self.question_ids()
    llm_rows = [s for s in d_llm if s.question_id not in solved]
    mixed = Dataset.build(
        llm_rows + list(d_self), DatasetKind.mixed(_mix_iteration(d_self))
    )
    n_llm = sum(1 for s in mixed if s.origin.kind == "teacher")
    n_self = len(mixed) - n_llm
    return mixed, MixStats(n_llm, n_self, compute_alpha(n_llm, n_self), "adaptive")


def mix(policy: str, d_llm: Dataset, d_self: Dataset, bias: Optional[Strategy] = None) -> tuple[Dataset, MixStats]:
    if bias is not None:
        d_self = bias_select(d_self, bias)
    if policy == "all":
        mixed, stats = mix_all(d_llm, d_self)
    elif policy == "adaptive":
        mixed, stats = mix_adaptive(d_llm, d_self)
    else:
        raise SikedError(f"unknown mixing policy: {policy!r}")
    if bias is not None:
        stats = MixStats(stats.n_llm_used, stats.n_self_used, stats.alpha, stats.policy, bias)
    return mixed, stats


def bias_select(d_self: Dataset, preferred: Strategy) -> Dataset:
    """Per question, keep only the preferred strategy's samples when present.

    Questions solved only by other strategies are left untouched, so the set
    of represented questions never changes.
    """
    has_preferred = {s.question_id for s in d_self if s.strategy is preferred}
    kept = [
        s
        for s in d_self
        if s.question_id not in has_preferred or s.strategy is preferred
    ]
    return Dataset.build(kept, d_self.kind)
