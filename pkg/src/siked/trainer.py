"""The trainer boundary: external adapter protocol plus the in-process
simulated trainer and simulated student policy.

The simulated student models only the strategy marginal and a per-strategy
correctness Bernoulli; that is enough structure to exercise mixing, the
mixing-rate dynamics, KL alignment, and diversification end to end without
a neural model. Token-level losses live exclusively behind the adapter
command protocol.
"""

from __future__ import annotations

import hashlib
import json
import random
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .core import Dataset, QuestionRecord, SikedError, Strategy, format_decimal
from .genclient import EvalRequest, GenConfig, GenRequest
from .metrics import StrategyDistribution
from .prompts import dataset_to_finetune_records, save_finetune_records

DEFAULT_SMOOTHING = 0.01
DEFAULT_UPLIFT = 1.05
DEFAULT_UPLIFT_CAP = 0.95

ADAPTER_METADATA_FILE = "adapter-metadata.json"


class TrainingError(SikedError):
    pass


@dataclass(frozen=True)
class TrainingSpec:
    epochs: int = 3
    learning_rate: float = 2e-4
    lora_rank: int = 16
    lora_alpha: int = 32
    scheduler: str = "linear"
    max_seq_len: int = 1024
    mode: str = "on_policy"  # on_policy: continue from last handle; off_policy: restart from base
    smoothing: float = DEFAULT_SMOOTHING
    accuracy_uplift: float = DEFAULT_UPLIFT
    accuracy_cap: float = DEFAULT_UPLIFT_CAP

    def __post_init__(self):
        if self.epochs < 1:
            raise SikedError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise SikedError("learning rate must be positive")
        if self.mode not in ("on_policy", "off_policy"):
            raise SikedError(f"unknown training mode: {self.mode!r}")


@dataclass(frozen=True)
class PolicySnapshot:
    strategy_probs: StrategyDistribution
    per_strategy_accuracy: dict[Strategy, float]
    seed: int

    def __post_init__(self):
        bad = {s.value: a for s, a in self.per_strategy_accuracy.items() if not 0.0 <= a <= 1.0}
        if bad:
            raise SikedError(f"accuracies outside [0, 1]: {bad}")

    def strategies(self) -> list[Strategy]:
        return sorted(self.strategy_probs.probs, key=lambda s: s.value)

    def to_json(self) -> dict:
        return {
            "strategy_probs": self.strategy_probs.to_json(),
            "per_strategy_accuracy": {
                s.value: a for s, a in sorted(self.per_strategy_accuracy.items(), key=lambda kv: kv[0].value)
            },
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ModelHandle:
    kind: str  # "simulated" | "external"
    policy: Optional[PolicySnapshot] = None
    model_dir: Optional[str] = None
    lineage: tuple[tuple[int, str], ...] = ()

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "policy": self.policy.to_json() if self.policy else None,
            "model_dir": self.model_dir,
            "lineage": [list(entry) for entry in self.lineage],
        }


def dataset_fingerprint(dataset: Dataset) -> str:
    digest = hashlib.sha256()
    for sample in dataset:
        digest.update(json.dumps(sample.to_json(), sort_keys=True).encode())
        digest.update(b"\n")
    return digest.hexdigest()[:16]


def simulated_train(
    policy: PolicySnapshot,
    mix: Dataset,
    smoothing: float = DEFAULT_SMOOTHING,
    uplift: float = DEFAULT_UPLIFT,
    cap: float = DEFAULT_UPLIFT_CAP,
) -> PolicySnapshot:
    """Refit the strategy marginal to the mix (smoothed MLE) and uplift
    accuracies for strategies present in the mix."""
    if len(mix) == 0:
        raise TrainingError("cannot train on an empty mix")
    strategies = policy.strategies()
    counts = {s: 0 for s in strategies}
    for sample in mix:
        if sample.strategy not in counts:
            raise TrainingError(f"mix contains strategy outside the policy universe: {sample.strategy}")
        counts[sample.strategy] += 1
    denom = len(mix) + smoothing * len(strategies)
    probs = StrategyDistribution({s: (counts[s] + smoothing) / denom for s in strategies})
    accuracies = {
        s: min(cap, acc * uplift) if counts[s] > 0 else acc
        for s, acc in policy.per_strategy_accuracy.items()
    }
    return PolicySnapshot(probs, accuracies, policy.seed + 1)


def correctness_scale(policy: PolicySnapshot, strategy: Strategy) -> float:
    """How much the policy's strategy weight throttles correctness.

    A strategy at or above uniform weight generates at full accuracy; an
    underweighted one proportionally less, modeling skills the model rarely
    exercises.
    """
    n = len(policy.strategy_probs.probs)
    return min(1.0, n * policy.strategy_probs[strategy])


def _rng(*parts) -> random.Random:
    return random.Random("|".join(str(p) for p in parts))


def render_rationale(strategy: Strategy, answer: str, k: int) -> str:
    # Each k yields distinct text so repeated correct samples survive dedup.
    if strategy is Strategy.POT:
        return f"attempt = {k}\nresult = {answer}\nanswer = result"
    if strategy is Strategy.L2M:
        return (
            f"Sub-question 1: What is the result? (attempt {k})\n"
            f"Answer to Sub-question 1: {answer}\n"
            f"Final Answer: {answer}"
        )
    return f"Working the problem directly (attempt {k}).\nFinal Answer: {answer}"


def simulated_generate(
    policy: PolicySnapshot,
    question: QuestionRecord,
    strategy: Strategy,
    k: int,
) -> str:
    """One deterministic pseudo-generation for (policy, question, strategy, k).

    Correct with probability per_strategy_accuracy(strategy) *
    correctness_scale(policy, strategy); otherwise the rationale extracts to
    gold + 1.
    """
    rng = _rng("gen", policy.seed, question.id, strategy.value, k)
    p_correct = policy.per_strategy_accuracy.get(strategy, 0.0) * correctness_scale(policy, strategy)
    gold = format_decimal(question.gold_answer)
    if rng.random() < p_correct:
        return render_rationale(strategy, gold, k)
    wrong = format_decimal(question.gold_answer + 1)
    return render_rationale(strategy, wrong, k)


class SimulatedPolicyBackend:
    """GenerationBackend view of a PolicySnapshot (student inference role)."""

    def __init__(self, policy: PolicySnapshot):
        self.policy = policy

    def generate(self, request: GenRequest, config: GenConfig) -> list[str]:
        if request.question is None or request.strategy is None:
            raise TrainingError("simulated backend needs (question, strategy) on the request")
        return [
            simulated_generate(self.policy, request.question, request.strategy, k)
            for k in range(1, config.samples_per_pair + 1)
        ]

    def complete_eval(self, request: EvalRequest) -> str:
        """Greedy eval: the policy picks its own strategy, then succeeds with
        its raw per-strategy accuracy."""
        rng = _rng("eval", self.policy.seed, request.question.id, request.seed)
        strategies = self.policy.strategies()
        weights = [self.policy.strategy_probs[s] for s in strategies]
        strategy = rng.choices(strategies, weights=weights, k=1)[0]
        gold = format_decimal(request.question.gold_answer)
        if rng.random() < self.policy.per_strategy_accuracy.get(strategy, 0.0):
            body = render_rationale(strategy, gold, 1)
        else:
            body = render_rationale(strategy, format_decimal(request.question.gold_answer + 1), 1)
        return f"Strategy: {strategy.value}\n{body}"


@dataclass(frozen=True)
class ExternalTrainerConfig:
    adapter_cmd: tuple[str, ...]
    base_model: str
    output_root: Path
    instruction: str


def _run_adapter(cmd: list[str], log_tail_lines: int = 20) -> None:
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        tail = "\n".join((result.stderr or result.stdout).splitlines()[-log_tail_lines:])
        raise TrainingError(f"trainer adapter exited {result.returncode}:\n{tail}")


def train(
    handle: ModelHandle,
    mix: Dataset,
    spec: TrainingSpec,
    base_handle: ModelHandle,
    iteration: int,
    questions: Optional[dict[str, QuestionRecord]] = None,
    external: Optional[ExternalTrainerConfig] = None,
) -> ModelHandle:
    """Produce a new handle trained on the mix; the input handle is untouched.

    on_policy continues from `handle`; off_policy restarts from `base_handle`.
    """
    if len(mix) == 0:
        raise TrainingError("cannot train on an empty mix")
    source = handle if spec.mode == "on_policy" else base_handle
    fingerprint = dataset_fingerprint(mix)
    lineage = source.lineage + ((iteration, fingerprint),)

    if source.kind == "simulated":
        policy = simulated_train(
            source.policy, mix, spec.smoothing, spec.accuracy_uplift, spec.accuracy_cap
        )
        return ModelHandle("simulated", policy=policy, lineage=lineage)

    if external is None or questions is None:
        raise TrainingError("external training needs an adapter config and a question index")
    out_dir = external.output_root / f"model-iter{iteration}"
    out_dir.mkdir(parents=True, exist_ok=True)
    train_file = out_dir / "train.jsonl"
    records = dataset_to_finetune_records(mix, external.instruction, questions)
    save_finetune_records(records, train_file)
    init_from = source.model_dir if source.model_dir else "none"
    cmd = list(external.adapter_cmd) + [
        "--train-file", str(train_file),
        "--base-model", external.base_model,
        "--init-from", init_from,
        "--output-dir", str(out_dir),
        "--epochs", str(spec.epochs),
        "--lr", str(spec.learning_rate),
        "--lora-rank", str(spec.lora_rank),
        "--lora-alpha", str(spec.lora_alpha),
        "--scheduler", spec.scheduler,
        "--max-seq-len", str(spec.max_seq_len),
    ]
    _run_adapter(cmd)
    metadata_path = out_dir / ADAPTER_METADATA_FILE
    if not metadata_path.exists():
        raise TrainingError(f"adapter succeeded but wrote no {ADAPTER_METADATA_FILE}")
    try:
        metadata = json.loads(metadata_path.read_text())
    except ValueError as exc:
        raise TrainingError(f"unreadable adapter metadata: {exc}") from exc
    for field_name in ("records_seen", "epochs", "base_model"):
        if field_name not in metadata:
            raise TrainingError(f"adapter metadata missing field {field_name!r}")
    return ModelHandle("external", model_dir=str(out_dir), lineage=lineage)
