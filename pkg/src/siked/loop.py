"""The iterative distillation orchestrator: teacher distillation (stage 0)
followed by generate -> filter -> mix -> train iterations with stopping
criteria and a reproducible run manifest.
"""

from __future__ import annotations

import hashlib
import json
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from . import mixer
from .core import (
    Dataset,
    DatasetKind,
    Origin,
    QuestionRecord,
    SikedError,
    Strategy,
    index_questions,
    save_dataset,
)
from .genclient import GenConfig, GenerationBackend, generate_llm_dataset, student_config, teacher_config
from .metrics import StrategyDistribution, evaluate_maj1, kl_divergence, strategy_distribution
from .prompts import PromptTemplate, default_templates
from .trainer import (
    ExternalTrainerConfig,
    ModelHandle,
    SimulatedPolicyBackend,
    TrainingSpec,
    train,
)
from .verify import FilterReport, MatchPolicy, filter_correct

MANIFEST_FILE = "run-manifest.json"
TIMINGS_FILE = "timings.json"


@dataclass
class LoopConfig:
    questions: Sequence[QuestionRecord]
    teacher: GenerationBackend
    base_handle: ModelHandle
    strategies: tuple[Strategy, ...]
    output_dir: Path
    max_iterations: int = 3
    min_gain: float = 0.0025  # 0.25 accuracy points, as a fraction
    mixing_policy: str = "adaptive"
    bias: Optional[Strategy] = None
    training_spec: TrainingSpec = field(default_factory=TrainingSpec)
    teacher_gen: GenConfig = field(default_factory=teacher_config)
    student_gen: GenConfig = field(default_factory=student_config)
    match_policy: MatchPolicy = field(default_factory=MatchPolicy)
    templates: Optional[dict[Strategy, PromptTemplate]] = None
    eval_questions: Optional[Sequence[QuestionRecord]] = None
    eval_fraction: float = 0.2
    seed: int = 0
    early_stop: bool = True
    # External-trainer runs still need a generation/eval backend for the student.
    student_backend: Optional[GenerationBackend] = None
    external_trainer: Optional[ExternalTrainerConfig] = None
    config_fingerprint: Optional[str] = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise SikedError("max_iterations (T) must be >= 1")
        if self.min_gain < 0:
            raise SikedError("min_gain must be >= 0")
        if self.mixing_policy not in ("all", "adaptive"):
            raise SikedError(f"unknown mixing policy: {self.mixing_policy!r}")
        if self.training_spec.mode == "off_policy" and self.mixing_policy != "all":
            raise SikedError("off-policy training requires the 'all' mixing policy")
        self.output_dir = Path(self.output_dir)
        if self.templates is None:
            self.templates = default_templates(self.strategies, seed=self.seed)


@dataclass
class RunManifest:
    config_hash: str
    entries: list[dict] = field(default_factory=list)
    final_handle: Optional[dict] = None
    stopped_reason: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "entries": self.entries,
            "final_handle": self.final_handle,
            "stopped_reason": self.stopped_reason,
        }


def config_hash(config: LoopConfig) -> str:
    """Stable digest of the run-defining knobs."""
    payload = {
        "fingerprint": config.config_fingerprint,
        "n_questions": len(config.questions),
        "strategies": [s.value for s in config.strategies],
        "max_iterations": config.max_iterations,
        "min_gain": config.min_gain,
        "mixing_policy": config.mixing_policy,
        "bias": config.bias.value if config.bias else None,
        "mode": config.training_spec.mode,
        "teacher_gen": [config.teacher_gen.samples_per_pair, config.teacher_gen.temperature],
        "student_gen": [config.student_gen.samples_per_pair, config.student_gen.temperature],
        "seed": config.seed,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def split_eval(
    questions: Sequence[QuestionRecord], fraction: float, seed: int
) -> tuple[list[QuestionRecord], list[QuestionRecord]]:
    """Carve a held-out eval split; deterministic for a fixed seed."""
    ids = list(range(len(questions)))
    random.Random(f"split|{seed}").shuffle(ids)
    n_eval = max(1, int(len(questions) * fraction))
    eval_ids = set(ids[:n_eval])
    train_qs = [q for i, q in enumerate(questions) if i not in eval_ids]
    eval_qs = [q for i, q in enumerate(questions) if i in eval_ids]
    return train_qs, eval_qs


def should_stop(history: Sequence[float], config: LoopConfig, t: int) -> bool:
    """Stop at the iteration cap, on a sub-threshold gain, or on a decline."""
    if t >= config.max_iterations:
        return True
    if not config.early_stop or len(history) < 2:
        return False
    gain = history[-1] - history[-2]
    return gain < config.min_gain or history[-1] < history[-2]


def _student_backend(config: LoopConfig, handle: ModelHandle) -> GenerationBackend:
    if handle.kind == "simulated":
        return SimulatedPolicyBackend(handle.policy)
    if config.student_backend is None:
        raise SikedError("external-model runs need a configured student generation backend")
    return config.student_backend


def _policy_distribution(config: LoopConfig, handle: ModelHandle, d_self: Dataset) -> StrategyDistribution:
    if handle.kind == "simulated":
        return handle.policy.strategy_probs
    return strategy_distribution(d_self)


def _evaluate(config: LoopConfig, handle: ModelHandle, eval_qs: Sequence[QuestionRecord]) -> Optional[float]:
    backend = _student_backend(config, handle)
    return evaluate_maj1(backend, eval_qs, config.match_policy, seed=config.seed)


def _train_handle(
    config: LoopConfig,
    handle: ModelHandle,
    mix: Dataset,
    iteration: int,
    questions_index: dict,
    spec: Optional[TrainingSpec] = None,
) -> ModelHandle:
    return train(
        handle,
        mix,
        spec or config.training_spec,
        base_handle=config.base_handle,
        iteration=iteration,
        questions=questions_index,
        external=config.external_trainer,
    )


def distill_stage0(
    config: LoopConfig,
    train_questions: Sequence[QuestionRecord],
    eval_questions: Sequence[QuestionRecord],
) -> tuple[ModelHandle, Dataset, dict, FilterReport]:
    """Teacher generation, filtering, and the initial distillation step."""
    questions_index = index_questions(train_questions)
    triples = generate_llm_dataset(
        config.teacher, train_questions, config.strategies, config.templates, config.teacher_gen
    )
    d_llm, report = filter_correct(
        triples, questions_index, config.match_policy, Origin.TEACHER, DatasetKind.llm()
    )
    if len(d_llm) == 0:
        raise SikedError("teacher produced no correct rationales; nothing to distill")
    # Stage 0 always trains from the base model.
    stage0_spec = replace(config.training_spec, mode="off_policy")
    handle = _train_handle(config, config.base_handle, d_llm, 0, questions_index, stage0_spec)
    p_llm = strategy_distribution(d_llm)
    p_sm = (
        config.base_handle.policy.strategy_probs
        if config.base_handle.kind == "simulated"
        else p_llm
    )
    entry = {
        "iteration": 0,
        "n_self": 0,
        "n_llm_used": len(d_llm),
        "n_mix": len(d_llm),
        "alpha": 1.0,
        "kl": kl_divergence(p_llm, p_sm),
        "p_llm": p_llm.to_json(),
        "p_sm": p_sm.to_json(),
        "p_train": p_llm.to_json(),
        "self_strategy_distribution": None,
        "filter_report": report.to_json(),
        "eval_accuracy": _evaluate(config, handle, eval_questions),
        "model": handle.to_json(),
    }
    return handle, d_llm, entry, report


def run_iteration(
    t: int,
    handle: ModelHandle,
    d_llm: Dataset,
    config: LoopConfig,
    train_questions: Sequence[QuestionRecord],
    eval_questions: Sequence[QuestionRecord],
) -> tuple[ModelHandle, Dataset, Dataset, dict]:
    """One generate -> filter -> mix -> train round at iteration t >= 1."""
    if t < 1:
        raise SikedError("iterations are numbered from 1")
    questions_index = index_questions(train_questions)
    backend = _student_backend(config, handle)
    triples = generate_llm_dataset(
        backend, train_questions, config.strategies, config.templates, config.student_gen
    )
    d_self, report = filter_correct(
        triples,
        questions_index,
        config.match_policy,
        lambda k: Origin.student(t, k),
        DatasetKind.self_(t),
    )
    self_dist = strategy_distribution(d_self) if len(d_self) else None
    policy = "all" if config.training_spec.mode == "off_policy" else config.mixing_policy
    mixed, stats = mixer.mix(policy, d_llm, d_self, bias=config.bias)
    if len(mixed) == 0:
        raise SikedError(f"iteration {t}: empty mix, cannot continue")
    p_llm = strategy_distribution(d_llm)
    p_sm = _policy_distribution(config, handle, d_self)
    p_train = strategy_distribution(mixed)
    new_handle = _train_handle(config, handle, mixed, t, questions_index)
    entry = {
        "iteration": t,
        "n_self": len(d_self),
        "n_llm_used": stats.n_llm_used,
        "n_mix": len(mixed),
        "alpha": stats.alpha,
        "kl": kl_divergence(p_train, p_sm),
        "p_llm": p_llm.to_json(),
        "p_sm": p_sm.to_json(),
        "p_train": p_train.to_json(),
        "self_strategy_distribution": self_dist.to_json() if self_dist else None,
        "filter_report": report.to_json(),
        "mix_stats": stats.to_json(),
        "eval_accuracy": _evaluate(config, new_handle, eval_questions),
        "model": new_handle.to_json(),
    }
    return new_handle, d_self, mixed, entry


def run_distillation(config: LoopConfig) -> RunManifest:
    """Full run: stage 0 then iterations until the stopping rule fires.

    The manifest bytes are deterministic for a fixed config and seed;
    wall-clock timings go to a sidecar file.
    """
    config.output_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config_hash=config_hash(config))
    timings: dict[str, float] = {}

    if config.eval_questions is not None:
        train_qs, eval_qs = list(config.questions), list(config.eval_questions)
    else:
        train_qs, eval_qs = split_eval(config.questions, config.eval_fraction, config.seed)

    try:
        start = time.monotonic()
        handle, d_llm, entry, _ = distill_stage0(config, train_qs, eval_qs)
        timings["stage0"] = time.monotonic() - start
        manifest.entries.append(entry)
        save_dataset(d_llm, config.output_dir / "d_llm.jsonl")

        history = [entry["eval_accuracy"]]
        t = 0
        while not should_stop(history, config, t):
            t += 1
            start = time.monotonic()
            handle, d_self, mixed, entry = run_iteration(
                t, handle, d_llm, config, train_qs, eval_qs
            )
            timings[f"iteration_{t}"] = time.monotonic() - start
            manifest.entries.append(entry)
            history.append(entry["eval_accuracy"])
            save_dataset(d_self, config.output_dir / f"d_self.{t}.jsonl")
            save_dataset(mixed, config.output_dir / f"d_mix.{t}.jsonl")
        manifest.stopped_reason = "max_iterations" if t >= config.max_iterations else "converged"
        manifest.final_handle = handle.to_json()
    finally:
        _write_json(config.output_dir / MANIFEST_FILE, manifest.to_json())
        _write_json(config.output_dir / TIMINGS_FILE, timings)
    return manifest


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
