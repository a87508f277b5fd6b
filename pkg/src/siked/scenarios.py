"""Deterministic end-to-end scenarios with scripted backends.

Each scenario builds a synthetic question bank, a scripted teacher, and an
initial simulated student policy, runs the full pipeline, and checks
qualitative assertions over the manifest (mixing-rate decay, KL alignment,
strategy diversification, on- vs off-policy ordering).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Callable, Optional

from .core import ALL_STRATEGIES, QuestionRecord, SikedError, Strategy
from .genclient import GenConfig, MockBackend
from .loop import LoopConfig, RunManifest, run_distillation
from .metrics import StrategyDistribution
from .trainer import ModelHandle, PolicySnapshot, TrainingSpec, render_rationale
from .verify import extract_final_answer


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class ScenarioReport:
    scenario: str
    assertions: list[Assertion]
    manifest: RunManifest

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "passed": self.passed,
            "assertions": [a.to_json() for a in self.assertions],
            "manifest": self.manifest.to_json(),
        }


def make_question_bank(n: int, seed: int) -> list[QuestionRecord]:
    """Single-step addition problems with trivially auditable gold answers."""
    rng = random.Random(f"questions|{seed}")
    questions = []
    for i in range(n):
        a, b = rng.randint(2, 80), rng.randint(2, 80)
        questions.append(
            QuestionRecord(
                id=f"q{i:04d}",
                text=f"A basket holds {a} red apples and {b} green apples. How many apples are in the basket?",
                gold_answer=Decimal(a + b),
            )
        )
    return questions


def make_teacher_script(
    questions: list[QuestionRecord],
    correct_rate: dict[Strategy, float],
    seed: int,
) -> MockBackend:
    """Scripted teacher whose per-strategy correctness rates shape the LLM
    dataset's strategy distribution. Teacher texts use attempt index 0 so
    they never collide with student-generated rows."""
    rng = random.Random(f"teacher|{seed}")
    script: dict[str, list[str]] = {}
    for question in questions:
        for strategy in ALL_STRATEGIES:
            gold = question.gold_answer
            answer = gold if rng.random() < correct_rate[strategy] else gold + 1
            rationale = render_rationale(strategy, str(answer), 0)
            extracted = extract_final_answer(rationale, strategy)
            if (extracted == gold) != (answer == gold):
                raise SikedError(
                    f"scenario script inconsistent with extraction for {question.id}/{strategy.value}"
                )
            script[f"{question.id}|{strategy.value}"] = [rationale]
    return MockBackend(script)


def make_policy(
    probs: dict[Strategy, float], accuracy: dict[Strategy, float], seed: int
) -> PolicySnapshot:
    return PolicySnapshot(StrategyDistribution(probs), dict(accuracy), seed)


def _base_config(output_dir: Path, seed: int, n_questions: int, teacher_rates, policy, **overrides) -> LoopConfig:
    questions = make_question_bank(n_questions, seed)
    teacher = make_teacher_script(questions, teacher_rates, seed)
    defaults = dict(
        questions=questions,
        teacher=teacher,
        base_handle=ModelHandle("simulated", policy=policy),
        strategies=ALL_STRATEGIES,
        output_dir=output_dir,
        seed=seed,
        early_stop=False,
        student_gen=GenConfig(samples_per_pair=10, temperature=0.7),
    )
    defaults.update(overrides)
    return LoopConfig(**defaults)


def _series(manifest: RunManifest, key: str) -> list:
    return [entry[key] for entry in manifest.entries]


def _check_monotone(values: list[float], strict: bool, decreasing: bool = True) -> bool:
    pairs = zip(values, values[1:])
    if decreasing:
        return all(b < a if strict else b <= a for a, b in pairs)
    return all(b > a if strict else b >= a for a, b in pairs)


def run_alignment(output_dir: Path, seed: int = 7) -> ScenarioReport:
    """A student heavily biased to one strategy aligns with the mixed data:
    the mixing rate falls and per-iteration KL strictly decreases."""
    # Teacher leans CoT; the student's competence leans PoT, so self data pulls
    # the mix away from the LLM distribution as the mixing rate falls.
    policy = make_policy(
        {Strategy.COT: 0.05, Strategy.L2M: 0.05, Strategy.POT: 0.90},
        {Strategy.COT: 0.0125, Strategy.L2M: 0.05, Strategy.POT: 0.15},
        seed,
    )
    config = _base_config(
        output_dir,
        seed,
        n_questions=120,
        teacher_rates={Strategy.COT: 0.9, Strategy.L2M: 0.5, Strategy.POT: 0.2},
        policy=policy,
        max_iterations=4,
        mixing_policy="all",
        training_spec=TrainingSpec(accuracy_uplift=1.6),
    )
    manifest = run_distillation(config)
    alphas = _series(manifest, "alpha")[1:]
    kls = _series(manifest, "kl")[1:]
    assertions = [
        Assertion("ran_four_iterations", len(manifest.entries) == 5, f"entries={len(manifest.entries)}"),
        Assertion("alpha_non_increasing", _check_monotone(alphas, strict=False), f"alpha={alphas}"),
        Assertion("kl_strictly_decreasing", _check_monotone(kls, strict=True), f"kl={kls}"),
        Assertion("stage0_alpha_is_one", manifest.entries[0]["alpha"] == 1.0, "alpha(0)=1"),
    ]
    return ScenarioReport("alignment", assertions, manifest)


def run_diversify(output_dir: Path, seed: int = 11) -> ScenarioReport:
    """A 100%-single-strategy student learns to spread its correct
    self-generations across every strategy."""
    policy = make_policy(
        {Strategy.COT: 0.0, Strategy.L2M: 0.0, Strategy.POT: 1.0},
        {Strategy.COT: 0.55, Strategy.L2M: 0.55, Strategy.POT: 0.55},
        seed,
    )
    config = _base_config(
        output_dir,
        seed,
        n_questions=80,
        teacher_rates={Strategy.COT: 0.8, Strategy.L2M: 0.8, Strategy.POT: 0.8},
        policy=policy,
        max_iterations=3,
        mixing_policy="all",
        training_spec=TrainingSpec(accuracy_uplift=1.3),
    )
    manifest = run_distillation(config)
    final_self = manifest.entries[-1]["self_strategy_distribution"] or {}
    shares = {s.value: final_self.get(s.value, 0.0) for s in ALL_STRATEGIES}
    assertions = [
        Assertion("ran_three_iterations", len(manifest.entries) == 4, f"entries={len(manifest.entries)}"),
        Assertion("stage0_alpha_is_one", manifest.entries[0]["alpha"] == 1.0, "alpha(0)=1"),
        Assertion(
            "all_strategies_above_5pct",
            all(share > 0.05 for share in shares.values()),
            f"self shares={shares}",
        ),
    ]
    return ScenarioReport("diversify", assertions, manifest)


def run_onpolicy_vs_offpolicy(output_dir: Path, seed: int = 3) -> ScenarioReport:
    """On-policy (continue from the last checkpoint) ends at least as
    accurate as off-policy (restart from base each iteration)."""
    policy = make_policy(
        {Strategy.COT: 0.2, Strategy.L2M: 0.2, Strategy.POT: 0.6},
        {Strategy.COT: 0.25, Strategy.L2M: 0.25, Strategy.POT: 0.25},
        seed,
    )

    def build(mode: str, subdir: str) -> LoopConfig:
        return _base_config(
            Path(output_dir) / subdir,
            seed,
            n_questions=100,
            teacher_rates={Strategy.COT: 0.7, Strategy.L2M: 0.7, Strategy.POT: 0.7},
            policy=policy,
            max_iterations=3,
            mixing_policy="all",
            training_spec=TrainingSpec(mode=mode, accuracy_uplift=1.5),
        )

    on_manifest = run_distillation(build("on_policy", "on"))
    off_manifest = run_distillation(build("off_policy", "off"))
    acc_on = on_manifest.entries[-1]["eval_accuracy"]
    acc_off = off_manifest.entries[-1]["eval_accuracy"]
    assertions = [
        Assertion("both_modes_completed", len(on_manifest.entries) == 4 and len(off_manifest.entries) == 4,
                  f"on={len(on_manifest.entries)} off={len(off_manifest.entries)}"),
        Assertion("on_policy_at_least_off_policy", acc_on >= acc_off, f"on={acc_on} off={acc_off}"),
    ]
    report = ScenarioReport("onpolicy-beats-offpolicy", assertions, on_manifest)
    report.off_manifest = off_manifest
    return report


SCENARIOS: dict[str, Callable[[Path, int], ScenarioReport]] = {
    "alignment": run_alignment,
    "diversify": run_diversify,
    "onpolicy-beats-offpolicy": run_onpolicy_vs_offpolicy,
}


def run_scenario(name: str, output_dir: Path, seed: Optional[int] = None) -> ScenarioReport:
    if name not in SCENARIOS:
        raise SikedError(f"unknown scenario: {name!r} (known: {sorted(SCENARIOS)})")
    runner = SCENARIOS[name]
    if seed is None:
        return runner(Path(output_dir))
    return runner(Path(output_dir), seed)
