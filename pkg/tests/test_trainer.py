import json
import math
import os
import stat
import sys
from decimal import Decimal

import pytest

from siked.core import ALL_STRATEGIES, Dataset, DatasetKind, Origin, QuestionRecord, Strategy, index_questions
from siked.genclient import EvalRequest, GenConfig, GenRequest
from siked.metrics import StrategyDistribution
from siked.trainer import (
    ExternalTrainerConfig,
    ModelHandle,
    PolicySnapshot,
    SimulatedPolicyBackend,
    TrainingError,
    TrainingSpec,
    correctness_scale,
    dataset_fingerprint,
    simulated_generate,
    simulated_train,
    train,
)
from siked.verify import extract_final_answer
from conftest import make_sample


def make_policy(probs=(0.4, 0.3, 0.3), accs=(0.5, 0.5, 0.5), seed=0):
    return PolicySnapshot(
        StrategyDistribution(dict(zip(ALL_STRATEGIES, probs))),
        dict(zip(ALL_STRATEGIES, accs)),
        seed,
    )


def mix_of(counts, t=1):
    samples = []
    for strategy, n in counts.items():
        for k in range(1, n + 1):
            samples.append(
                make_sample(f"q{k}", strategy, f"r {strategy} {k}\nFinal Answer: 1", origin=Origin.student(t, k))
            )
    return Dataset.build(samples, DatasetKind.mixed(t))


class TestTrainingSpec:
    def test_paper_defaults(self):
        spec = TrainingSpec()
        assert (spec.epochs, spec.lora_rank, spec.lora_alpha) == (3, 16, 32)
        assert spec.learning_rate == pytest.approx(2e-4)
        assert spec.scheduler == "linear"

    def test_bad_mode_rejected(self):
        with pytest.raises(Exception):
            TrainingSpec(mode="sideways")


class TestSimulatedTrain:
    def test_refits_to_mix_counts(self):
        policy = make_policy()
        mix = mix_of({Strategy.COT: 6, Strategy.L2M: 3, Strategy.POT: 1})
        new = simulated_train(policy, mix, smoothing=0.0)
        assert new.strategy_probs[Strategy.COT] == pytest.approx(0.6)
        assert new.strategy_probs[Strategy.POT] == pytest.approx(0.1)

    def test_smoothing_keeps_absent_strategies_alive(self):
        policy = make_policy()
        mix = mix_of({Strategy.COT: 10})
        new = simulated_train(policy, mix, smoothing=0.01)
        assert new.strategy_probs[Strategy.POT] > 0.0
        assert new.strategy_probs[Strategy.POT] == pytest.approx(0.01 / (10 + 0.03))

    def test_uplift_only_for_present_strategies(self):
        policy = make_policy(accs=(0.5, 0.5, 0.5))
        mix = mix_of({Strategy.COT: 5})
        new = simulated_train(policy, mix, uplift=1.2)
        assert new.per_strategy_accuracy[Strategy.COT] == pytest.approx(0.6)
        assert new.per_strategy_accuracy[Strategy.POT] == pytest.approx(0.5)

    def test_uplift_capped(self):
        policy = make_policy(accs=(0.9, 0.9, 0.9))
        new = simulated_train(policy, mix_of({Strategy.COT: 5}), uplift=2.0, cap=0.95)
        assert new.per_strategy_accuracy[Strategy.COT] == pytest.approx(0.95)

    def test_empty_mix_rejected(self):
        with pytest.raises(TrainingError):
            simulated_train(make_policy(), Dataset.build([], DatasetKind.mixed(1)))

    def test_input_policy_untouched(self):
        policy = make_policy()
        before = policy.strategy_probs.to_json()
        simulated_train(policy, mix_of({Strategy.COT: 3}))
        assert policy.strategy_probs.to_json() == before


class TestCorrectnessScale:
    def test_uniform_weight_is_full_scale(self):
        assert correctness_scale(make_policy((1 / 3, 1 / 3, 1 / 3)), Strategy.COT) == pytest.approx(1.0)

    def test_overweighted_capped_at_one(self):
        assert correctness_scale(make_policy((0.9, 0.05, 0.05)), Strategy.COT) == 1.0

    def test_underweighted_scales_down(self):
        assert correctness_scale(make_policy((0.05, 0.05, 0.9)), Strategy.COT) == pytest.approx(0.15)


class TestSimulatedGenerate:
    QUESTION = QuestionRecord("q1", "What is it?", Decimal(7))

    def test_deterministic(self):
        policy = make_policy()
        a = simulated_generate(policy, self.QUESTION, Strategy.COT, 1)
        b = simulated_generate(policy, self.QUESTION, Strategy.COT, 1)
        assert a == b

    def test_distinct_per_k(self):
        policy = make_policy(accs=(1.0, 1.0, 1.0))
        outs = {simulated_generate(policy, self.QUESTION, Strategy.COT, k) for k in range(1, 6)}
        assert len(outs) == 5

    def test_always_extractable(self):
        policy = make_policy()
        for strategy in ALL_STRATEGIES:
            for k in range(1, 6):
                text = simulated_generate(policy, self.QUESTION, strategy, k)
                assert extract_final_answer(text, strategy) is not None

    def test_wrong_answers_extract_to_gold_plus_one(self):
        policy = make_policy(accs=(0.0, 0.0, 0.0))
        for strategy in ALL_STRATEGIES:
            text = simulated_generate(policy, self.QUESTION, strategy, 1)
            assert extract_final_answer(text, strategy) == Decimal(8)

    def test_monte_carlo_correctness_rate(self):
        # empirical correct fraction within 3 standard errors of p_acc * scale
        probs = (0.2, 0.3, 0.5)
        accs = (0.8, 0.5, 0.3)
        policy = make_policy(probs, accs, seed=11)
        n = 4000
        for strategy, p_strategy, acc in zip(ALL_STRATEGIES, probs, accs):
            expected = acc * correctness_scale(policy, strategy)
            hits = 0
            for i in range(n):
                q = QuestionRecord(f"q{i}", f"text {i}", Decimal(10))
                text = simulated_generate(policy, q, strategy, 1)
                if extract_final_answer(text, strategy) == Decimal(10):
                    hits += 1
            se = math.sqrt(expected * (1 - expected) / n)
            assert abs(hits / n - expected) <= 3 * se + 1e-12, strategy


class TestSimulatedPolicyBackend:
    def test_generate_k_completions(self):
        backend = SimulatedPolicyBackend(make_policy())
        q = QuestionRecord("q1", "t", Decimal(1))
        out = backend.generate(GenRequest("p", q, Strategy.POT), GenConfig(samples_per_pair=4))
        assert len(out) == 4 and len(set(out)) == 4

    def test_eval_strategy_frequency_tracks_probs(self):
        policy = make_policy((0.1, 0.2, 0.7), seed=5)
        backend = SimulatedPolicyBackend(policy)
        counts = {s: 0 for s in ALL_STRATEGIES}
        n = 3000
        for i in range(n):
            q = QuestionRecord(f"q{i}", "t", Decimal(1))
            completion = backend.complete_eval(EvalRequest(q))
            tag = completion.splitlines()[0].split(": ")[1]
            counts[Strategy.parse(tag)] += 1
        for s, p in zip(ALL_STRATEGIES, (0.1, 0.2, 0.7)):
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts[s] / n - p) <= 4 * se

    def test_eval_deterministic_per_seed(self):
        backend = SimulatedPolicyBackend(make_policy())
        q = QuestionRecord("q1", "t", Decimal(1))
        assert backend.complete_eval(EvalRequest(q, seed=3)) == backend.complete_eval(EvalRequest(q, seed=3))


class TestTrainDispatch:
    def base(self):
        return ModelHandle("simulated", policy=make_policy((0.6, 0.2, 0.2), (0.3, 0.3, 0.3)))

    def test_on_policy_continues_from_handle(self):
        base = self.base()
        first = train(base, mix_of({Strategy.POT: 10}), TrainingSpec(), base, 1)
        second = train(first, mix_of({Strategy.COT: 10}), TrainingSpec(), base, 2)
        # POT was uplifted in iteration 1 and carries forward
        assert second.policy.per_strategy_accuracy[Strategy.POT] == pytest.approx(0.3 * 1.05)
        assert [entry[0] for entry in second.lineage] == [1, 2]

    def test_off_policy_restarts_from_base(self):
        base = self.base()
        first = train(base, mix_of({Strategy.POT: 10}), TrainingSpec(), base, 1)
        spec = TrainingSpec(mode="off_policy")
        second = train(first, mix_of({Strategy.COT: 10}), spec, base, 2)
        assert second.policy.per_strategy_accuracy[Strategy.POT] == pytest.approx(0.3)
        assert [entry[0] for entry in second.lineage] == [2]

    def test_fingerprint_depends_on_content(self):
        a = mix_of({Strategy.COT: 3})
        b = mix_of({Strategy.COT: 4})
        assert dataset_fingerprint(a) != dataset_fingerprint(b)
        assert dataset_fingerprint(a) == dataset_fingerprint(mix_of({Strategy.COT: 3}))


STUB_ADAPTER = """\
#!/usr/bin/env python3
import argparse, json, os, sys

parser = argparse.ArgumentParser()
for flag in ("--train-file", "--base-model", "--init-from", "--output-dir",
             "--epochs", "--lr", "--lora-rank", "--lora-alpha", "--scheduler",
             "--max-seq-len"):
    parser.add_argument(flag, required=True)
args = parser.parse_args()

if os.environ.get("STUB_FAIL"):
    print("synthetic failure", file=sys.stderr)
    sys.exit(3)

records = sum(1 for line in open(args.train_file) if line.strip())
with open(os.path.join(args.output_dir, "adapter-metadata.json"), "w") as fh:
    json.dump({"records_seen": records, "epochs": int(args.epochs),
               "base_model": args.base_model}, fh)
"""


@pytest.fixture
def stub_adapter(tmp_path):
    path = tmp_path / "stub_adapter.py"
    path.write_text(STUB_ADAPTER)
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return (sys.executable, str(path))


class TestExternalTrainer:
    def run(self, tmp_path, stub_adapter, questions, env_fail=False, monkeypatch=None):
        base = ModelHandle("external", model_dir=None)
        external = ExternalTrainerConfig(stub_adapter, "tiny-base", tmp_path / "out", "inst")
        mix = Dataset.build(
            [make_sample("q1", Strategy.COT, "r\nFinal Answer: 5")], DatasetKind.mixed(1)
        )
        return train(base, mix, TrainingSpec(), base, 1, index_questions(questions), external)

    def test_adapter_invoked_and_metadata_checked(self, tmp_path, stub_adapter, questions):
        handle = self.run(tmp_path, stub_adapter, questions)
        assert handle.kind == "external"
        metadata = json.loads((tmp_path / "out" / "model-iter1" / "adapter-metadata.json").read_text())
        assert metadata == {"records_seen": 1, "epochs": 3, "base_model": "tiny-base"}

    def test_nonzero_exit_surfaces_log_tail(self, tmp_path, stub_adapter, questions, monkeypatch):
        monkeypatch.setenv("STUB_FAIL", "1")
        with pytest.raises(TrainingError, match="synthetic failure"):
            self.run(tmp_path, stub_adapter, questions)

    def test_missing_metadata_rejected(self, tmp_path, questions):
        script = tmp_path / "noop.py"
        script.write_text("import sys; sys.exit(0)\n")
        base = ModelHandle("external")
        external = ExternalTrainerConfig((sys.executable, str(script)), "b", tmp_path / "out", "inst")
        mix = Dataset.build([make_sample("q1")], DatasetKind.mixed(1))
        with pytest.raises(TrainingError, match="adapter-metadata.json"):
            train(base, mix, TrainingSpec(), base, 1, index_questions(questions), external)

    def test_external_without_config_rejected(self, questions):
        base = ModelHandle("external")
        mix = Dataset.build([make_sample("q1")], DatasetKind.mixed(1))
        with pytest.raises(TrainingError, match="adapter config"):
            train(base, mix, TrainingSpec(), base, 1)
