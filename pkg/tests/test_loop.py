import json

import pytest

from siked.core import ALL_STRATEGIES, SikedError, Strategy, load_dataset
from siked.genclient import GenConfig
from siked.loop import (
    LoopConfig,
    config_hash,
    run_distillation,
    should_stop,
    split_eval,
)
from siked.scenarios import make_policy, make_question_bank, make_teacher_script
from siked.trainer import ModelHandle, TrainingSpec

UNIFORM = {s: 1 / 3 for s in ALL_STRATEGIES}
TEACHER_RATES = {Strategy.COT: 0.8, Strategy.L2M: 0.7, Strategy.POT: 0.6}


def small_config(tmp_path, seed=0, n_questions=30, **overrides):
    questions = make_question_bank(n_questions, seed)
    policy = make_policy(dict(UNIFORM), {s: 0.4 for s in ALL_STRATEGIES}, seed)
    defaults = dict(
        questions=questions,
        teacher=make_teacher_script(questions, TEACHER_RATES, seed),
        base_handle=ModelHandle("simulated", policy=policy),
        strategies=ALL_STRATEGIES,
        output_dir=tmp_path,
        seed=seed,
        max_iterations=2,
        mixing_policy="all",
        early_stop=False,
        student_gen=GenConfig(samples_per_pair=4, temperature=0.7),
    )
    defaults.update(overrides)
    return LoopConfig(**defaults)


class TestConfigValidation:
    def test_t_must_be_positive(self, tmp_path):
        with pytest.raises(SikedError):
            small_config(tmp_path, max_iterations=0)

    def test_off_policy_requires_all(self, tmp_path):
        with pytest.raises(SikedError, match="off-policy"):
            small_config(tmp_path, training_spec=TrainingSpec(mode="off_policy"), mixing_policy="adaptive")

    def test_off_policy_with_all_accepted(self, tmp_path):
        config = small_config(tmp_path, training_spec=TrainingSpec(mode="off_policy"), mixing_policy="all")
        assert config.training_spec.mode == "off_policy"


class TestSplitEval:
    def test_partition(self):
        questions = make_question_bank(50, 0)
        train_qs, eval_qs = split_eval(questions, 0.2, 0)
        assert len(eval_qs) == 10
        assert {q.id for q in train_qs} | {q.id for q in eval_qs} == {q.id for q in questions}
        assert not ({q.id for q in train_qs} & {q.id for q in eval_qs})

    def test_deterministic_per_seed(self):
        questions = make_question_bank(40, 0)
        assert split_eval(questions, 0.25, 3) == split_eval(questions, 0.25, 3)

    def test_varies_with_seed(self):
        questions = make_question_bank(40, 0)
        splits = {tuple(q.id for q in split_eval(questions, 0.25, s)[1]) for s in range(5)}
        assert len(splits) > 1

    def test_at_least_one_eval_question(self):
        questions = make_question_bank(3, 0)
        _, eval_qs = split_eval(questions, 0.01, 0)
        assert len(eval_qs) == 1


class TestShouldStop:
    def config(self, tmp_path, **kw):
        return small_config(tmp_path, **kw)

    def test_iteration_cap(self, tmp_path):
        config = self.config(tmp_path, max_iterations=2, early_stop=True)
        assert should_stop([0.1, 0.5, 0.9], config, 2)

    def test_small_gain_stops(self, tmp_path):
        config = self.config(tmp_path, max_iterations=10, min_gain=0.01, early_stop=True)
        assert should_stop([0.50, 0.505], config, 1)

    def test_decline_stops(self, tmp_path):
        config = self.config(tmp_path, max_iterations=10, early_stop=True)
        assert should_stop([0.50, 0.40], config, 1)

    def test_healthy_gain_continues(self, tmp_path):
        config = self.config(tmp_path, max_iterations=10, min_gain=0.01, early_stop=True)
        assert not should_stop([0.50, 0.60], config, 1)

    def test_early_stop_disabled_runs_to_cap(self, tmp_path):
        config = self.config(tmp_path, max_iterations=10, early_stop=False)
        assert not should_stop([0.50, 0.40], config, 1)
        assert should_stop([0.50, 0.40], config, 10)


class TestRunDistillation:
    def test_artifacts_written(self, tmp_path):
        config = small_config(tmp_path)
        manifest = run_distillation(config)
        assert (tmp_path / "d_llm.jsonl").exists()
        for t in (1, 2):
            assert (tmp_path / f"d_self.{t}.jsonl").exists()
            assert (tmp_path / f"d_mix.{t}.jsonl").exists()
        assert (tmp_path / "run-manifest.json").exists()
        assert (tmp_path / "timings.json").exists()
        assert len(manifest.entries) == 3
        assert manifest.stopped_reason == "max_iterations"

    def test_manifest_entry_shape(self, tmp_path):
        manifest = run_distillation(small_config(tmp_path))
        entry = manifest.entries[1]
        for key in ("iteration", "alpha", "kl", "p_llm", "p_sm", "p_train",
                    "n_self", "n_llm_used", "n_mix", "filter_report", "eval_accuracy", "model"):
            assert key in entry
        assert manifest.entries[0]["alpha"] == 1.0
        assert 0.0 <= entry["alpha"] <= 1.0

    def test_alpha_matches_mix_file_counts(self, tmp_path):
        manifest = run_distillation(small_config(tmp_path))
        for t in (1, 2):
            mixed = load_dataset(tmp_path / f"d_mix.{t}.jsonl")
            n_llm = sum(1 for s in mixed if s.origin.kind == "teacher")
            entry = manifest.entries[t]
            assert entry["alpha"] == pytest.approx(n_llm / len(mixed))
            assert entry["n_mix"] == len(mixed)

    def test_two_runs_byte_identical(self, tmp_path):
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        run_distillation(small_config(dir_a, seed=5))
        run_distillation(small_config(dir_b, seed=5))
        for name in ("run-manifest.json", "d_llm.jsonl", "d_self.1.jsonl", "d_mix.2.jsonl"):
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name

    def test_different_seed_changes_manifest(self, tmp_path):
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        run_distillation(small_config(dir_a, seed=1))
        run_distillation(small_config(dir_b, seed=2))
        assert (dir_a / "run-manifest.json").read_bytes() != (dir_b / "run-manifest.json").read_bytes()

    def test_zero_accuracy_student_keeps_running_on_llm_data(self, tmp_path):
        # the all-policy mix never goes empty even when the student solves nothing
        policy = make_policy(dict(UNIFORM), {s: 0.0 for s in ALL_STRATEGIES}, 0)
        config = small_config(
            tmp_path,
            base_handle=ModelHandle("simulated", policy=policy),
            training_spec=TrainingSpec(accuracy_uplift=1.0),
        )
        manifest = run_distillation(config)
        assert len(manifest.entries) == 3
        for entry in manifest.entries[1:]:
            assert entry["n_self"] == 0
            assert entry["alpha"] == 1.0

    def test_partial_manifest_flushed_on_failure(self, tmp_path):
        class ExplodingTeacher:
            def generate(self, request, config):
                raise SikedError("teacher offline")

            def complete_eval(self, request):
                return ""

        config = small_config(tmp_path, teacher=ExplodingTeacher())
        with pytest.raises(SikedError):
            run_distillation(config)
        payload = json.loads((tmp_path / "run-manifest.json").read_text())
        assert payload["entries"] == []
        assert payload["final_handle"] is None

    def test_bias_restricts_student_rows_in_mix(self, tmp_path):
        config = small_config(tmp_path, bias=Strategy.POT, n_questions=40)
        run_distillation(config)
        mixed = load_dataset(tmp_path / "d_mix.2.jsonl")
        qids_with_pot = {
            s.question_id for s in mixed if s.origin.kind == "student" and s.strategy is Strategy.POT
        }
        for s in mixed:
            if s.origin.kind == "student" and s.question_id in qids_with_pot:
                assert s.strategy is Strategy.POT

    def test_adaptive_policy_drops_solved_teacher_rows(self, tmp_path):
        config = small_config(tmp_path, mixing_policy="adaptive")
        run_distillation(config)
        mixed = load_dataset(tmp_path / "d_mix.1.jsonl")
        d_self = load_dataset(tmp_path / "d_self.1.jsonl")
        solved = d_self.question_ids()
        teacher_qids = {s.question_id for s in mixed if s.origin.kind == "teacher"}
        assert not (teacher_qids & solved)


class TestConfigHash:
    def test_stable(self, tmp_path):
        a = config_hash(small_config(tmp_path / "a", seed=4))
        b = config_hash(small_config(tmp_path / "b", seed=4))
        assert a == b

    def test_sensitive_to_policy(self, tmp_path):
        a = config_hash(small_config(tmp_path, mixing_policy="all"))
        b = config_hash(small_config(tmp_path, mixing_policy="adaptive"))
        assert a != b
