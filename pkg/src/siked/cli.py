"""Command-line entry point: one executable, one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import loop, mixer, scenarios
from .core import (
    ALL_STRATEGIES,
    Dataset,
    SikedError,
    Strategy,
    index_questions,
    load_dataset,
    load_questions,
    save_dataset,
)
from .genclient import EndpointBackend, GenConfig, MockBackend
from .metrics import StrategyDistribution, evaluate_maj1, stats_csv_rows
from .trainer import ExternalTrainerConfig, ModelHandle, PolicySnapshot, SimulatedPolicyBackend, TrainingSpec
from .verify import MatchPolicy

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE_ERROR = 2

TOP_LEVEL_KEYS = {
    "questions_path", "output_dir", "strategies", "mixing_policy", "bias",
    "training_mode", "max_iterations", "min_gain", "seed", "K",
    "teacher_temperature", "student_temperature", "max_tokens",
    "eval_fraction", "early_stop", "teacher", "student",
}
TEACHER_KEYS = {"base_url", "model", "auth_env", "mock_script"}
STUDENT_KEYS = {
    "simulated", "initial_probs", "initial_accuracy", "adapter_cmd",
    "base_model", "mock_script", "epochs", "learning_rate", "lora_rank",
    "lora_alpha", "scheduler", "max_seq_len",
}


def _reject_unknown(table: dict, allowed: set, context: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise SikedError(f"unknown config keys in {context}: {sorted(unknown)}")


def load_config_file(path: Path, overrides: dict[str, str]) -> dict:
    with Path(path).open("rb") as fh:
        config = tomllib.load(fh)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        target = config
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        try:
            target[parts[-1]] = json.loads(value)
        except ValueError:
            target[parts[-1]] = value
    _reject_unknown(config, TOP_LEVEL_KEYS, "the config root")
    _reject_unknown(config.get("teacher", {}), TEACHER_KEYS, "[teacher]")
    _reject_unknown(config.get("student", {}), STUDENT_KEYS, "[student]")
    return config


def _parse_strategies(raw) -> tuple[Strategy, ...]:
    if raw is None:
        return ALL_STRATEGIES
    return tuple(Strategy.parse(s) for s in raw)


def _teacher_backend(config: dict):
    teacher = config.get("teacher", {})
    if "mock_script" in teacher:
        return MockBackend.from_file(teacher["mock_script"])
    if "base_url" in teacher:
        return EndpointBackend(
            teacher["base_url"], teacher.get("model", ""), teacher.get("auth_env")
        )
    raise SikedError("config needs [teacher] with either mock_script or base_url")


def _student_policy(student: dict, strategies, seed: int) -> PolicySnapshot:
    probs_raw = student.get("initial_probs")
    if probs_raw:
        probs = StrategyDistribution({Strategy.parse(k): v for k, v in probs_raw.items()})
    else:
        probs = StrategyDistribution.uniform(list(strategies))
    acc_raw = student.get("initial_accuracy")
    if acc_raw:
        accuracy = {Strategy.parse(k): v for k, v in acc_raw.items()}
    else:
        accuracy = {s: 0.3 for s in strategies}
    return PolicySnapshot(probs, accuracy, seed)


def build_loop_config(config: dict) -> loop.LoopConfig:
    if "questions_path" not in config or "output_dir" not in config:
        raise SikedError("config needs questions_path and output_dir")
    questions = load_questions(config["questions_path"])
    strategies = _parse_strategies(config.get("strategies"))
    seed = int(config.get("seed", 0))
    student = config.get("student", {})
    k = int(config.get("K", 10))
    if k < 1:
        raise SikedError("K must be >= 1")

    spec = TrainingSpec(
        epochs=int(student.get("epochs", 3)),
        learning_rate=float(student.get("learning_rate", 2e-4)),
        lora_rank=int(student.get("lora_rank", 16)),
        lora_alpha=int(student.get("lora_alpha", 32)),
        scheduler=student.get("scheduler", "linear"),
        max_seq_len=int(student.get("max_seq_len", 1024)),
        mode=config.get("training_mode", "on_policy"),
    )

    external = None
    student_backend = None
    if student.get("adapter_cmd"):
        adapter_cmd = student["adapter_cmd"]
        if isinstance(adapter_cmd, str):
            adapter_cmd = adapter_cmd.split()
        external = ExternalTrainerConfig(
            adapter_cmd=tuple(adapter_cmd),
            base_model=student.get("base_model", "base"),
            output_root=Path(config["output_dir"]),
            instruction="Choose a reasoning strategy and solve the problem.",
        )
        base_handle = ModelHandle("external", model_dir=None)
        if student.get("mock_script"):
            student_backend = MockBackend.from_file(student["mock_script"])
    else:
        base_handle = ModelHandle(
            "simulated", policy=_student_policy(student, strategies, seed)
        )

    bias = config.get("bias")
    return loop.LoopConfig(
        questions=questions,
        teacher=_teacher_backend(config),
        base_handle=base_handle,
        strategies=strategies,
        output_dir=Path(config["output_dir"]),
        max_iterations=int(config.get("max_iterations", 3)),
        min_gain=float(config.get("min_gain", 0.0025)),
        mixing_policy=config.get("mixing_policy", "adaptive"),
        bias=Strategy.parse(bias) if bias else None,
        training_spec=spec,
        teacher_gen=GenConfig(
            samples_per_pair=1,
            temperature=float(config.get("teacher_temperature", 0.0)),
            max_tokens=int(config.get("max_tokens", 512)),
        ),
        student_gen=GenConfig(
            samples_per_pair=k,
            temperature=float(config.get("student_temperature", 0.7)),
            max_tokens=int(config.get("max_tokens", 512)),
        ),
        eval_fraction=float(config.get("eval_fraction", 0.2)),
        seed=seed,
        early_stop=bool(config.get("early_stop", True)),
        student_backend=student_backend,
        external_trainer=external,
    )


def _collect_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise SikedError(f"override must look like key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key] = value
    return overrides


def cmd_distill(args) -> int:
    config = load_config_file(args.config, _collect_overrides(args.set))
    loop_config = build_loop_config(config)
    if args.dry_run:
        plan = {
            "questions": len(loop_config.questions),
            "strategies": [s.value for s in loop_config.strategies],
            "phases": ["stage0 (teacher distillation)"]
            + [f"iteration {t}" for t in range(1, loop_config.max_iterations + 1)],
            "mixing_policy": loop_config.mixing_policy,
            "training_mode": loop_config.training_spec.mode,
            "output_dir": str(loop_config.output_dir),
        }
        print(json.dumps(plan, indent=2))
        return EXIT_OK
    manifest = loop.run_distillation(loop_config)
    print(f"run complete: {len(manifest.entries)} manifest entries -> {loop_config.output_dir}")
    return EXIT_OK


def cmd_gen_llm(args) -> int:
    from .core import DatasetKind, Origin
    from .genclient import generate_llm_dataset
    from .verify import filter_correct

    config = load_config_file(args.config, _collect_overrides(args.set))
    loop_config = build_loop_config(config)
    index = index_questions(loop_config.questions)
    triples = generate_llm_dataset(
        loop_config.teacher,
        loop_config.questions,
        loop_config.strategies,
        loop_config.templates,
        loop_config.teacher_gen,
    )
    d_llm, report = filter_correct(
        triples, index, loop_config.match_policy, Origin.TEACHER, DatasetKind.llm()
    )
    loop_config.output_dir.mkdir(parents=True, exist_ok=True)
    out = loop_config.output_dir / "d_llm.jsonl"
    save_dataset(d_llm, out)
    print(json.dumps({"written": str(out), "kept": len(d_llm), "filter_report": report.to_json()}, indent=2))
    return EXIT_OK


def cmd_mix(args) -> int:
    d_llm = load_dataset(args.llm)
    d_self = load_dataset(args.self_data)
    bias = Strategy.parse(args.bias) if args.bias else None
    mixed, stats = mixer.mix(args.policy, d_llm, d_self, bias=bias)
    save_dataset(mixed, args.out)
    stats_payload = stats.to_json()
    if args.stats:
        Path(args.stats).write_text(json.dumps(stats_payload, indent=2) + "\n")
    print(json.dumps(stats_payload, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    questions = load_questions(args.questions)
    if args.mock_script:
        backend = MockBackend.from_file(args.mock_script)
    elif args.policy_file:
        payload = json.loads(Path(args.policy_file).read_text())
        probs = StrategyDistribution({Strategy.parse(k): v for k, v in payload["strategy_probs"].items()})
        accuracy = {Strategy.parse(k): v for k, v in payload["per_strategy_accuracy"].items()}
        backend = SimulatedPolicyBackend(PolicySnapshot(probs, accuracy, payload.get("seed", 0)))
    else:
        raise SikedError("eval needs --mock-script or --policy-file")
    score = evaluate_maj1(backend, questions, MatchPolicy(), seed=args.seed)
    print(json.dumps({"questions": len(questions), "accuracy": score}))
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    rows = stats_csv_rows(manifest["entries"])
    if args.csv:
        header = "iteration,strategy,p_llm,p_sm,p_train,alpha,kl"
        lines = [header] + [
            f'{r["iteration"]},{r["strategy"]},{r["p_llm"]},{r["p_sm"]},{r["p_train"]},{r["alpha"]},{r["kl"]}'
            for r in rows
        ]
        Path(args.csv).write_text("\n".join(lines) + "\n")
    print(json.dumps(rows, indent=2))
    return EXIT_OK


def cmd_simulate(args) -> int:
    report = scenarios.run_scenario(args.scenario, Path(args.output_dir), args.seed)
    payload = report.to_json()
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps({
        "scenario": payload["scenario"],
        "passed": payload["passed"],
        "assertions": payload["assertions"],
    }, indent=2))
    return EXIT_OK if report.passed else EXIT_DOMAIN_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siked", description="Iterative multi-strategy distillation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, needs_config in (
        ("distill", cmd_distill, True),
        ("gen-llm", cmd_gen_llm, True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted paths allowed)")
        if name == "distill":
            p.add_argument("--dry-run", action="store_true")
        p.set_defaults(fn=fn)

    p = sub.add_parser("mix")
    p.add_argument("--llm", required=True)
    p.add_argument("--self", dest="self_data", required=True)
    p.add_argument("--policy", choices=["all", "adaptive"], default="all")
    p.add_argument("--bias", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None)
    p.set_defaults(fn=cmd_mix)

    p = sub.add_parser("eval")
    p.add_argument("--questions", required=True)
    p.add_argument("--mock-script", default=None)
    p.add_argument("--policy-file", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("stats")
    p.add_argument("--manifest", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("simulate")
    p.add_argument("--scenario", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_simulate)

    return parser


def dispatch(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE_ERROR if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN_ERROR
    except SikedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN_ERROR


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
