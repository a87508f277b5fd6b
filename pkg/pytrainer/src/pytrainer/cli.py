"""Command-line entry point implementing the trainer adapter protocol."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .training import AdapterArgs, TrainerInputError, run_training


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pytrainer",
        description="LoRA fine-tuning adapter over (input, target) JSONL records",
    )
    parser.add_argument("--train-file", type=Path, required=True)
    parser.add_argument("--base-model", required=True)
    parser.add_argument("--init-from", required=True,
                        help="previous adapter directory, or 'none' to start fresh")
    parser.add_argument("--output-dir", type=Path, required=True)
    parser.add_argument("--epochs", type=int, required=True)
    parser.add_argument("--lr", type=float, required=True)
    parser.add_argument("--lora-rank", type=int, required=True)
    parser.add_argument("--lora-alpha", type=int, required=True)
    parser.add_argument("--scheduler", choices=["linear", "cyclic"], required=True)
    parser.add_argument("--max-seq-len", type=int, required=True)
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        adapter_args = AdapterArgs(
            train_file=args.train_file,
            base_model=args.base_model,
            init_from=args.init_from,
            output_dir=args.output_dir,
            epochs=args.epochs,
            lr=args.lr,
            lora_rank=args.lora_rank,
            lora_alpha=args.lora_alpha,
            scheduler=args.scheduler,
            max_seq_len=args.max_seq_len,
        )
        result = run_training(adapter_args)
    except TrainerInputError as exc:
        print(f"pytrainer: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # never leave metadata behind on surprises either
        print(f"pytrainer: unexpected failure: {exc}", file=sys.stderr)
        return 1
    print(
        f"trained on {result.records_seen} records for {args.epochs} epochs "
        f"({result.steps} steps, final loss {result.final_loss:.4f})"
    )
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
