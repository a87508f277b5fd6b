"""Supervised fine-tuning over (input, target) records with input masking.

Only target tokens (the strategy line plus rationale) contribute to the
loss; input tokens are masked out with IGNORE_INDEX. Sequences are laid
out as `input SEP target EOS`, truncated to max_seq_len.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .model import ByteTokenizer, TinyCausalLM, build_base_model

IGNORE_INDEX = -100
ADAPTER_WEIGHTS_FILE = "adapter.pt"
ADAPTER_METADATA_FILE = "adapter-metadata.json"


class TrainerInputError(ValueError):
    """Bad invocation arguments or malformed training data."""


@dataclass(frozen=True)
class AdapterArgs:
    train_file: Path
    base_model: str
    init_from: str  # previous adapter dir, or "none"
    output_dir: Path
    epochs: int
    lr: float
    lora_rank: int
    lora_alpha: int
    scheduler: str
    max_seq_len: int

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainerInputError("epochs must be >= 1")
        if self.lr <= 0:
            raise TrainerInputError("lr must be positive")
        if self.lora_rank < 1 or self.lora_alpha < 1:
            raise TrainerInputError("lora rank and alpha must be >= 1")
        if self.scheduler not in ("linear", "cyclic"):
            raise TrainerInputError(f"unknown scheduler: {self.scheduler!r}")
        if self.max_seq_len < 8:
            raise TrainerInputError("max_seq_len must be >= 8")


@dataclass(frozen=True)
class TrainingResult:
    records_seen: int
    final_loss: float
    steps: int


def load_records(path: Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise TrainerInputError(f"train file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise TrainerInputError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if not isinstance(obj, dict) or "input" not in obj or "target" not in obj:
                raise TrainerInputError(f"{path}:{lineno}: record needs 'input' and 'target' fields")
            if not isinstance(obj["input"], str) or not isinstance(obj["target"], str):
                raise TrainerInputError(f"{path}:{lineno}: 'input' and 'target' must be strings")
            records.append(obj)
    if not records:
        raise TrainerInputError(f"{path}: no training records")
    return records


def encode_example(record: dict, max_seq_len: int) -> tuple[list[int], list[int]]:
    """Token ids and per-position labels; input positions carry IGNORE_INDEX."""
    tok = ByteTokenizer()
    input_ids = tok.encode(record["input"]) + [tok.sep_id]
    target_ids = tok.encode(record["target"]) + [tok.eos_id]
    ids = (input_ids + target_ids)[:max_seq_len]
    labels = ([IGNORE_INDEX] * len(input_ids) + target_ids)[:max_seq_len]
    return ids, labels


def _batch(examples: list[tuple[list[int], list[int]]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(ids) for ids, _ in examples)
    ids = torch.full((len(examples), width), pad_id, dtype=torch.long)
    labels = torch.full((len(examples), width), IGNORE_INDEX, dtype=torch.long)
    for row, (example_ids, example_labels) in enumerate(examples):
        ids[row, : len(example_ids)] = torch.tensor(example_ids)
        labels[row, : len(example_labels)] = torch.tensor(example_labels)
    return ids, labels


def masked_lm_loss(model: TinyCausalLM, ids: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Next-token cross entropy over unmasked positions; also returns how
    many target tokens contributed."""
    logits = model(ids)
    shifted_logits = logits[:, :-1, :].reshape(-1, logits.shape[-1])
    shifted_labels = labels[:, 1:].reshape(-1)
    n_target = int((shifted_labels != IGNORE_INDEX).sum())
    loss = nn.functional.cross_entropy(shifted_logits, shifted_labels, ignore_index=IGNORE_INDEX)
    return loss, n_target


def _build_scheduler(optimizer, kind: str, total_steps: int):
    if kind == "linear":
        return torch.optim.lr_scheduler.LambdaLR(
            optimizer, lambda step: max(0.0, 1.0 - step / max(1, total_steps))
        )
    # triangular cycle: ramp up for the first half, back down for the second
    half = max(1, total_steps // 2)
    return torch.optim.lr_scheduler.LambdaLR(
        optimizer,
        lambda step: (step % (2 * half)) / half
        if (step % (2 * half)) < half
        else 2.0 - (step % (2 * half)) / half,
    )


def build_model(args: AdapterArgs) -> TinyCausalLM:
    model = build_base_model(args.base_model, args.max_seq_len)
    model.attach_adapters(args.lora_rank, args.lora_alpha)
    if args.init_from != "none":
        weights_path = Path(args.init_from) / ADAPTER_WEIGHTS_FILE
        if not weights_path.exists():
            raise TrainerInputError(f"init checkpoint has no {ADAPTER_WEIGHTS_FILE}: {args.init_from}")
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_adapter_state_dict(state)
    return model


def run_training(args: AdapterArgs, batch_size: int = 8) -> TrainingResult:
    """Train the adapter and write artifacts; metadata is written last so a
    failed run never leaves partial metadata behind."""
    records = load_records(args.train_file)
    torch.manual_seed(0)
    model = build_model(args)
    examples = [encode_example(r, args.max_seq_len) for r in records]
    batches = [examples[i : i + batch_size] for i in range(0, len(examples), batch_size)]
    total_steps = len(batches) * args.epochs

    optimizer = torch.optim.AdamW(model.trainable_parameters(), lr=args.lr)
    scheduler = _build_scheduler(optimizer, args.scheduler, total_steps)

    model.train()
    final_loss = 0.0
    steps = 0
    for _ in range(args.epochs):
        for batch in batches:
            ids, labels = _batch(batch, ByteTokenizer.pad_id)
            loss, _ = masked_lm_loss(model, ids, labels)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            final_loss = float(loss.detach())
            steps += 1

    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.adapter_state_dict(), output_dir / ADAPTER_WEIGHTS_FILE)
    metadata = {
        "records_seen": len(records),
        "epochs": args.epochs,
        "base_model": args.base_model,
        "final_loss": final_loss,
        "steps": steps,
        "lora_rank": args.lora_rank,
        "lora_alpha": args.lora_alpha,
        "scheduler": args.scheduler,
    }
    (output_dir / ADAPTER_METADATA_FILE).write_text(json.dumps(metadata, indent=2) + "\n")
    return TrainingResult(len(records), final_loss, steps)
