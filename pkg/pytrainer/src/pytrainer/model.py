"""A deliberately tiny byte-level causal LM with low-rank adapters.

The base weights are derived deterministically from the base-model id, so
any id names a reproducible frozen model without downloading anything.
Only the low-rank A/B matrices train; everything else stays frozen.
"""

from __future__ import annotations

import hashlib
import math

import torch
from torch import nn

PAD_ID = 256
SEP_ID = 257
EOS_ID = 258
VOCAB_SIZE = 259

D_MODEL = 64
N_HEADS = 2
N_LAYERS = 2
FFN_DIM = 128


class ByteTokenizer:
    """UTF-8 bytes plus three specials: PAD, SEP (input/target boundary), EOS."""

    pad_id = PAD_ID
    sep_id = SEP_ID
    eos_id = EOS_ID
    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: list[int]) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank update (B @ A) * alpha/rank."""

    def __init__(self, base: nn.Linear, rank: int, alpha: int):
        super().__init__()
        self.base = base
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.rank = rank
        self.scaling = alpha / rank
        self.lora_a = nn.Parameter(torch.zeros(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        # standard init: A random, B zero, so the adapter starts as identity
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.lora_a.T @ self.lora_b.T) * self.scaling


class Block(nn.Module):
    def __init__(self):
        super().__init__()
        self.ln1 = nn.LayerNorm(D_MODEL)
        self.attn = nn.MultiheadAttention(D_MODEL, N_HEADS, batch_first=True)
        self.ln2 = nn.LayerNorm(D_MODEL)
        self.ffn = nn.Sequential(
            nn.Linear(D_MODEL, FFN_DIM), nn.GELU(), nn.Linear(FFN_DIM, D_MODEL)
        )

    def forward(self, x: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        attn_out, _ = self.attn(h, h, h, attn_mask=causal_mask, need_weights=False)
        x = x + attn_out
        return x + self.ffn(self.ln2(x))


class TinyCausalLM(nn.Module):
    def __init__(self, max_seq_len: int = 1024):
        super().__init__()
        self.max_seq_len = max_seq_len
        self.embed = nn.Embedding(VOCAB_SIZE, D_MODEL)
        self.pos = nn.Embedding(max_seq_len, D_MODEL)
        self.blocks = nn.ModuleList(Block() for _ in range(N_LAYERS))
        self.ln_final = nn.LayerNorm(D_MODEL)
        self.head = nn.Linear(D_MODEL, VOCAB_SIZE, bias=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        n = ids.shape[1]
        positions = torch.arange(n, device=ids.device)
        x = self.embed(ids) + self.pos(positions)[None, :, :]
        mask = torch.triu(torch.full((n, n), float("-inf"), device=ids.device), diagonal=1)
        for block in self.blocks:
            x = block(x, mask)
        return self.head(self.ln_final(x))

    def attach_adapters(self, rank: int, alpha: int) -> None:
        """Replace the FFN linears and the LM head with LoRA-wrapped versions."""
        for block in self.blocks:
            block.ffn[0] = LoRALinear(block.ffn[0], rank, alpha)
            block.ffn[2] = LoRALinear(block.ffn[2], rank, alpha)
        self.head = LoRALinear(self.head, rank, alpha)

    def adapter_state_dict(self) -> dict:
        return {
            name: tensor
            for name, tensor in self.state_dict().items()
            if "lora_a" in name or "lora_b" in name
        }

    def load_adapter_state_dict(self, state: dict) -> None:
        missing = [name for name in state if name not in dict(self.state_dict())]
        if missing:
            raise ValueError(f"adapter state does not fit this model: {missing[:3]}")
        self.load_state_dict(state, strict=False)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def _seed_from_id(base_model: str) -> int:
    return int.from_bytes(hashlib.sha256(base_model.encode()).digest()[:4], "big")


def build_base_model(base_model: str, max_seq_len: int) -> TinyCausalLM:
    """Deterministic frozen base: the id seeds the weight init."""
    generator_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(_seed_from_id(base_model))
        model = TinyCausalLM(max_seq_len=max_seq_len)
    finally:
        torch.random.set_rng_state(generator_state)
    for param in model.parameters():
        param.requires_grad_(False)
    return model
