"""LoRA fine-tuning adapter speaking the siked trainer command protocol."""

from .model import ByteTokenizer, LoRALinear, TinyCausalLM, build_base_model
from .training import AdapterArgs, TrainingResult, encode_example, load_records, run_training

__all__ = [
    "AdapterArgs",
    "ByteTokenizer",
    "LoRALinear",
    "TinyCausalLM",
    "TrainingResult",
    "build_base_model",
    "encode_example",
    "load_records",
    "run_training",
]

__version__ = "0.1.0"
