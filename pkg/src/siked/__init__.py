"""Self-guided iterative knowledge distillation pipeline for multi-strategy
reasoning data: generation, verification, mixing, iterative retraining, and
distribution metrics, runnable end to end against deterministic mock backends.
"""

from .core import (
    ALL_STRATEGIES,
    Dataset,
    DatasetKind,
    Origin,
    QuestionRecord,
    RationaleSample,
    SikedError,
    Strategy,
    load_dataset,
    load_questions,
    save_dataset,
)
from .mixer import MixStats, compute_alpha, mix_adaptive, mix_all
from .metrics import StrategyDistribution, kl_divergence, mixture, strategy_distribution
from .verify import MatchPolicy, answers_match, extract_final_answer, filter_correct

__version__ = "0.1.0"

__all__ = [
    "ALL_STRATEGIES",
    "Dataset",
    "DatasetKind",
    "MatchPolicy",
    "MixStats",
    "Origin",
    "QuestionRecord",
    "RationaleSample",
    "SikedError",
    "Strategy",
    "StrategyDistribution",
    "answers_match",
    "compute_alpha",
    "extract_final_answer",
    "filter_correct",
    "kl_divergence",
    "load_dataset",
    "load_questions",
    "mix_adaptive",
    "mix_all",
    "mixture",
    "save_dataset",
    "strategy_distribution",
    "__version__",
]
