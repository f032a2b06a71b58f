"""Length-controllable rationale models, evaluation, and study tooling."""

__version__ = "0.1.0"

from .corpus import Dataset, Document, LabelSpace, load_jsonl, save_jsonl
from .objectives import LossBreakdown, LossWeights
from .rationale import Rationale, extract, random_rationale, word_budget
from .trainer import Checkpoint, TrainConfig, evaluate, sweep, train

__all__ = [
    "__version__",
    "Checkpoint",
    "Dataset",
    "Document",
    "LabelSpace",
    "LossBreakdown",
    "LossWeights",
    "Rationale",
    "TrainConfig",
    "evaluate",
    "extract",
    "load_jsonl",
    "random_rationale",
    "save_jsonl",
    "sweep",
    "train",
    "word_budget",
]
