"""Desk-scale lab for vision-side unlearning in a toy multimodal model."""

from .evaluation import AttackCurve, RunReport, accuracy_gap, evaluate, relearn_attack, rouge_l
from .numerics import Rng
from .synthbench import SplitDatasets, generate
from .toy_mllm import Dims, ToyMLLM, forward_qa, forward_vqa, train_vanilla
from .unlearn import UnlearnConfig, unlearn_baseline, unlearn_vkd

__version__ = "0.1.0"

__all__ = [
    "AttackCurve", "Dims", "Rng", "RunReport", "SplitDatasets", "ToyMLLM", "UnlearnConfig",
    "accuracy_gap", "evaluate", "forward_qa", "forward_vqa", "generate", "relearn_attack",
    "rouge_l", "train_vanilla", "unlearn_baseline", "unlearn_vkd",
]
