"""dualrec: a dual-encoder sequence-to-sequence recommender with
span-masked self-attention, matching and instruction-contrastive losses,
and a deterministic synthetic corpus — all on numpy with a small
reverse-mode autodiff core.
"""

from .autodiff import NonFiniteError, Tensor, finite_diff_check, no_grad
from .catalog import Catalog, generate_catalog, load_catalog, save_catalog
from .losses import LossWeights, lambda3_schedule, total_loss
from .model import (
    Model,
    ModelConfig,
    Span,
    build_visible_matrix,
    load_checkpoint,
    save_checkpoint,
)
from .prompts import PromptRegistry, PromptTemplate, render_prompt, split_prompts
from .tokenizer import Tokenizer
from .train import AdamW, TrainConfig, TrainingDiverged, build_tokenizer, train
from .evaluate import EvalReport, evaluate
from .verify import run_verification

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "Catalog",
    "EvalReport",
    "LossWeights",
    "Model",
    "ModelConfig",
    "NonFiniteError",
    "PromptRegistry",
    "PromptTemplate",
    "Span",
    "Tensor",
    "Tokenizer",
    "TrainConfig",
    "TrainingDiverged",
    "build_tokenizer",
    "build_visible_matrix",
    "evaluate",
    "finite_diff_check",
    "generate_catalog",
    "lambda3_schedule",
    "load_catalog",
    "load_checkpoint",
    "no_grad",
    "render_prompt",
    "run_verification",
    "save_catalog",
    "save_checkpoint",
    "split_prompts",
    "total_loss",
    "train",
]
