"""Two-stage news-to-report generation: an attention seq2seq stage proposes
an outline of salient terms, and a latent-variable stage expands the fused
news-plus-outline representation into the full report."""

from .config import DecodeConfig, TrainingConfig
from .corpus import (NewsReportPair, Vocabulary, build_vocabulary,
                     derive_outlines, read_dataset, tokenize)
from .generation import GenerationResult, beam_search, bleu, generate, repetition_rate
from .model import NewsToReportModel, build_model
from .training import Trainer, load_checkpoint, resume_trainer, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "DecodeConfig",
    "TrainingConfig",
    "NewsReportPair",
    "Vocabulary",
    "build_vocabulary",
    "derive_outlines",
    "read_dataset",
    "tokenize",
    "GenerationResult",
    "beam_search",
    "bleu",
    "generate",
    "repetition_rate",
    "NewsToReportModel",
    "build_model",
    "Trainer",
    "load_checkpoint",
    "resume_trainer",
    "save_checkpoint",
    "__version__",
]
