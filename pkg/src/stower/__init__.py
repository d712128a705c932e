"""Latent-space text style transfer with a pivot-masking second stage, on a numpy autodiff core."""

from .config import Config
from .corpus import StyleCorpus, Vocab, gen_synthetic_corpus
from .metrics import bleu_score, geometric_mean
from .pipeline import run_pipeline, save_run
from .transfer import adjust_latent, transfer_texts

__all__ = [
    "Config", "StyleCorpus", "Vocab", "gen_synthetic_corpus", "bleu_score", "geometric_mean",
    "run_pipeline", "save_run", "adjust_latent", "transfer_texts",
]
__version__ = "0.1.0"
