"""Two-stage training.

Stage I trains the VAE and the style table jointly (reconstruction + KL +
cosine style loss). Stage II fine-tunes only the VAE: each epoch a random
share of sentences gets pivot-masked encoder input and must be
reconstructed to its original form; the style table is frozen.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .backbone import BackboneModel, encode_features
from .config import TrainConfig
from .corpus import Batch, Sentence, batch_by_tokens, make_batch
from .optim import Adam, TrainingError
from .pivot import MaskPlan, ScorerModel, importance_scores_batch, mask_sentence
from .vae import StyleEmbeddingTable, StyleVAE, vae_objective

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    steps: list[dict] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    heldout_loss: list[float] = field(default_factory=list)
    mask_log: list[dict] = field(default_factory=list)
    stopped_early: bool = False


class StepLogger:
    """Collects per-step loss records, optionally mirrored to a JSON-lines file."""

    def __init__(self, path=None):
        self._fh = None
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "a", encoding="utf-8")

    def __call__(self, record: dict):
        if self._fh:
            self._fh.write(json.dumps(record) + "\n")

    def close(self):
        if self._fh:
            self._fh.close()


def _plan_steps(n_batches: int, epochs: int, steps: int) -> tuple[int, int]:
    if steps > 0:
        return steps, int(np.ceil(steps / max(n_batches, 1)))
    return epochs * n_batches, epochs


def _trainable(*modules) -> list[T.Tensor]:
    return [p for m in modules for p in m.parameters() if p.requires_grad]


def _heldout_loss(backbone, vae, table, sentences, beta, seed, masked_tokens=None) -> float:
    """Mean VAE loss (posterior mean, no sampling noise) over ``sentences``."""
    if not sentences:
        return float("nan")
    total, count = 0.0, 0
    with T.no_grad():
        for batch in batch_by_tokens(sentences, 4096, seed=None):
            enc_tokens = batch.tokens if masked_tokens is None else \
                make_batch([Sentence("", masked_tokens[i]) for i in batch.indices]).tokens
            feats = encode_features(backbone, (enc_tokens, batch.mask))
            noise = np.zeros((len(batch), vae.d), dtype=np.float32)
            out = vae_objective(vae, table, feats, batch.mask, batch.tokens, batch.styles, noise,
                                beta, with_style_loss=False)
            total += out.total.item() * len(batch)
            count += len(batch)
    return total / count


def train_stage1(backbone: BackboneModel, vae: StyleVAE, table: StyleEmbeddingTable,
                 train: list[Sentence], held_out: list[Sentence], cfg: TrainConfig, seed: int,
                 log_path=None, full_bce: bool = False,
                 on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Joint VAE + style-table training with linear KL warm-up."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = _trainable(vae, table, backbone)
    opt = Adam(params, lr=cfg.lr, clip_norm=cfg.clip_norm)
    n_batches = len(batch_by_tokens(train, cfg.token_budget, seed=0))
    total_steps, epochs = _plan_steps(n_batches, cfg.stage1_epochs, cfg.stage1_steps)
    warmup = max(1, int(cfg.kl_warmup * total_steps))
    logger = StepLogger(log_path)
    result = TrainResult()
    last_good = [p.data.copy() for p in params]
    best, stale, step = np.inf, 0, 0
    try:
        for epoch in range(epochs):
            losses = []
            for batch in batch_by_tokens(train, cfg.token_budget, seed=int(rng.integers(2 ** 31))):
                beta = cfg.beta * min(1.0, step / warmup) if cfg.kl_warmup > 0 else cfg.beta
                noise = rng.standard_normal((len(batch), vae.d)).astype(np.float32)
                feats = encode_features(backbone, batch)
                out = vae_objective(vae, table, feats, batch.mask, batch.tokens, batch.styles, noise,
                                    beta, cfg.lambda_vae, cfg.lambda_style, full_bce)
                record = {"stage": 1, "step": step, "beta": beta, **out.as_dict()}
                if not np.isfinite(record["total"]):
                    for p, saved in zip(params, last_good):
                        p.data = saved
                    raise TrainingError(f"stage I loss became {record['total']} at step {step}; "
                                        "parameters restored to the last finite step")
                opt.zero_grad()
                out.total.backward()
                opt.step()
                last_good = [p.data.copy() for p in params]
                logger(record)
                if on_step:
                    on_step(record)
                result.steps.append(record)
                losses.append(record["total"])
                step += 1
                if step >= total_steps:
                    break
            result.epoch_loss.append(float(np.mean(losses)))
            held = _heldout_loss(backbone, vae, table, held_out, cfg.beta, seed)
            result.heldout_loss.append(held)
            log.info("stage1 epoch %d loss %.4f held-out %.4f", epoch, result.epoch_loss[-1], held)
            if step >= total_steps:
                break
            if np.isfinite(held):
                if held < best - 1e-4:
                    best, stale = held, 0
                else:
                    stale += 1
                    if cfg.patience and stale >= cfg.patience:
                        result.stopped_early = True
                        break
    finally:
        logger.close()
    return result


def compute_pivot_scores(scorer: ScorerModel, sentences: list[Sentence]) -> list[np.ndarray]:
    return importance_scores_batch(scorer, [s.tokens for s in sentences])


def select_sentences(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(``fraction``) choice of the sentences masked this epoch."""
    return rng.random(n) < fraction


def masked_batch_tokens(batch: Batch, sentences: list[Sentence], scores: list[np.ndarray],
                        selected: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, list[MaskPlan]]:
    """Encoder input for ``batch``: selected rows pivot-masked, the rest unchanged."""
    enc = batch.tokens.copy()
    plans = []
    for row, i in enumerate(batch.indices):
        toks, plan = mask_sentence(sentences[i].tokens, scores[i], rng, selected[i])
        enc[row, :len(toks)] = toks
        plans.append(plan)
    return enc, plans


def train_stage2(backbone: BackboneModel, vae: StyleVAE, table: StyleEmbeddingTable,
                 scorer: ScorerModel | None, train: list[Sentence], held_out: list[Sentence],
                 cfg: TrainConfig, seed: int, log_path=None,
                 scores: list[np.ndarray] | None = None) -> TrainResult:
    """Pivot-word masking fine-tune of the VAE with the style table frozen."""
    cfg.validate()
    if scorer is None and scores is None:
        raise ValueError("stage II needs a trained scorer (or precomputed scores)")
    rng = np.random.default_rng(seed)
    if scores is None:
        scores = compute_pivot_scores(scorer, train)
    table_was = [p.requires_grad for p in table.parameters()]
    table.freeze()
    params = _trainable(vae, backbone)
    opt = Adam(params, lr=cfg.lr * cfg.stage2_lr_scale, clip_norm=cfg.clip_norm)
    n_batches = len(batch_by_tokens(train, cfg.token_budget, seed=0))
    total_steps, epochs = _plan_steps(n_batches, cfg.stage2_epochs, cfg.stage2_steps)
    logger = StepLogger(log_path)
    result = TrainResult()
    best, stale, step = np.inf, 0, 0
    try:
        for epoch in range(epochs):
            selected = select_sentences(len(train), cfg.stage2_mask_fraction, rng)
            n_masked, losses = 0, []
            for batch in batch_by_tokens(train, cfg.token_budget, seed=int(rng.integers(2 ** 31))):
                enc_tokens, plans = masked_batch_tokens(batch, train, scores, selected, rng)
                n_masked += sum(int(p.masked.sum()) for p in plans)
                noise = rng.standard_normal((len(batch), vae.d)).astype(np.float32)
                feats = encode_features(backbone, (enc_tokens, batch.mask))
                out = vae_objective(vae, table, feats, batch.mask, batch.tokens, batch.styles, noise,
                                    cfg.beta, cfg.lambda_vae, with_style_loss=False)
                record = {"stage": 2, "step": step, "beta": cfg.beta, **out.as_dict()}
                if not np.isfinite(record["total"]):
                    raise TrainingError(f"stage II loss became {record['total']} at step {step}")
                opt.zero_grad()
                out.total.backward()
                opt.step()
                logger(record)
                result.steps.append(record)
                losses.append(record["total"])
                step += 1
                if step >= total_steps:
                    break
            result.mask_log.append({"epoch": epoch, "n_selected": int(selected.sum()),
                                    "n_masked_tokens": n_masked, "n_sentences": len(train)})
            result.epoch_loss.append(float(np.mean(losses)))
            held = _heldout_loss(backbone, vae, table, held_out, cfg.beta, seed)
            result.heldout_loss.append(held)
            log.info("stage2 epoch %d loss %.4f held-out %.4f masked %d", epoch,
                     result.epoch_loss[-1], held, n_masked)
            if step >= total_steps:
                break
            if np.isfinite(held):
                if held < best - 1e-4:
                    best, stale = held, 0
                else:
                    stale += 1
                    if cfg.patience and stale >= cfg.patience:
                        result.stopped_early = True
                        break
    finally:
        logger.close()
        for p, flag in zip(table.parameters(), table_was):
            p.requires_grad = flag
    return result


def masked_heldout_nll(backbone, vae, table, scorer, sentences: list[Sentence], beta: float,
                       seed: int) -> float:
    """Held-out VAE loss when every sentence's encoder input is pivot-masked."""
    scores = compute_pivot_scores(scorer, sentences)
    rng = np.random.default_rng(seed)
    masked = [mask_sentence(s.tokens, a, rng)[0] for s, a in zip(sentences, scores)]
    return _heldout_loss(backbone, vae, table, sentences, beta, seed, masked_tokens=masked)
