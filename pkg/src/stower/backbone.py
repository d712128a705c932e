"""Small transformer encoder pre-trained with masked-token prediction.

It stands in for a large pre-trained language model: after pre-training it
is frozen and only used to produce contextual token vectors for the VAE
encoder and the style scorer.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .config import BackboneConfig
from .corpus import BOS, EOS, MASK, PAD, UNK, Batch, Sentence, batch_by_tokens
from .nn import Embedding, LayerNorm, Linear, Module, TransformerBlock, attention_bias
from .optim import Adam, check_finite

log = logging.getLogger(__name__)


class BackboneModel(Module):
    def __init__(self, vocab_size: int, cfg: BackboneConfig, rng: np.random.Generator,
                 max_len: int = 66):
        if cfg.mode not in ("mlm", "identity"):
            raise ValueError(f"backbone.mode must be 'mlm' or 'identity', got {cfg.mode!r}")
        self.vocab_size = vocab_size
        self.mode = cfg.mode
        self.d_model = cfg.d_model
        self.max_len = max_len
        self.tok = Embedding(vocab_size, cfg.d_model, rng)
        self.pos = Embedding(max_len, cfg.d_model, rng, std=0.02)
        if cfg.mode == "mlm":
            self.blocks = [TransformerBlock(cfg.d_model, cfg.heads, cfg.ffn_dim, rng)
                           for _ in range(cfg.layers)]
            self.ln = LayerNorm(cfg.d_model)
            self.mlm_head = Linear(cfg.d_model, vocab_size, rng)
        else:
            self.blocks = []
        self.history: list[float] = []

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def __call__(self, tokens: np.ndarray, mask: np.ndarray) -> T.Tensor:
        tokens = np.asarray(tokens)
        if tokens.size and (tokens.max() >= self.vocab_size or tokens.min() < 0):
            raise ValueError(f"token id {int(tokens.max())} outside backbone vocabulary "
                             f"of size {self.vocab_size}")
        B, L = tokens.shape
        if L > self.max_len:
            raise ValueError(f"sequence length {L} exceeds backbone max_len {self.max_len}")
        h = self.tok(tokens) + self.pos(np.arange(L))
        if self.mode == "identity":
            return h
        bias = attention_bias(mask, L)
        for blk in self.blocks:
            h = blk(h, bias)
        return self.ln(h)


def encode_features(model: BackboneModel, batch: Batch | tuple) -> T.Tensor:
    """Contextual vectors [B, L, d_model]; padding rows are left for callers to mask."""
    tokens, mask = (batch.tokens, batch.mask) if isinstance(batch, Batch) else batch
    if model.frozen:
        with T.no_grad():
            return model(tokens, mask)
    return model(tokens, mask)


# Of the positions chosen for prediction, this share becomes MASK, this share a
# random word, and the rest keep their token. Predicting visible tokens too is
# what keeps each position's own identity in its output vector.
MASK_SHARE, RANDOM_SHARE = 0.8, 0.1
FIRST_WORD_ID = UNK + 1


def mlm_mask(tokens: np.ndarray, rate: float, rng: np.random.Generator,
             vocab_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Choose a random ``rate`` share of content tokens (at least one per row) for prediction.

    Chosen tokens are corrupted 80/10/10 (mask / random word / unchanged).
    Without ``vocab_size`` every chosen token is masked.
    """
    content = (tokens != PAD) & (tokens != BOS) & (tokens != EOS)
    chosen = (rng.random(tokens.shape) < rate) & content
    for i in np.flatnonzero(~chosen.any(axis=1) & content.any(axis=1)):
        cols = np.flatnonzero(content[i])
        chosen[i, cols[rng.integers(len(cols))]] = True
    if vocab_size is None or vocab_size <= FIRST_WORD_ID:
        return np.where(chosen, MASK, tokens), chosen
    u = rng.random(tokens.shape)
    random_words = rng.integers(FIRST_WORD_ID, vocab_size, size=tokens.shape)
    masked = np.where(chosen & (u < MASK_SHARE), MASK, tokens)
    masked = np.where(chosen & (u >= MASK_SHARE) & (u < MASK_SHARE + RANDOM_SHARE), random_words, masked)
    return masked, chosen


def pretrain_backbone_mlm(sentences: list[Sentence], vocab_size: int, cfg: BackboneConfig,
                          seed: int, max_len: int = 66) -> BackboneModel:
    """Pre-train with masked-token prediction, then freeze.

    Runs ``cfg.steps`` updates when positive, otherwise ``cfg.epochs`` epochs.
    Per-epoch mean losses are kept in ``model.history``.
    """
    rng = np.random.default_rng(seed)
    model = BackboneModel(vocab_size, cfg, rng, max_len)
    if cfg.mode == "identity":
        model.freeze()
        return model
    opt = Adam(model.parameters(), lr=cfg.lr)
    step, epoch = 0, 0
    total_steps = cfg.steps if cfg.steps > 0 else None
    while True:
        losses = []
        for batch in batch_by_tokens(sentences, cfg.token_budget, seed=int(rng.integers(2 ** 31))):
            masked, chosen = mlm_mask(batch.tokens, cfg.mask_rate, rng, vocab_size)
            logits = model.mlm_head(model(masked, batch.mask))
            loss = T.cross_entropy(logits, batch.tokens, chosen)
            check_finite(loss.item(), "backbone MLM pre-training", step=step, epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
            if total_steps is not None and step >= total_steps:
                break
        model.history.append(float(np.mean(losses)))
        log.info("backbone epoch %d mlm_loss %.4f", epoch, model.history[-1])
        epoch += 1
        if total_steps is not None:
            if step >= total_steps:
                break
        elif epoch >= cfg.epochs:
            break
    model.final_loss = model.history[-1]
    model.freeze()
    return model


def mlm_loss(model: BackboneModel, sentences: list[Sentence], rate: float, seed: int) -> float:
    """Mean masked-token loss of a (frozen) model on ``sentences``."""
    rng = np.random.default_rng(seed)
    losses, weights = [], []
    with T.no_grad():
        for batch in batch_by_tokens(sentences, 4096, seed=None):
            masked, chosen = mlm_mask(batch.tokens, rate, rng)
            logits = model.mlm_head(model(masked, batch.mask))
            losses.append(T.cross_entropy(logits, batch.tokens, chosen).item())
            weights.append(chosen.sum())
    return float(np.average(losses, weights=weights))
