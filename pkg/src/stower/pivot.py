"""Style classifier on the frozen backbone, attention importance scores and pivot masking."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import BackboneModel, encode_features
from .config import ScorerConfig
from .corpus import BOS, EOS, MASK, PAD, Sentence, batch_by_tokens, make_batch
from .nn import LayerNorm, Linear, Module, TransformerBlock, attention_bias
from .optim import Adam, check_finite

log = logging.getLogger(__name__)


class ScorerModel(Module):
    """One extra transformer layer plus a softmax classifier read at the first token.

    Only this layer and the head train; the backbone stays frozen.
    """

    def __init__(self, backbone: BackboneModel, k: int, cfg: ScorerConfig, rng: np.random.Generator):
        if cfg.gamma <= 0:
            raise ValueError("gamma must be positive")
        if cfg.gamma >= 1:
            warnings.warn(f"gamma={cfg.gamma} >= 1 gives a flatter score distribution than plain attention")
        self._backbone = backbone
        d = backbone.d_model
        self.layer = TransformerBlock(d, cfg.heads, cfg.ffn_dim, rng)
        self.ln = LayerNorm(d)
        self.head = Linear(d, k, rng)
        self.gamma = cfg.gamma
        self.n_heads = cfg.heads
        self.heldout_accuracy = float("nan")

    @property
    def backbone(self) -> BackboneModel:
        return self._backbone

    def forward_features(self, features: T.Tensor, mask) -> T.Tensor:
        h = self.layer(features, attention_bias(mask, features.shape[1]))
        return self.head(self.ln(h[:, 0]))

    def __call__(self, tokens, mask) -> T.Tensor:
        return self.forward_features(encode_features(self._backbone, (tokens, mask)), mask)

    def predict(self, sentences: list[Sentence]) -> np.ndarray:
        preds = np.empty(len(sentences), dtype=np.int64)
        with T.no_grad():
            for batch in batch_by_tokens(sentences, 4096, seed=None):
                preds[batch.indices] = self(batch.tokens, batch.mask).data.argmax(-1)
        return preds

    def query_keys(self, tokens, mask) -> tuple[np.ndarray, np.ndarray]:
        """Per-head queries and keys [B, H, L, dh] of the final attention layer."""
        with T.no_grad():
            self(tokens, mask)
        return self.layer.attn.last_qk


def train_style_classifier(backbone: BackboneModel, train: list[Sentence], held_out: list[Sentence],
                           k: int, cfg: ScorerConfig, seed: int) -> ScorerModel:
    rng = np.random.default_rng(seed)
    model = ScorerModel(backbone, k, cfg, rng)
    opt = Adam(model.parameters(), lr=cfg.lr)
    before = backbone.checksum()
    for epoch in range(cfg.epochs):
        losses = []
        for batch in batch_by_tokens(train, cfg.token_budget, seed=int(rng.integers(2 ** 31))):
            logits = model(batch.tokens, batch.mask)
            loss = T.cross_entropy(logits, batch.styles)
            check_finite(loss.item(), "style classifier training", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        log.info("scorer epoch %d loss %.4f", epoch, float(np.mean(losses)))
    assert backbone.checksum() == before, "backbone changed during scorer training"
    if held_out:
        labels = np.array([s.style for s in held_out])
        model.heldout_accuracy = float((model.predict(held_out) == labels).mean())
    return model


# ---------------------------------------------------------------------------
# importance scores
# ---------------------------------------------------------------------------

def scores_from_qk(q_first: np.ndarray, keys: np.ndarray, gamma: float) -> np.ndarray:
    """Head-averaged softmax of ``q_first . k_w / gamma`` over the given tokens.

    ``q_first`` is [H, dh] (query of the first token per head); ``keys`` is
    [H, n, dh] for the n scored tokens.
    """
    q = np.asarray(q_first, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    logits = np.einsum("hd,hnd->hn", q, k) / gamma
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    return p.mean(axis=0)


def importance_scores(model: ScorerModel, sentence: Sentence | np.ndarray,
                      gamma: float | None = None) -> np.ndarray:
    """Pivot probability of each content token (BOS/EOS excluded); sums to 1."""
    tokens = sentence.tokens if isinstance(sentence, Sentence) else np.asarray(sentence)
    return importance_scores_batch(model, [tokens], gamma)[0]


def importance_scores_batch(model: ScorerModel, token_lists: list[np.ndarray],
                            gamma: float | None = None) -> list[np.ndarray]:
    gamma = model.gamma if gamma is None else gamma
    out: list[np.ndarray] = [None] * len(token_lists)
    order = np.arange(len(token_lists))
    for start in range(0, len(order), 256):
        idx = order[start:start + 256]
        seqs = [np.asarray(token_lists[i]) for i in idx]
        for s in seqs:
            if len(_content_positions(s)) == 0:
                raise ValueError("importance_scores: sentence has no content tokens")
        batch = make_batch([Sentence("", s) for s in seqs])
        q, k = model.query_keys(batch.tokens, batch.mask)
        for row, i in enumerate(idx):
            pos = _content_positions(seqs[row])
            out[i] = scores_from_qk(q[row, :, 0], k[row][:, pos], gamma)
    return out


def _content_positions(tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    return np.flatnonzero((tokens != BOS) & (tokens != EOS) & (tokens != PAD))


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------

@dataclass
class MaskPlan:
    draws: np.ndarray          # uniform p_i per content token
    masked: np.ndarray         # bool per content token
    sentence_selected: bool


def mask_sentence(tokens: np.ndarray, scores: np.ndarray, rng: np.random.Generator | int,
                  selected: bool = True) -> tuple[np.ndarray, MaskPlan]:
    """Replace content token i by MASK when ``selected`` and ``p_i < scores[i]``.

    ``p_i ~ U[0, 1)`` are the first ``n_content`` draws of ``rng`` (or of
    ``np.random.default_rng(rng)`` when an int seed is given); they are drawn
    whether or not the sentence is selected.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    tokens = np.asarray(tokens)
    pos = _content_positions(tokens)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != pos.shape:
        raise ValueError(f"{len(scores)} scores for {len(pos)} content tokens")
    draws = rng.random(len(pos))
    masked = (draws < scores) & bool(selected)
    out = tokens.copy()
    out[pos[masked]] = MASK
    return out, MaskPlan(draws, masked, bool(selected))
