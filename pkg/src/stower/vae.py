"""Transformer VAE with an external style-embedding table.

Encoder: backbone features -> linear projection -> transformer blocks.
Posterior: two one-block transformer heads read out at the first token give
``mu`` and ``log_var`` (log of the diagonal variance). Decoder: causal
transformer whose every input embedding is shifted by one conditioning
vector (latent plus a stop-gradient style hint).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import VaeConfig
from .corpus import BOS, EOS, PAD
from .nn import Embedding, LayerNorm, Linear, Module, TransformerBlock, attention_bias
from .tensor import Tensor


class StyleEmbeddingTable(Module):
    """Rows s_1..s_k, produced by a bias-free linear map of one-hot style ids."""

    def __init__(self, k: int, d: int, rng: np.random.Generator, std: float = 1.0):
        if k < 2:
            raise ValueError("need at least two styles")
        self.weight = T.parameter(rng.normal(0.0, std, size=(k, d)))

    @property
    def k(self) -> int:
        return self.weight.shape[0]

    def __call__(self, styles) -> Tensor:
        onehot = np.eye(self.k, dtype=self.weight.dtype)[np.asarray(styles)]
        return T.matmul(onehot, self.weight)

    def rows(self) -> np.ndarray:
        return self.weight.data


@dataclass
class LatentDistribution:
    mu: Tensor
    log_var: Tensor


class StyleVAE(Module):
    def __init__(self, vocab_size: int, d_in: int, cfg: VaeConfig, rng: np.random.Generator,
                 max_len: int = 66):
        d = cfg.d_latent
        self.vocab_size = vocab_size
        self.d = d
        self.max_len = max_len
        self.in_proj = Linear(d_in, d, rng)
        self.encoder = [TransformerBlock(d, cfg.heads, cfg.ffn_dim, rng) for _ in range(cfg.layers)]
        self.mu_block = TransformerBlock(d, cfg.heads, cfg.ffn_dim, rng)
        self.mu_out = Linear(d, d, rng)
        self.var_block = TransformerBlock(d, cfg.heads, cfg.ffn_dim, rng)
        self.var_out = Linear(d, d, rng, std=0.01 / np.sqrt(d))
        self.enc_ln = LayerNorm(d)
        self.dec_tok = Embedding(vocab_size, d, rng)
        self.dec_pos = Embedding(max_len, d, rng, std=0.02)
        self.decoder = [TransformerBlock(d, cfg.heads, cfg.ffn_dim, rng) for _ in range(cfg.layers)]
        self.dec_ln = LayerNorm(d)
        self.out = Linear(d, vocab_size, rng)

    # -- encoder ----------------------------------------------------------
    def encode(self, features: Tensor, mask: np.ndarray) -> LatentDistribution:
        mask = np.asarray(mask)
        if (mask.sum(axis=1) == 0).any():
            raise ValueError("encode_latent got a row made only of padding")
        bias = attention_bias(mask, features.shape[1])
        h = self.in_proj(features)
        for blk in self.encoder:
            h = blk(h, bias)
        h = self.enc_ln(h)
        mu = self.mu_out(self.mu_block(h, bias)[:, 0])
        log_var = self.var_out(self.var_block(h, bias)[:, 0])
        return LatentDistribution(mu, log_var)

    # -- decoder ----------------------------------------------------------
    def decoder_logits(self, dec_in: np.ndarray, conditioning: Tensor) -> Tensor:
        dec_in = np.asarray(dec_in)
        B, L = dec_in.shape
        if L > self.max_len:
            raise ValueError(f"decoder length {L} exceeds max_len {self.max_len}")
        cond = T.as_tensor(conditioning)
        if cond.shape != (B, self.d):
            raise ValueError(f"conditioning must be [{B}, {self.d}], got {cond.shape}")
        h = self.dec_tok(dec_in) + self.dec_pos(np.arange(L)) + T.reshape(cond, (B, 1, self.d))
        bias = attention_bias(dec_in != PAD, L, causal=True)
        for blk in self.decoder:
            h = blk(h, bias)
        return self.out(self.dec_ln(h))


def encode_latent(model: StyleVAE, features: Tensor, mask) -> LatentDistribution:
    return model.encode(T.as_tensor(features), mask)


def sample_latent(dist: LatentDistribution, noise) -> Tensor:
    """Reparameterised draw ``mu + exp(log_var / 2) * noise``."""
    noise = np.asarray(noise, dtype=dist.mu.dtype)
    return dist.mu + T.exp(dist.log_var * 0.5) * noise


def kl_term(dist: LatentDistribution) -> Tensor:
    """KL(N(mu, diag exp(log_var)) || N(0, I)), summed over dims, averaged over rows."""
    mu, lv = dist.mu, dist.log_var
    per_dim = mu * mu + T.exp(lv) - 1.0 - lv
    total = T.sum_(per_dim, axis=-1) * 0.5
    return T.mean(total) if total.ndim else total


def style_loss(table: StyleEmbeddingTable, z, true_style, full_bce: bool = False) -> Tensor:
    """Cosine style loss, averaged over the batch.

    ``z`` is treated as a constant: gradient reaches only the table. With
    ``full_bce`` the non-target styles add ``log(1 - sigmoid(cos))`` terms.
    """
    z = T.stop_gradient(z)
    zd = z.data.reshape(-1, z.shape[-1])
    styles = np.atleast_1d(np.asarray(true_style))
    if np.any(np.linalg.norm(zd, axis=-1) == 0):
        raise ValueError("style_loss: zero-norm latent vector")
    if np.any(np.linalg.norm(table.rows(), axis=-1) == 0):
        raise ValueError("style_loss: zero-norm style embedding")
    z2 = T.reshape(z, (-1, 1, z.shape[-1]))                      # [B, 1, d]
    s = T.reshape(table.weight, (1, table.k, table.weight.shape[-1]))  # [1, k, d]
    cos = T.cosine_similarity(z2, s, axis=-1)                   # [B, k]
    onehot = np.eye(table.k, dtype=cos.dtype)[styles]
    terms = T.log_sigmoid(cos) * onehot
    if full_bce:
        terms = terms + T.log_sigmoid(-cos) * (1.0 - onehot)
    return -T.mean(T.sum_(terms, axis=-1))


def reconstruction_nll(model: StyleVAE, tokens: np.ndarray, conditioning: Tensor) -> Tensor:
    """Token-mean teacher-forced NLL of ``tokens`` (BOS ... EOS, PAD-padded)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] < 2:
        raise ValueError("reconstruction_nll expects [B, L>=2] token ids")
    dec_in, targets = tokens[:, :-1], tokens[:, 1:]
    logits = model.decoder_logits(dec_in, conditioning)
    return T.cross_entropy(logits, targets, targets != PAD)


def stage1_total_loss(nll, kl, style, lambda_vae: float = 1.0, lambda_style: float = 1.0,
                      beta: float = 1.0):
    """lambda_vae * (nll + beta * kl) + lambda_style * style."""
    return lambda_vae * (nll + beta * kl) + lambda_style * style


@dataclass
class LossBreakdown:
    total: Tensor
    nll: float
    kl: float
    style: float

    def as_dict(self) -> dict:
        return {"nll": self.nll, "kl": self.kl, "style": self.style, "total": self.total.item()}


def vae_objective(model: StyleVAE, table: StyleEmbeddingTable, features: Tensor, enc_mask,
                  tokens: np.ndarray, styles, noise, beta: float, lambda_vae: float = 1.0,
                  lambda_style: float = 1.0, full_bce: bool = False,
                  with_style_loss: bool = True) -> LossBreakdown:
    """Reconstruction + KL (+ style) loss on one batch.

    The encoder sees ``features`` (possibly of a masked sentence); the decoder
    reconstructs ``tokens``. The style hint added to the latent is a
    stop-gradient copy of the sentence's own table row.
    """
    dist = model.encode(T.as_tensor(features), enc_mask)
    z = sample_latent(dist, noise)
    hint = T.stop_gradient(table(styles))
    nll = reconstruction_nll(model, tokens, z + hint)
    kl = kl_term(dist)
    if with_style_loss:
        sl = style_loss(table, z, styles, full_bce)
        total = stage1_total_loss(nll, kl, sl, lambda_vae, lambda_style, beta)
        style_value = sl.item()
    else:
        total = lambda_vae * (nll + beta * kl)
        style_value = 0.0
    return LossBreakdown(total, nll.item(), kl.item(), style_value)


def decode_greedy(model: StyleVAE, conditioning, max_len: int = 64) -> list[np.ndarray]:
    """Argmax decoding from BOS for each conditioning row.

    Returns the generated ids (BOS excluded), ending with EOS unless
    ``max_len`` tokens were produced first.
    """
    cond = np.atleast_2d(np.asarray(T.as_tensor(conditioning).data))
    B = cond.shape[0]
    max_len = min(max_len, model.max_len - 1)
    seqs = np.full((B, 1), BOS, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    with T.no_grad():
        for _ in range(max_len):
            logits = model.decoder_logits(seqs, cond).data[:, -1]
            nxt = logits.argmax(axis=-1)
            nxt = np.where(done, PAD, nxt)
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
            done |= nxt == EOS
            if done.all():
                break
    out = []
    for row in seqs[:, 1:]:
        ends = np.flatnonzero(row == EOS)
        out.append(row[:ends[0] + 1] if len(ends) else row[row != PAD])
    return out
