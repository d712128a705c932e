"""Inference: latent adjustment with a style weight, sentence transfer, weight sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .backbone import BackboneModel, encode_features
from .corpus import MAX_LEN, StyleCorpus, Vocab, detokenize, make_batch, tokenize
from .metrics import CharLm, EvalClassifier, bleu_score, geometric_mean, perplexity, transfer_accuracy
from .vae import StyleEmbeddingTable, StyleVAE, decode_greedy, sample_latent


@dataclass
class TransferRequest:
    source: str
    source_style: int
    target_style: int
    weight: float
    max_len: int = MAX_LEN

    def validate(self, k: int):
        for s in (self.source_style, self.target_style):
            if not 0 <= s < k:
                raise ValueError(f"style id {s} outside [0, {k})")
        if self.source_style == self.target_style:
            raise ValueError("source and target style must differ")
        if self.weight < 0:
            raise ValueError("style weight must be non-negative")


@dataclass
class StowerModels:
    vocab: Vocab
    backbone: BackboneModel
    vae: StyleVAE
    table: StyleEmbeddingTable
    max_len: int = MAX_LEN


def adjust_latent(z, target_row, source_row, weight: float) -> np.ndarray:
    """``z + weight * (target_row - source_row)``, no renormalisation."""
    z = np.asarray(z)
    return z + weight * (np.asarray(target_row) - np.asarray(source_row))


def transfer_texts(models: StowerModels, texts: Sequence[str], source_style, target_style,
                   weight: float, sample: bool = False, rng: np.random.Generator | None = None,
                   batch_size: int = 256) -> list[str]:
    """Rewrite ``texts`` from ``source_style`` towards ``target_style``.

    The latent is the posterior mean (a reparameterised sample with
    ``sample=True``). After the shift, the decoder is conditioned on the
    shifted latent plus the source-style row, i.e. exactly the training-time
    input ``z + s_source`` when ``weight == 0``.
    """
    k = models.table.k
    src = np.broadcast_to(np.asarray(source_style), (len(texts),)).astype(np.int64)
    tgt = np.broadcast_to(np.asarray(target_style), (len(texts),)).astype(np.int64)
    for o, t in zip(src, tgt):
        TransferRequest("", int(o), int(t), weight).validate(k)
    rows = models.table.rows()
    outputs: list[str] = []
    for start in range(0, len(texts), batch_size):
        chunk = texts[start:start + batch_size]
        sents = [tokenize(t, models.vocab, max_len=models.max_len) for t in chunk]
        batch = make_batch(sents)
        o, t = src[start:start + batch_size], tgt[start:start + batch_size]
        with T.no_grad():
            dist = models.vae.encode(encode_features(models.backbone, batch), batch.mask)
            if sample:
                rng = rng if rng is not None else np.random.default_rng(0)
                z = sample_latent(dist, rng.standard_normal(dist.mu.shape)).data
            else:
                z = dist.mu.data
        cond = adjust_latent(z, rows[t], rows[o], weight) + rows[o]
        for ids in decode_greedy(models.vae, cond, models.max_len + 1):
            outputs.append(detokenize(ids, models.vocab))
    return outputs


def transfer_sentence(models: StowerModels, request: TransferRequest, sample: bool = False) -> str:
    request.validate(models.table.k)
    return transfer_texts(models, [request.source], request.source_style, request.target_style,
                          request.weight, sample)[0]


def default_targets(sources: np.ndarray, k: int) -> np.ndarray:
    return (np.asarray(sources) + 1) % k


def anchor_overlap(sources: Sequence[str], outputs: Sequence[str], markers: Sequence[set[str]]) -> float:
    """Share of non-marker source tokens that survive in the output (clipped counts)."""
    all_markers = set().union(*markers)
    kept = total = 0
    for s, o in zip(sources, outputs):
        anchors = [w for w in s.split() if w not in all_markers]
        out_counts: dict[str, int] = {}
        for w in o.split():
            out_counts[w] = out_counts.get(w, 0) + 1
        for w in anchors:
            total += 1
            if out_counts.get(w, 0) > 0:
                out_counts[w] -= 1
                kept += 1
    return kept / total if total else float("nan")


def marker_success(outputs: Sequence[str], sources: np.ndarray, targets: np.ndarray,
                   markers: Sequence[set[str]]) -> float:
    """Share of outputs holding a target-style marker and no source-style marker."""
    ok = 0
    for o, s, t in zip(outputs, sources, targets):
        words = set(o.split())
        ok += bool(words & markers[t]) and not (words & markers[s])
    return ok / len(outputs)


def sweep_style_weight(models: StowerModels, test: StyleCorpus, weights: Sequence[float],
                       classifier: EvalClassifier, lm: CharLm,
                       markers: Sequence[set[str]] | None = None) -> list[dict]:
    """Transfer the test set at each weight; BLEU is measured against the sources."""
    weights = list(weights)
    if not weights:
        raise ValueError("sweep needs at least one style weight")
    pairs = test.pairs()
    texts = [p[0] for p in pairs]
    src = np.array([p[1] for p in pairs])
    tgt = default_targets(src, models.table.k)
    rows = []
    for w in weights:
        outs = transfer_texts(models, texts, src, tgt, w)
        acc = transfer_accuracy(classifier, outs, tgt)
        ppl = perplexity(lm, outs)
        bleu = bleu_score(outs, texts)
        row = {"w": float(w), "acc": acc, "ppl": ppl, "bleu": bleu,
               "gm": geometric_mean(acc, bleu, ppl) if ppl > 1 else float("nan")}
        if markers is not None:
            row["anchor_overlap"] = anchor_overlap(texts, outs, markers)
            row["marker_success"] = marker_success(outs, src, tgt, markers)
        row["outputs"] = outs
        rows.append(row)
    return rows


SWEEP_FIELDS = ("w", "acc", "ppl", "bleu", "gm")


def sweep_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_FIELDS)
    for r in rows:
        writer.writerow([f"{r[f]:.6g}" for f in SWEEP_FIELDS])
    return buf.getvalue()
