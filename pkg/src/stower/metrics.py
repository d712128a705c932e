"""Transfer evaluation: classifier accuracy, char-LM perplexity, BLEU, geometric mean."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import StyleCorpus
from .nn import Embedding, Linear, Module
from .optim import Adam, check_finite

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# style classifier: hashed unigrams + bigrams -> linear -> softmax
# ---------------------------------------------------------------------------

class EvalClassifier:
    """Linear softmax classifier over signed-hashed word uni- and bigrams."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, hash_dim: int):
        self.weight = np.asarray(weight, dtype=np.float32)   # [k, hash_dim]
        self.bias = np.asarray(bias, dtype=np.float32)       # [k]
        self.hash_dim = hash_dim
        self.heldout_accuracy = float("nan")

    @property
    def k(self) -> int:
        return self.weight.shape[0]

    def _features(self, texts: Sequence[str]):
        return _vectorizer(self.hash_dim).transform(list(texts))

    def logits(self, texts: Sequence[str]) -> np.ndarray:
        x = self._features(texts)
        return np.asarray(x @ self.weight.T.astype(np.float64)) + self.bias

    def predict(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            return np.zeros(0, dtype=np.int64)
        return self.logits(texts).argmax(axis=1)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    @classmethod
    def from_state(cls, state: dict, hash_dim: int) -> "EvalClassifier":
        return cls(state["weight"], state["bias"], hash_dim)


def _vectorizer(hash_dim: int):
    from sklearn.feature_extraction.text import HashingVectorizer
    return HashingVectorizer(n_features=hash_dim, ngram_range=(1, 2), alternate_sign=True,
                             token_pattern=r"\S+", lowercase=True, norm="l2")


def train_eval_classifier(corpus: StyleCorpus, seed: int, hash_dim: int = 2 ** 18,
                          held_out: StyleCorpus | None = None) -> EvalClassifier:
    from sklearn.linear_model import LogisticRegression

    texts = [t for t, _ in corpus.pairs()]
    labels = np.array([s for _, s in corpus.pairs()])
    if len(np.unique(labels)) < 2:
        raise ValueError("the evaluation classifier needs sentences from at least two styles")
    x = _vectorizer(hash_dim).transform(texts)
    clf = LogisticRegression(C=10.0, max_iter=1000, random_state=seed)
    clf.fit(x, labels)
    weight = np.zeros((corpus.k, hash_dim), dtype=np.float32)
    bias = np.zeros(corpus.k, dtype=np.float32)
    if len(clf.classes_) == 2:
        weight[clf.classes_[1]] = clf.coef_[0]
        bias[clf.classes_[1]] = clf.intercept_[0]
    else:
        weight[clf.classes_] = clf.coef_
        bias[clf.classes_] = clf.intercept_
    model = EvalClassifier(weight, bias, hash_dim)
    if held_out is not None and len(held_out):
        ht = [t for t, _ in held_out.pairs()]
        hl = np.array([s for _, s in held_out.pairs()])
        model.heldout_accuracy = float((model.predict(ht) == hl).mean())
    return model


def transfer_accuracy(classifier: EvalClassifier, sentences: Sequence[str], target) -> float:
    """Percentage of ``sentences`` classified as ``target`` (scalar or per-sentence)."""
    if len(sentences) == 0:
        raise ValueError("transfer_accuracy needs at least one sentence")
    preds = classifier.predict(sentences)
    return 100.0 * float(np.mean(preds == np.asarray(target)))


# ---------------------------------------------------------------------------
# character-level LSTM language model
# ---------------------------------------------------------------------------

CHAR_SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")


class CharLm(Module):
    """Single-layer LSTM over characters; predicts each character and an end symbol."""

    def __init__(self, chars: Sequence[str], rng: np.random.Generator, embed: int = 32,
                 hidden: int = 128):
        self._chars = list(chars)
        self._index = {c: i + len(CHAR_SPECIALS) for i, c in enumerate(self._chars)}
        n = self.vocab_size
        self.hidden = hidden
        self.emb = Embedding(n, embed, rng)
        self.wx = Linear(embed, 4 * hidden, rng)
        self.wh = Linear(hidden, 4 * hidden, rng, bias=False)
        self.out = Linear(hidden, n, rng)
        forget = self.wx.bias.data
        forget[hidden:2 * hidden] = 1.0

    @property
    def chars(self) -> list[str]:
        return list(self._chars)

    @property
    def vocab_size(self) -> int:
        return len(CHAR_SPECIALS) + len(self._chars)

    def encode(self, text: str) -> np.ndarray:
        return np.array([1] + [self._index.get(c, 3) for c in text] + [2], dtype=np.int64)

    def logits(self, ids: np.ndarray) -> T.Tensor:
        """[B, L, V] next-character logits for inputs ``ids`` [B, L]."""
        B, L = ids.shape
        H = self.hidden
        xs = self.wx(self.emb(ids))                     # [B, L, 4H]
        h = T.Tensor(np.zeros((B, H), dtype=xs.dtype))
        c = T.Tensor(np.zeros((B, H), dtype=xs.dtype))
        outs = []
        for t in range(L):
            gates = xs[:, t] + self.wh(h)
            i = T.sigmoid(gates[:, :H])
            f = T.sigmoid(gates[:, H:2 * H])
            g = T.tanh(gates[:, 2 * H:3 * H])
            o = T.sigmoid(gates[:, 3 * H:])
            c = f * c + i * g
            h = o * T.tanh(c)
            outs.append(h)
        return self.out(T.stack(outs, axis=1))

    def batch(self, texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        seqs = [self.encode(t) for t in texts]
        L = max(len(s) for s in seqs) - 1
        inp = np.zeros((len(seqs), L), dtype=np.int64)
        tgt = np.zeros((len(seqs), L), dtype=np.int64)
        for r, s in enumerate(seqs):
            inp[r, :len(s) - 1] = s[:-1]
            tgt[r, :len(s) - 1] = s[1:]
        return inp, tgt, (tgt != 0).astype(np.float32)


def train_char_lm(texts: Sequence[str], seed: int, hidden: int = 128, embed: int = 32,
                  epochs: int = 4, lr: float = 0.003, batch_size: int = 64) -> CharLm:
    texts = [t for t in texts if t]
    if not texts:
        raise ValueError("train_char_lm needs non-empty text")
    rng = np.random.default_rng(seed)
    chars = sorted({c for t in texts for c in t})
    lm = CharLm(chars, rng, embed, hidden)
    opt = Adam(lm.parameters(), lr=lr)
    order = np.argsort([len(t) for t in texts], kind="stable")
    for epoch in range(epochs):
        chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        losses = []
        for j in rng.permutation(len(chunks)):
            inp, tgt, w = lm.batch([texts[i] for i in chunks[j]])
            loss = T.cross_entropy(lm.logits(inp), tgt, w)
            check_finite(loss.item(), "char LM training", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        log.info("char lm epoch %d loss %.4f", epoch, float(np.mean(losses)))
    lm.freeze()
    return lm


def perplexity(lm: CharLm, sentences: Sequence[str], batch_size: int = 128) -> float:
    """exp(total NLL / number of predicted characters, end symbol included)."""
    sentences = list(sentences)
    if not sentences:
        raise ValueError("perplexity needs at least one sentence")
    nll, count = 0.0, 0.0
    with T.no_grad():
        for i in range(0, len(sentences), batch_size):
            inp, tgt, w = lm.batch(sentences[i:i + batch_size])
            logits = lm.logits(inp).data.astype(np.float64)
            logp = logits - logits.max(-1, keepdims=True)
            logp -= np.log(np.exp(logp).sum(-1, keepdims=True))
            picked = np.take_along_axis(logp, tgt[..., None], -1)[..., 0]
            nll -= float((picked * w).sum())
            count += float(w.sum())
    return float(np.exp(nll / count))


# ---------------------------------------------------------------------------
# BLEU (multi-bleu.perl conventions) and the geometric mean
# ---------------------------------------------------------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]],
                max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100] over pre-tokenised input.

    Clipping takes the max count of each n-gram across a hypothesis'
    references; the brevity penalty uses the closest reference length
    (shorter wins ties). No smoothing: any zero n-gram precision gives 0.
    """
    if len(hypotheses) == 0:
        raise ValueError("BLEU needs at least one hypothesis")
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and reference sets differ in count")
    matches = np.zeros(max_n)
    totals = np.zeros(max_n)
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            if not h:
                continue
            best = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in h.items())
            totals[n - 1] += sum(h.values())
    if hyp_len == 0 or np.any(matches == 0):
        return 0.0
    log_precision = np.mean(np.log(matches / totals))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return float(100.0 * bp * math.exp(log_precision))


def bleu_score(hypotheses: Sequence[str], references, mode: str = "multi") -> float:
    """Tokenised (whitespace) corpus BLEU.

    ``references`` holds one string or a list of strings per hypothesis.
    ``mode="multi"`` clips against all references at once; ``mode="mean"``
    averages single-reference scores over the reference index.
    """
    refs = [[r] if isinstance(r, str) else list(r) for r in references]
    hyps = [h.split() for h in hypotheses]
    if mode == "multi":
        return corpus_bleu(hyps, [[r.split() for r in rs] for rs in refs])
    if mode == "mean":
        n_refs = {len(rs) for rs in refs}
        if len(n_refs) != 1:
            raise ValueError("mean-over-references BLEU needs the same number of references per hypothesis")
        return float(np.mean([corpus_bleu(hyps, [[rs[j].split()] for rs in refs])
                              for j in range(n_refs.pop())]))
    raise ValueError(f"unknown BLEU mode {mode!r}")


def geometric_mean(acc: float, bleu: float, ppl: float) -> float:
    """Cube root of acc * bleu / ln(ppl); acc and bleu on the 0-100 scale."""
    if ppl <= 1.0:
        raise ValueError(f"perplexity must exceed 1, got {ppl}")
    if acc < 0 or bleu < 0:
        raise ValueError("accuracy and BLEU must be non-negative")
    return float((acc * bleu / math.log(ppl)) ** (1.0 / 3.0))


@dataclass
class EvalReport:
    acc: float
    ppl: float
    bleu: float
    gm: float
    n: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def table(self) -> str:
        return (f"{'Acc':>8} {'PPL':>8} {'BLEU':>8} {'GM':>8} {'n':>6}\n"
                f"{self.acc:8.2f} {self.ppl:8.2f} {self.bleu:8.2f} {self.gm:8.2f} {self.n:6d}")


def evaluate_outputs(outputs: Sequence[str], targets, references, classifier: EvalClassifier,
                     lm: CharLm) -> EvalReport:
    acc = transfer_accuracy(classifier, outputs, targets)
    ppl = perplexity(lm, outputs)
    bleu = bleu_score(outputs, references)
    gm = geometric_mean(acc, bleu, ppl) if ppl > 1 else float("nan")
    return EvalReport(acc=acc, ppl=ppl, bleu=bleu, gm=gm, n=len(outputs))
