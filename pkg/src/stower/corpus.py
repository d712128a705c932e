"""Vocabulary, tokenization, token-budget batching and corpora.

Corpora on disk are one UTF-8 file per style, ``<style>.txt``, one sentence
per line. The synthetic generator also writes ``manifest.jsonl`` with one
``{"text", "style", "markers"}`` record per sentence.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, MASK, UNK = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<s>", "</s>", "<mask>", "<unk>")
MAX_LEN = 64


class DataError(ValueError):
    """Input data that cannot be used (empty corpus, oversize sentence...)."""


class Vocab:
    """Token <-> id map with fixed reserved ids 0..4."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token: str):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def to_json(self) -> str:
        return json.dumps(self.itos[len(RESERVED):], ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos


def normalize(raw: str) -> list[str]:
    return raw.lower().split()


def build_vocab_from_texts(texts: Iterable[str], min_count: int = 1) -> Vocab:
    counts = Counter()
    for line in texts:
        counts.update(normalize(line))
    for reserved in RESERVED:
        counts.pop(reserved, None)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(kept)


def build_vocab(files: Sequence[str | os.PathLike], min_count: int = 1) -> Vocab:
    """Vocabulary over one-sentence-per-line files; frequency desc, then lexicographic."""
    texts = []
    for path in files:
        texts.extend(read_lines(path))
    return build_vocab_from_texts(texts, min_count)


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


@dataclass
class Sentence:
    raw: str
    tokens: np.ndarray
    style: int = 0
    truncated: bool = False

    @property
    def content(self) -> np.ndarray:
        return self.tokens[1:-1]

    def __len__(self):
        return len(self.tokens)


def tokenize(raw: str, vocab: Vocab, style: int = 0, max_len: int = MAX_LEN) -> Sentence:
    words = normalize(raw)
    if not words:
        raise ValueError("cannot tokenize an empty sentence")
    truncated = len(words) > max_len
    words = words[:max_len]
    ids = [BOS] + [vocab.id(w) for w in words] + [EOS]
    return Sentence(raw=raw, tokens=np.asarray(ids, dtype=np.int64), style=style, truncated=truncated)


def detokenize(tokens: Iterable[int], vocab: Vocab) -> str:
    words = []
    for t in tokens:
        t = int(t)
        if t == EOS:
            break
        if t in (PAD, BOS):
            continue
        words.append(vocab.token(t))
    return " ".join(words)


@dataclass
class Batch:
    tokens: np.ndarray        # [B, L] int64, PAD-padded
    mask: np.ndarray          # [B, L] 1 for real tokens
    styles: np.ndarray        # [B]
    indices: np.ndarray       # positions in the source sentence list
    token_budget: int = 8092

    @property
    def n_tokens(self) -> int:
        return int(self.mask.sum())

    def __len__(self):
        return len(self.tokens)


def pad_sentences(seqs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    length = max(len(s) for s in seqs)
    tokens = np.full((len(seqs), length), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        tokens[i, :len(s)] = s
    return tokens, (tokens != PAD).astype(np.float32)


def make_batch(sentences: Sequence[Sentence], indices=None, token_budget: int = 8092) -> Batch:
    tokens, mask = pad_sentences([s.tokens for s in sentences])
    idx = np.arange(len(sentences)) if indices is None else np.asarray(indices)
    return Batch(tokens, mask, np.array([s.style for s in sentences], dtype=np.int64), idx, token_budget)


def batch_by_tokens(sentences: Sequence[Sentence], token_budget: int = 8092, seed: int | None = 0,
                    max_sentences: int | None = None) -> list[Batch]:
    """Shuffle (when ``seed`` is not None) and pack greedily under a non-pad token budget."""
    order = np.arange(len(sentences))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(sentences))
    batches, current, used = [], [], 0
    for i in order:
        n = len(sentences[i])
        if n > token_budget:
            raise DataError(f"sentence {i} has {n} tokens, more than the budget {token_budget}")
        full = max_sentences is not None and len(current) >= max_sentences
        if current and (used + n > token_budget or full):
            batches.append(make_batch([sentences[j] for j in current], current, token_budget))
            current, used = [], 0
        current.append(int(i))
        used += n
    if current:
        batches.append(make_batch([sentences[j] for j in current], current, token_budget))
    return batches


@dataclass
class StyleCorpus:
    """Sentences grouped by style; ``texts[i]`` holds the lines of style ``i``."""

    texts: list[list[str]]
    names: list[str] = field(default_factory=list)
    markers: list[list[list[str]]] | None = None

    def __post_init__(self):
        if len(self.texts) < 2:
            raise ValueError("a style corpus needs at least two styles")
        if not self.names:
            self.names = [str(i) for i in range(len(self.texts))]

    @property
    def k(self) -> int:
        return len(self.texts)

    def __len__(self):
        return sum(len(t) for t in self.texts)

    def pairs(self) -> list[tuple[str, int]]:
        return [(line, s) for s, lines in enumerate(self.texts) for line in lines]

    def all_texts(self) -> list[str]:
        return [line for lines in self.texts for line in lines]

    def style_id(self, name_or_id) -> int:
        if isinstance(name_or_id, (int, np.integer)):
            idx = int(name_or_id)
        elif str(name_or_id) in self.names:
            idx = self.names.index(str(name_or_id))
        elif str(name_or_id).isdigit():
            idx = int(name_or_id)
        else:
            raise ValueError(f"unknown style {name_or_id!r}; known: {self.names}")
        if not 0 <= idx < self.k:
            raise ValueError(f"style id {idx} outside [0, {self.k})")
        return idx

    def sentences(self, vocab: Vocab, max_len: int = MAX_LEN) -> list[Sentence]:
        return [tokenize(line, vocab, s, max_len) for line, s in self.pairs()]

    def split(self, held_out: float, seed: int) -> tuple["StyleCorpus", "StyleCorpus"]:
        """Per-style random split into (train, held-out)."""
        rng = np.random.default_rng(seed)
        train, test, mtrain, mtest = [], [], [], []
        for s, lines in enumerate(self.texts):
            perm = rng.permutation(len(lines))
            n_test = int(round(held_out * len(lines)))
            te, tr = perm[:n_test], perm[n_test:]
            train.append([lines[i] for i in tr])
            test.append([lines[i] for i in te])
            if self.markers is not None:
                mtrain.append([self.markers[s][i] for i in tr])
                mtest.append([self.markers[s][i] for i in te])
        markers = self.markers is not None
        return (StyleCorpus(train, list(self.names), mtrain if markers else None),
                StyleCorpus(test, list(self.names), mtest if markers else None))

    def save(self, directory, manifest: bool = True):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, lines in zip(self.names, self.texts):
            _atomic_write(directory / f"{name}.txt", "".join(line + "\n" for line in lines))
        if manifest:
            records = []
            for s, lines in enumerate(self.texts):
                for i, line in enumerate(lines):
                    markers = self.markers[s][i] if self.markers is not None else []
                    records.append(json.dumps({"text": line, "style": self.names[s], "markers": markers}))
            _atomic_write(directory / "manifest.jsonl", "".join(r + "\n" for r in records))

    @classmethod
    def load(cls, directory, names: Sequence[str] | None = None) -> "StyleCorpus":
        directory = Path(directory)
        if names is None:
            names = sorted(p.stem for p in directory.glob("*.txt"))
        texts = [read_lines(directory / f"{n}.txt") for n in names]
        if not any(texts):
            raise DataError(f"no sentences found under {directory}")
        markers = None
        manifest = directory / "manifest.jsonl"
        if manifest.exists():
            by_text = {}
            with open(manifest, encoding="utf-8") as fh:
                for line in fh:
                    rec = json.loads(line)
                    by_text[(rec["style"], rec["text"])] = rec["markers"]
            markers = [[by_text.get((n, line), []) for line in lines] for n, lines in zip(names, texts)]
        return cls(texts, list(names), markers)


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# synthetic two-style corpus
# ---------------------------------------------------------------------------

DEFAULT_MARKERS = (
    ("bad", "awful", "bland", "terrible", "rude", "horrible", "poor", "stale"),
    ("good", "great", "tasty", "amazing", "friendly", "excellent", "lovely", "fresh"),
)
DEFAULT_ANCHORS = (
    "food", "service", "staff", "pizza", "coffee", "pasta", "menu", "price", "music", "decor",
    "salad", "burger", "waiter", "dessert", "wine", "soup", "bread", "steak", "sushi", "tea",
)
DEFAULT_TEMPLATES = (
    "the {a} was {m}",
    "the {a} here is {m}",
    "i thought the {a} was {m}",
    "we had the {a} and it was {m}",
    "their {a} and {a} are {m}",
    "my {a} was {m} today",
    "{m} {a} and {m} {a}",
)


def gen_synthetic_corpus(seed: int, n_per_style: int,
                         marker_lexicons: Sequence[Sequence[str]] = DEFAULT_MARKERS,
                         anchor_lexicon: Sequence[str] = DEFAULT_ANCHORS,
                         templates: Sequence[str] = DEFAULT_TEMPLATES,
                         names: Sequence[str] = ("neg", "pos")) -> StyleCorpus:
    """Template sentences whose style is carried only by marker words.

    ``{a}`` slots draw from ``anchor_lexicon`` and ``{m}`` slots from the
    sentence's own marker lexicon; the template's literal words count as
    anchors.
    """
    template_words = {w for t in templates for w in t.split() if not w.startswith("{")}
    anchors = set(anchor_lexicon) | template_words
    seen: dict[str, int] = {}
    for s, lex in enumerate(marker_lexicons):
        if not lex:
            raise ValueError(f"marker lexicon {s} is empty")
        for w in lex:
            if w in anchors:
                raise ValueError(f"marker {w!r} also appears among anchor words")
            if w in seen and seen[w] != s:
                raise ValueError(f"marker {w!r} shared by styles {seen[w]} and {s}")
            seen[w] = s
    if not all("{m}" in t for t in templates):
        raise ValueError("every template needs at least one {m} slot")
    if len(names) != len(marker_lexicons):
        names = [str(i) for i in range(len(marker_lexicons))]

    rng = np.random.default_rng(seed)
    texts, markers = [], []
    for lex in marker_lexicons:
        lines, used = [], []
        for _ in range(n_per_style):
            template = templates[rng.integers(len(templates))]
            words, picked = [], []
            for slot in template.split():
                if slot == "{a}":
                    words.append(anchor_lexicon[rng.integers(len(anchor_lexicon))])
                elif slot == "{m}":
                    w = lex[rng.integers(len(lex))]
                    words.append(w)
                    picked.append(w)
                else:
                    words.append(slot)
            lines.append(" ".join(words))
            used.append(picked)
        texts.append(lines)
        markers.append(used)
    return StyleCorpus(texts, list(names), markers)


def marker_sets(marker_lexicons: Sequence[Sequence[str]] = DEFAULT_MARKERS) -> list[set[str]]:
    return [set(lex) for lex in marker_lexicons]
