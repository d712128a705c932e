import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stower.corpus import (BOS, EOS, MASK, PAD, UNK, DataError, Sentence, StyleCorpus, Vocab,
                           batch_by_tokens, build_vocab, build_vocab_from_texts, detokenize,
                           gen_synthetic_corpus, marker_sets, tokenize)


def write_styles(tmp_path, **styles):
    for name, lines in styles.items():
        (tmp_path / f"{name}.txt").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return [tmp_path / f"{name}.txt" for name in styles]


class TestVocab:
    def test_reserved_ids(self):
        v = Vocab()
        assert (v.id("<pad>"), v.id("<s>"), v.id("</s>"), v.id("<mask>"), v.id("<unk>")) == \
            (PAD, BOS, EOS, MASK, UNK) == (0, 1, 2, 3, 4)

    def test_frequency_then_lexicographic(self, tmp_path):
        v = build_vocab(write_styles(tmp_path, s0=["a b", "a"]))
        assert v.id("a") == 5 and v.id("b") == 6
        v = build_vocab_from_texts(["z y", "y x", "x"])
        assert v.itos[5:] == ["x", "y", "z"]

    def test_min_count(self, tmp_path):
        v = build_vocab(write_styles(tmp_path, s0=["a b", "a"]), min_count=2)
        assert v.id("b") == UNK

    def test_deterministic_bytes(self, tmp_path):
        files = write_styles(tmp_path, neg=["the food was bad"], pos=["the food was good", "good"])
        assert build_vocab(files).to_json() == build_vocab(files).to_json()

    def test_empty_corpus(self, tmp_path):
        with pytest.raises(DataError):
            build_vocab(write_styles(tmp_path, s0=["", "  "]))

    def test_json_round_trip(self):
        v = build_vocab_from_texts(["good food", "bad food"])
        assert Vocab.from_json(v.to_json()) == v


class TestTokenize:
    vocab = build_vocab_from_texts(["good food", "bad service"])

    def test_direct_lookup(self):
        s = tokenize("good food", self.vocab)
        assert list(s.tokens) == [BOS, self.vocab.id("good"), self.vocab.id("food"), EOS]

    def test_unknown_word(self):
        assert tokenize("good pizza", self.vocab).tokens[2] == UNK

    def test_truncation_flag(self):
        s = tokenize(" ".join(["good"] * 70), self.vocab)
        assert s.truncated and len(s.tokens) == 64 + 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            tokenize("   ", self.vocab)

    def test_round_trip_on_synthetic_lines(self):
        corpus = gen_synthetic_corpus(3, 500)
        vocab = build_vocab_from_texts(corpus.all_texts())
        lines = corpus.all_texts()
        assert len(lines) == 1000
        for line in lines:
            assert detokenize(tokenize(line, vocab).tokens, vocab) == " ".join(line.split())


def _sentences(lengths):
    return [Sentence("", np.array([BOS] + [5] * (n - 2) + [EOS])) for n in lengths]


class TestBatching:
    def test_packing_arithmetic(self):
        batches = batch_by_tokens(_sentences([10, 10, 10]), token_budget=20, seed=0)
        assert sorted(len(b) for b in batches) == [1, 2]

    def test_oversize_sentence(self):
        with pytest.raises(DataError):
            batch_by_tokens(_sentences([30]), token_budget=20)

    def test_seeded_order(self):
        sents = _sentences(np.random.default_rng(0).integers(3, 66, size=200))
        a = [b.indices.tolist() for b in batch_by_tokens(sents, 300, seed=4)]
        b = [b.indices.tolist() for b in batch_by_tokens(sents, 300, seed=4)]
        c = [b.indices.tolist() for b in batch_by_tokens(sents, 300, seed=5)]
        assert a == b and a != c

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(3, 66), min_size=1, max_size=80), st.integers(66, 9000),
           st.integers(0, 1000))
    def test_partition_and_budget(self, lengths, budget, seed):
        batches = batch_by_tokens(_sentences(lengths), budget, seed)
        seen = sorted(i for b in batches for i in b.indices.tolist())
        assert seen == list(range(len(lengths)))
        for b in batches:
            assert b.n_tokens <= budget
            assert b.tokens.shape[1] == max(lengths[i] for i in b.indices)

    def test_default_budget(self):
        sents = _sentences(np.random.default_rng(1).integers(3, 66, size=600))
        assert all(b.n_tokens <= 8092 for b in batch_by_tokens(sents))


class TestSyntheticCorpus:
    def test_markers_by_construction(self):
        corpus = gen_synthetic_corpus(7, 1000)
        markers = marker_sets()
        assert [len(t) for t in corpus.texts] == [1000, 1000]
        for s, lines in enumerate(corpus.texts):
            for line in lines:
                words = set(line.split())
                assert words & markers[s]
                assert not words & markers[1 - s]

    def test_seeded(self):
        assert gen_synthetic_corpus(7, 50).texts == gen_synthetic_corpus(7, 50).texts
        assert gen_synthetic_corpus(7, 50).texts != gen_synthetic_corpus(8, 50).texts

    def test_overlapping_lexicons_rejected(self):
        with pytest.raises(ValueError):
            gen_synthetic_corpus(0, 5, marker_lexicons=(("good", "bad"), ("bad",)))
        with pytest.raises(ValueError):
            gen_synthetic_corpus(0, 5, marker_lexicons=(("food",), ("good",)))

    def test_save_load_with_manifest(self, tmp_path):
        corpus = gen_synthetic_corpus(1, 20)
        corpus.save(tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.jsonl", "neg.txt", "pos.txt"]
        rec = json.loads((tmp_path / "manifest.jsonl").read_text().splitlines()[0])
        assert set(rec) == {"text", "style", "markers"}
        again = StyleCorpus.load(tmp_path)
        assert again.texts == corpus.texts and again.names == corpus.names
        assert again.markers == corpus.markers

    def test_split_is_per_style_and_disjoint(self):
        corpus = gen_synthetic_corpus(2, 100)
        train, test = corpus.split(0.2, seed=0)
        assert [len(t) for t in test.texts] == [20, 20]
        assert [len(t) for t in train.texts] == [80, 80]
        assert sorted(train.all_texts() + test.all_texts()) == sorted(corpus.all_texts())

    def test_style_lookup(self):
        corpus = gen_synthetic_corpus(2, 3)
        assert corpus.style_id("pos") == 1 and corpus.style_id(0) == 0
        with pytest.raises(ValueError):
            corpus.style_id("formal")
        with pytest.raises(ValueError):
            StyleCorpus([["only one style"]])
