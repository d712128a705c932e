import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from stower.backbone import BackboneModel
from stower.config import BackboneConfig, ScorerConfig
from stower.corpus import BOS, EOS, MASK
from stower.pivot import (ScorerModel, importance_scores, importance_scores_batch, mask_sentence,
                          scores_from_qk, train_style_classifier)


def scorer_for(vocab_size, seed=0, gamma=0.05):
    rng = np.random.default_rng(seed)
    backbone = BackboneModel(vocab_size, BackboneConfig(layers=1, d_model=16, heads=2, ffn_dim=32), rng, 66)
    backbone.freeze()
    return ScorerModel(backbone, 2, ScorerConfig(heads=2, ffn_dim=32, gamma=gamma), rng)


class TestScoresFromQk:
    def test_orthogonal_keys_are_uniform(self):
        q = np.array([[1.0, 0.0]])
        keys = np.array([[[0.0, 1.0], [0.0, -1.0], [0.0, 2.0]]])
        np.testing.assert_allclose(scores_from_qk(q, keys, 0.01), [1 / 3] * 3)

    def test_hand_oracle(self):
        q = np.array([[1.0]])
        keys = np.array([[[0.0], [math.log(3.0)]]])
        np.testing.assert_allclose(scores_from_qk(q, keys, 1.0), [0.25, 0.75])

    def test_head_average(self):
        q = np.array([[1.0], [1.0]])
        keys = np.array([[[0.0], [50.0]], [[50.0], [0.0]]])
        np.testing.assert_allclose(scores_from_qk(q, keys, 1.0), [0.5, 0.5], atol=1e-12)

    def test_smaller_gamma_sharpens(self):
        rng = np.random.default_rng(0)
        q, keys = rng.normal(size=(2, 4)), rng.normal(size=(2, 6, 4))

        def entropy(p):
            return -(p * np.log(p)).sum()

        sharp, flat = scores_from_qk(q, keys, 0.1), scores_from_qk(q, keys, 1.0)
        assert entropy(sharp) < entropy(flat)
        assert sharp.max() > flat.max()


class TestImportanceScores:
    def test_distribution_over_content_tokens(self):
        model = scorer_for(20)
        tokens = np.array([BOS, 5, 9, 11, 7, EOS])
        a = importance_scores(model, tokens)
        assert a.shape == (4,)
        assert a.sum() == pytest.approx(1.0, abs=1e-9)
        assert (a > 0).all()
        np.testing.assert_array_equal(a, importance_scores(model, tokens))

    def test_batched_matches_single(self):
        model = scorer_for(20)
        seqs = [np.array([BOS, 5, 6, EOS]), np.array([BOS, 7, 8, 9, 10, 11, EOS])]
        for got, seq in zip(importance_scores_batch(model, seqs), seqs):
            np.testing.assert_allclose(got, importance_scores(model, seq), atol=1e-6)

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            importance_scores(scorer_for(20), np.array([BOS, EOS]))

    def test_gamma_validation(self):
        with pytest.raises(ValueError):
            scorer_for(20, gamma=0.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            scorer_for(20, gamma=2.0)
        assert any("gamma" in str(w.message) for w in caught)


class TestMasking:
    tokens = np.array([BOS, 5, 6, 7, 8, EOS])

    def test_trace(self):
        scores = np.array([0.9, 0.05, 0.6, 0.01])
        out, plan = mask_sentence(self.tokens, scores, rng=3)
        draws = np.random.default_rng(3).random(4)
        np.testing.assert_array_equal(plan.draws, draws)
        np.testing.assert_array_equal(plan.masked, draws < scores)
        expected = self.tokens.copy()
        expected[1:5][draws < scores] = MASK
        np.testing.assert_array_equal(out, expected)
        assert out[0] == BOS and out[-1] == EOS

    def test_unselected_sentence_is_untouched(self):
        out, plan = mask_sentence(self.tokens, np.ones(4), rng=0, selected=False)
        np.testing.assert_array_equal(out, self.tokens)
        assert not plan.masked.any() and not plan.sentence_selected

    def test_input_not_mutated(self):
        tokens = self.tokens.copy()
        mask_sentence(tokens, np.ones(4), rng=0)
        np.testing.assert_array_equal(tokens, self.tokens)

    def test_score_length_checked(self):
        with pytest.raises(ValueError):
            mask_sentence(self.tokens, np.ones(3), rng=0)

    def test_per_token_frequency(self):
        scores = np.array([0.7, 0.1, 0.15, 0.05])
        rng = np.random.default_rng(0)
        n = 10_000
        counts = np.zeros(4)
        for _ in range(n):
            counts += mask_sentence(self.tokens, scores, rng)[1].masked
        sigma = np.sqrt(n * scores * (1 - scores))
        assert (np.abs(counts - n * scores) <= 3 * sigma).all()


def test_classifier_learns_markers_and_fails_on_shuffled_labels(small_data):
    corpus, vocab, sents = small_data
    cfg = ScorerConfig(heads=2, ffn_dim=32, gamma=0.05, epochs=6, token_budget=512, lr=0.002)
    rng = np.random.default_rng(0)
    backbone = BackboneModel(len(vocab), BackboneConfig(layers=1, d_model=16, heads=2, ffn_dim=32), rng, 66)
    backbone.freeze()
    train, held = sents[:50] + sents[60:110], sents[50:60] + sents[110:120]
    model = train_style_classifier(backbone, train, held, 2, cfg, seed=0)
    assert model.heldout_accuracy >= 0.9

    shuffled = [replace(s, style=int(l)) for s, l in
                zip(train, np.random.default_rng(1).permutation([s.style for s in train]))]
    null = train_style_classifier(backbone, shuffled, held, 2, cfg, seed=0)
    assert null.heldout_accuracy < 0.8
