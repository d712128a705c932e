import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stower.corpus import StyleCorpus
from stower.metrics import (EvalClassifier, EvalReport, bleu_score, evaluate_outputs, geometric_mean,
                            perplexity, train_char_lm, train_eval_classifier, transfer_accuracy)
from stower.transfer import (TransferRequest, adjust_latent, anchor_overlap, marker_success, sweep_csv)


class TestAdjustLatent:
    def test_arithmetic(self):
        out = adjust_latent([1.0, 2.0], [0.5, 0.0], [0.0, 0.5], 2.0)
        np.testing.assert_allclose(out, [2.0, 1.0])

    def test_zero_weight_is_identity(self):
        z = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(adjust_latent(z, np.ones(4), np.zeros(4), 0.0), z)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 5), st.floats(0, 5))
    def test_linear_in_weight(self, a, b):
        rng = np.random.default_rng(1)
        z, t, s = rng.normal(size=(3, 8))
        lhs = adjust_latent(z, t, s, a + b) - z
        rhs = (adjust_latent(z, t, s, a) - z) + (adjust_latent(z, t, s, b) - z)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_composition(self):
        rng = np.random.default_rng(2)
        z, t, s = rng.normal(size=(3, 8))
        np.testing.assert_allclose(adjust_latent(z, t, s, 2.5),
                                   adjust_latent(adjust_latent(z, t, s, 1.0), t, s, 1.5), atol=1e-12)
        np.testing.assert_array_equal(adjust_latent(z, s, s, 3.0), z)

    def test_request_validation(self):
        TransferRequest("x", 0, 1, 1.5).validate(2)
        for bad in (TransferRequest("x", 0, 0, 1.0), TransferRequest("x", 0, 2, 1.0),
                    TransferRequest("x", 0, 1, -0.5)):
            with pytest.raises(ValueError):
                bad.validate(2)


class TestMarkerMetrics:
    markers = [{"bad"}, {"good"}]

    def test_anchor_overlap(self):
        assert anchor_overlap(["the food was bad"], ["the food was good"], self.markers) == 1.0
        assert anchor_overlap(["the food was bad"], ["food good"], self.markers) == pytest.approx(1 / 3)
        assert anchor_overlap(["the the bad"], ["the good"], self.markers) == 0.5

    def test_marker_success(self):
        outs = ["food good", "food bad good", "food"]
        assert marker_success(outs, np.zeros(3, int), np.ones(3, int), self.markers) == pytest.approx(1 / 3)


def test_sweep_csv():
    rows = [{"w": w, "acc": 50.0 + w, "ppl": 10.0, "bleu": 30.0, "gm": 5.0, "outputs": []}
            for w in (0.5, 1.0, 1.5, 2.0, 2.5)]
    lines = sweep_csv(rows).splitlines()
    assert lines[0] == "w,acc,ppl,bleu,gm"
    assert len(lines) == 6 and lines[1] == "0.5,50.5,10,30,5"


class TestBleu:
    def test_perfect(self):
        assert bleu_score(["the cat sat on the mat"], ["the cat sat on the mat"]) == pytest.approx(100.0)

    def test_no_four_gram_is_zero(self):
        assert bleu_score(["the the cat"], ["the cat sat"]) == 0.0

    def test_hand_value(self):
        # 1-4 gram precisions 5/6, 3/5, 2/4, 1/3; hypothesis longer than reference -> no penalty
        hyp, ref = "the cat sat on a mat", "the cat sat on mat"
        expected = 100 * math.exp(np.mean(np.log([5 / 6, 3 / 5, 2 / 4, 1 / 3])))
        assert bleu_score([hyp], [ref]) == pytest.approx(expected, abs=1e-9)

    def test_brevity_penalty(self):
        hyp, ref = "a b c d", "a b c d e f g h"
        assert bleu_score([hyp], [ref]) == pytest.approx(100 * math.exp(1 - 2), abs=1e-9)

    def test_permutation_invariance(self):
        hyps = ["a b c d e", "f g h i", "x y z w v u"]
        refs = ["a b c d f", "f g h i", "x y z w v"]
        order = [2, 0, 1]
        assert bleu_score(hyps, refs) == pytest.approx(
            bleu_score([hyps[i] for i in order], [refs[i] for i in order]))

    def test_multi_reference_clipping(self):
        score = bleu_score(["a b c d e"], [["a b c d x", "q b c d e"]])
        assert score == pytest.approx(100.0)
        assert bleu_score(["a b c d e"], [["a b c d x", "q b c d e"]], mode="mean") < 100.0

    def test_errors(self):
        with pytest.raises(ValueError):
            bleu_score([], [])
        with pytest.raises(ValueError):
            bleu_score(["a"], ["a", "b"])
        with pytest.raises(ValueError):
            bleu_score(["a"], ["a"], mode="other")


class TestGeometricMean:
    @pytest.mark.parametrize("acc,bleu,ppl,gm", [
        (91.1, 23.97, 30.78, 8.61),
        (91.7, 18.51, 38.35, 7.75),
        (84.3, 22.82, 25.27, 8.41),
        (83.9, 28.29, 43.60, 8.57),
        (1.0, 1.0, math.e, 1.0),
    ])
    def test_reference_rows(self, acc, bleu, ppl, gm):
        assert geometric_mean(acc, bleu, ppl) == pytest.approx(gm, abs=0.01)

    def test_domain(self):
        with pytest.raises(ValueError):
            geometric_mean(50, 50, 1.0)
        with pytest.raises(ValueError):
            geometric_mean(-1, 50, 10)


class TestClassifier:
    corpus = StyleCorpus([["the food was bad", "bad service", "awful bad place"] * 5,
                          ["the food was good", "good service", "great good place"] * 5])

    def test_accuracy_and_determinism(self):
        a = train_eval_classifier(self.corpus, seed=0, hash_dim=2 ** 10)
        b = train_eval_classifier(self.corpus, seed=0, hash_dim=2 ** 10)
        np.testing.assert_array_equal(a.weight, b.weight)
        assert transfer_accuracy(a, ["bad food", "good food", "bad", "good"], [0, 1, 0, 0]) == 75.0
        texts = ["bad food", "good", "the place", "awful"]
        assert transfer_accuracy(a, texts, 0) + transfer_accuracy(a, texts, 1) == pytest.approx(100.0)

    def test_state_round_trip(self):
        a = train_eval_classifier(self.corpus, seed=0, hash_dim=2 ** 10)
        b = EvalClassifier.from_state(a.state_dict(), a.hash_dim)
        np.testing.assert_array_equal(a.predict(["good", "bad"]), b.predict(["good", "bad"]))

    def test_single_style_rejected(self):
        with pytest.raises(ValueError):
            train_eval_classifier(StyleCorpus([["a"], []]), seed=0)


class TestCharLm:
    def test_untrained_uniform_model(self):
        lm = train_char_lm(["abc", "cab"], seed=0, hidden=8, embed=4, epochs=0)
        lm.out.weight.data[:] = 0.0
        lm.out.bias.data[:] = 0.0
        assert perplexity(lm, ["abc", "bca"]) == pytest.approx(lm.out.weight.shape[-1], rel=1e-5)

    def test_training_lowers_perplexity(self):
        texts = ["the food was good", "the service was bad"] * 20
        untrained = train_char_lm(texts, seed=0, hidden=16, embed=8, epochs=0)
        trained = train_char_lm(texts, seed=0, hidden=16, embed=8, epochs=5)
        assert perplexity(trained, texts) < perplexity(untrained, texts)

    def test_zero_entropy_text(self):
        lm = train_char_lm(["aaaa"] * 32, seed=0, hidden=8, embed=4, epochs=60, lr=0.03)
        assert perplexity(lm, ["aaaa"]) < 1.1

    def test_prefers_training_like_text(self):
        texts = ["the food was good", "the service was bad", "the staff was great"] * 20
        lm = train_char_lm(texts, seed=0, hidden=32, embed=8, epochs=10)
        rng = np.random.default_rng(0)
        shuffled = ["".join(rng.permutation(list(t))) for t in texts[:3]]
        assert perplexity(lm, texts[:3]) < perplexity(lm, shuffled)

    def test_empty_rejected(self):
        lm = train_char_lm(["abc"], seed=0, hidden=8, embed=4, epochs=0)
        with pytest.raises(ValueError):
            perplexity(lm, [])


def test_report_json_and_table():
    texts = ["the food was good", "the food was bad"]
    clf = train_eval_classifier(StyleCorpus([[texts[1]] * 3, [texts[0]] * 3]), seed=0, hash_dim=2 ** 8)
    lm = train_char_lm(texts, seed=0, hidden=8, embed=4, epochs=1)
    report = evaluate_outputs(texts, [1, 0], texts, clf, lm)
    assert isinstance(report, EvalReport)
    assert report.acc == 100.0 and report.bleu == pytest.approx(100.0) and report.n == 2
    assert "GM" in report.table() and '"bleu"' in report.to_json()
