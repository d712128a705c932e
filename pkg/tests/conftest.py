import numpy as np
import pytest

from stower.config import BackboneConfig, Config, ScorerConfig, VaeConfig
from stower.corpus import build_vocab_from_texts, gen_synthetic_corpus


def tiny_config() -> Config:
    """Small enough that a whole pipeline trains in well under a minute."""
    cfg = Config.synthetic()
    cfg.data.n_per_style = 120
    cfg.data.test_size = 20
    cfg.backbone = BackboneConfig(layers=1, d_model=16, heads=2, ffn_dim=32, epochs=2, token_budget=512)
    cfg.vae = VaeConfig(d_latent=16, layers=1, heads=2, ffn_dim=32, style_init_std=0.15)
    cfg.scorer = ScorerConfig(heads=2, ffn_dim=32, gamma=0.05, epochs=2, token_budget=512)
    cfg.train.token_budget = 512
    cfg.train.stage1_epochs = 2
    cfg.train.stage2_epochs = 1
    cfg.eval.hash_dim = 2 ** 12
    cfg.eval.lm_hidden = 16
    cfg.eval.lm_embed = 8
    cfg.eval.lm_epochs = 1
    return cfg


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def small_data():
    corpus = gen_synthetic_corpus(11, 60)
    vocab = build_vocab_from_texts(corpus.all_texts())
    return corpus, vocab, corpus.sentences(vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion, printed after the run
# ---------------------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
