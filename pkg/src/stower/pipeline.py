"""End-to-end run: data -> backbone -> stage I -> scorer -> stage II -> evaluation models -> sweeps.

Each step is a plain function of the config and the products of earlier
steps, with its randomness drawn from its own component seed. The CLI runs
the same functions one subcommand at a time, through checkpoints on disk.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

from .backbone import BackboneModel, pretrain_backbone_mlm
from .config import Config, component_rng, component_seed
from .corpus import StyleCorpus, Vocab, build_vocab_from_texts, gen_synthetic_corpus
from .metrics import CharLm, EvalClassifier, train_char_lm, train_eval_classifier
from .pivot import ScorerModel, train_style_classifier
from .trainer import TrainResult, train_stage1, train_stage2
from .transfer import StowerModels, sweep_style_weight
from .vae import StyleEmbeddingTable, StyleVAE

log = logging.getLogger(__name__)


@dataclass
class Splits:
    train: StyleCorpus
    dev: StyleCorpus
    test: StyleCorpus


@dataclass
class PipelineResult:
    config: Config
    vocab: Vocab
    splits: Splits
    backbone: BackboneModel
    stage1: StowerModels
    stage2: StowerModels
    scorer: ScorerModel
    classifier: EvalClassifier
    lm: CharLm
    stage1_log: TrainResult
    stage2_log: TrainResult
    sweeps: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    checksums: dict = field(default_factory=dict)


def make_splits(corpus: StyleCorpus, cfg: Config, root: int) -> Splits:
    n_min = min(len(t) for t in corpus.texts)
    test_frac = min(0.5, cfg.data.test_size / max(n_min, 1))
    rest, test = corpus.split(test_frac, component_seed(root, "split"))
    train, dev = rest.split(cfg.data.held_out, component_seed(root, "split") + 1)
    return Splits(train, dev, test)


def prepare_data(cfg: Config, corpus: StyleCorpus) -> tuple[Splits, Vocab]:
    splits = make_splits(corpus, cfg, cfg.root_seed())
    vocab = build_vocab_from_texts(splits.train.all_texts() + splits.dev.all_texts())
    return splits, vocab


def synthetic_corpus(cfg: Config) -> StyleCorpus:
    return gen_synthetic_corpus(component_seed(cfg.root_seed(), "data"), cfg.data.n_per_style)


def marker_words(corpus: StyleCorpus) -> list[set[str]] | None:
    """Per-style marker sets recorded by the synthetic generator, if any."""
    if corpus.markers is None or not any(m for ms in corpus.markers for m in ms):
        return None
    return [{w for m in ms for w in m} for ms in corpus.markers]


def step_pretrain(cfg: Config, splits: Splits, vocab: Vocab) -> BackboneModel:
    train = splits.train.sentences(vocab, cfg.data.max_len)
    return pretrain_backbone_mlm(train, len(vocab), cfg.backbone, component_seed(cfg.root_seed(), "backbone"),
                                 cfg.data.max_len + 2)


def build_models(cfg: Config, vocab: Vocab, k: int, root: int, backbone: BackboneModel):
    rng = component_rng(root, "vae")
    vae = StyleVAE(len(vocab), backbone.d_model, cfg.vae, rng, max_len=cfg.data.max_len + 2)
    table = StyleEmbeddingTable(k, cfg.vae.d_latent, rng, std=cfg.vae.style_init_std)
    return vae, table


def step_stage1(cfg: Config, splits: Splits, vocab: Vocab, backbone: BackboneModel, log_dir=None):
    root = cfg.root_seed()
    vae, table = build_models(cfg, vocab, splits.train.k, root, backbone)
    if cfg.backbone.trainable:
        backbone.unfreeze()
    result = train_stage1(backbone, vae, table, splits.train.sentences(vocab, cfg.data.max_len),
                          splits.dev.sentences(vocab, cfg.data.max_len), cfg.train,
                          component_seed(root, "stage1"),
                          log_path=None if log_dir is None else f"{log_dir}/stage1.jsonl",
                          full_bce=cfg.vae.full_bce)
    backbone.freeze()
    return vae, table, result


def step_scorer(cfg: Config, splits: Splits, vocab: Vocab, backbone: BackboneModel) -> ScorerModel:
    return train_style_classifier(backbone, splits.train.sentences(vocab, cfg.data.max_len),
                                  splits.dev.sentences(vocab, cfg.data.max_len), splits.train.k,
                                  cfg.scorer, component_seed(cfg.root_seed(), "scorer"))


def step_stage2(cfg: Config, splits: Splits, vocab: Vocab, backbone: BackboneModel, vae: StyleVAE,
                table: StyleEmbeddingTable, scorer: ScorerModel, log_dir=None) -> TrainResult:
    return train_stage2(backbone, vae, table, scorer, splits.train.sentences(vocab, cfg.data.max_len),
                        splits.dev.sentences(vocab, cfg.data.max_len), cfg.train,
                        component_seed(cfg.root_seed(), "stage2"),
                        log_path=None if log_dir is None else f"{log_dir}/stage2.jsonl")


def step_eval_models(cfg: Config, splits: Splits) -> tuple[EvalClassifier, CharLm]:
    root = cfg.root_seed()
    classifier = train_eval_classifier(splits.train, component_seed(root, "eval_classifier"),
                                       cfg.eval.hash_dim, held_out=splits.dev)
    lm = train_char_lm(splits.train.all_texts(), component_seed(root, "char_lm"), cfg.eval.lm_hidden,
                       cfg.eval.lm_embed, cfg.eval.lm_epochs, cfg.eval.lm_lr)
    return classifier, lm


def run_pipeline(cfg: Config, corpus: StyleCorpus | None = None, sweep_stage1: bool = True,
                 weights=None, log_dir=None) -> PipelineResult:
    t0 = time.perf_counter()
    timings = {}
    if corpus is None:
        corpus = synthetic_corpus(cfg)
    splits, vocab = prepare_data(cfg, corpus)

    backbone = step_pretrain(cfg, splits, vocab)
    timings["pretrain"] = time.perf_counter() - t0
    checks = {"backbone_initial": backbone.checksum()}

    vae, table, log1 = step_stage1(cfg, splits, vocab, backbone, log_dir)
    timings["stage1"] = time.perf_counter() - t0
    if cfg.backbone.trainable:
        # fine-tuned jointly with the VAE; frozen from here on
        checks["backbone_initial"] = backbone.checksum()
    checks["backbone_after_stage1"] = backbone.checksum()
    checks["style_table_stage1"] = table.checksum()
    stage1 = StowerModels(vocab, backbone, copy.deepcopy(vae), copy.deepcopy(table), cfg.data.max_len)

    scorer = step_scorer(cfg, splits, vocab, backbone)
    checks["backbone_after_scorer"] = backbone.checksum()
    timings["scorer"] = time.perf_counter() - t0

    log2 = step_stage2(cfg, splits, vocab, backbone, vae, table, scorer, log_dir)
    checks["backbone_after_stage2"] = backbone.checksum()
    checks["style_table_stage2"] = table.checksum()
    stage2 = StowerModels(vocab, backbone, vae, table, cfg.data.max_len)
    timings["stage2"] = time.perf_counter() - t0

    classifier, lm = step_eval_models(cfg, splits)
    timings["eval_models"] = time.perf_counter() - t0

    result = PipelineResult(cfg, vocab, splits, backbone, stage1, stage2, scorer, classifier, lm,
                            log1, log2, timings=timings, checksums=checks)
    weights = cfg.eval.weights if weights is None else weights
    markers = marker_words(corpus)
    if weights:
        result.sweeps["stage2"] = sweep_style_weight(stage2, splits.test, weights, classifier, lm, markers)
        if sweep_stage1:
            result.sweeps["stage1"] = sweep_style_weight(stage1, splits.test, weights, classifier, lm, markers)
    timings["total"] = time.perf_counter() - t0
    return result


def save_run(result: PipelineResult, directory) -> dict[str, str]:
    """Write every checkpoint of a finished pipeline into a run directory.

    Returns the per-file SHA-256 digests, which are also recorded in the
    directory's manifest.
    """
    from .persistence import RunDir, make_checkpoint

    cfg, vocab = result.config, result.vocab
    run = RunDir(directory)
    run.write_config(cfg)
    run.write_vocab(vocab)
    run.write_splits(result.splits)
    manifest = run.manifest()
    manifest["style_names"] = list(result.splits.train.names)
    run.write_manifest(manifest)
    s1, s2 = result.stage1, result.stage2
    digests = {
        "backbone.ckpt": run.save("backbone.ckpt", make_checkpoint(cfg, vocab, backbone=result.backbone)),
        "stage1.ckpt": run.save("stage1.ckpt", make_checkpoint(cfg, vocab, backbone=result.backbone,
                                                               vae=s1.vae, style_table=s1.table)),
        "scorer.ckpt": run.save("scorer.ckpt", make_checkpoint(cfg, vocab, backbone=result.backbone,
                                                               scorer=result.scorer)),
        "stage2.ckpt": run.save("stage2.ckpt", make_checkpoint(cfg, vocab, backbone=result.backbone,
                                                               vae=s2.vae, style_table=s2.table)),
        "eval.ckpt": run.save("eval.ckpt", make_checkpoint(cfg, vocab, char_lm=result.lm,
                                                           eval_classifier=result.classifier)),
    }
    run.record("pipeline", cfg)
    return digests
