"""Run directories: config, splits, vocabulary, checkpoints and the run manifest.

A run directory looks like::

    config.txt          flat ``section.key = value`` document
    vocab.json
    splits/{train,dev,test}/
    backbone.ckpt  stage1.ckpt  scorer.ckpt  stage2.ckpt  eval.ckpt
    manifest.json       config, seeds, checkpoint hashes, command history
    logs/*.jsonl
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .backbone import BackboneModel
from .checkpoint import Checkpoint, file_sha256, load_checkpoint, save_checkpoint
from .config import COMPONENT_INDEX, Config, component_seed
from .corpus import StyleCorpus, Vocab
from .metrics import CharLm, EvalClassifier
from .pivot import ScorerModel
from .transfer import StowerModels
from .vae import StyleEmbeddingTable, StyleVAE


def seed_record(root: int) -> dict:
    return {"root": int(root), **{name: component_seed(root, name) for name in COMPONENT_INDEX}}


def make_checkpoint(cfg: Config, vocab: Vocab, **components) -> Checkpoint:
    """Pack modules (or the eval classifier) under their component tags."""
    ckpt = Checkpoint(config=cfg.to_dict(), vocab=json.loads(vocab.to_json()), seeds=seed_record(cfg.root_seed()))
    for tag, obj in components.items():
        if obj is None:
            continue
        ckpt.components[tag] = obj.state_dict()
        if tag == "char_lm":
            ckpt.meta[tag] = {"chars": obj.chars, "embed": int(obj.emb.weight.shape[1]),
                              "hidden": int(obj.hidden)}
        elif tag == "eval_classifier":
            ckpt.meta[tag] = {"hash_dim": int(obj.hash_dim), "heldout_accuracy": obj.heldout_accuracy}
        elif tag == "scorer":
            ckpt.meta[tag] = {"heldout_accuracy": obj.heldout_accuracy}
    return ckpt


def _rng():
    # Initial values are overwritten by the checkpoint; any generator will do.
    return np.random.default_rng(0)


def restore_config(ckpt: Checkpoint) -> Config:
    return Config.from_dict(ckpt.config)


def restore_backbone(ckpt: Checkpoint) -> BackboneModel:
    cfg = restore_config(ckpt)
    model = BackboneModel(len(Vocab(ckpt.vocab)), cfg.backbone, _rng(), max_len=cfg.data.max_len + 2)
    model.load_state_dict(ckpt.components["backbone"])
    model.freeze()
    return model


def restore_vae(ckpt: Checkpoint, d_in: int) -> tuple[StyleVAE, StyleEmbeddingTable]:
    cfg = restore_config(ckpt)
    vae = StyleVAE(len(Vocab(ckpt.vocab)), d_in, cfg.vae, _rng(), max_len=cfg.data.max_len + 2)
    vae.load_state_dict(ckpt.components["vae"])
    rows = ckpt.components["style_table"]["weight"]
    table = StyleEmbeddingTable(rows.shape[0], rows.shape[1], _rng())
    table.load_state_dict(ckpt.components["style_table"])
    return vae, table


def restore_stower(ckpt: Checkpoint) -> StowerModels:
    cfg = restore_config(ckpt)
    backbone = restore_backbone(ckpt)
    vae, table = restore_vae(ckpt, backbone.d_model)
    return StowerModels(Vocab(ckpt.vocab), backbone, vae, table, cfg.data.max_len)


def restore_scorer(ckpt: Checkpoint, backbone: BackboneModel | None = None) -> ScorerModel:
    cfg = restore_config(ckpt)
    backbone = backbone if backbone is not None else restore_backbone(ckpt)
    k = ckpt.components["scorer"]["head.weight"].shape[-1]
    scorer = ScorerModel(backbone, k, cfg.scorer, _rng())
    scorer.load_state_dict(ckpt.components["scorer"])
    scorer.freeze()
    scorer.heldout_accuracy = ckpt.meta.get("scorer", {}).get("heldout_accuracy", float("nan"))
    return scorer


def restore_eval_models(ckpt: Checkpoint) -> tuple[EvalClassifier, CharLm]:
    meta = ckpt.meta["eval_classifier"]
    clf = EvalClassifier.from_state(ckpt.components["eval_classifier"], meta["hash_dim"])
    clf.heldout_accuracy = meta.get("heldout_accuracy", float("nan"))
    lm_meta = ckpt.meta["char_lm"]
    lm = CharLm(lm_meta["chars"], _rng(), lm_meta["embed"], lm_meta["hidden"])
    lm.load_state_dict(ckpt.components["char_lm"])
    lm.freeze()
    return clf, lm


class RunDir:
    """Thin accessor over a run directory."""

    def __init__(self, path):
        self.path = Path(path)

    def file(self, name: str) -> Path:
        return self.path / name

    def require(self, name: str) -> Path:
        p = self.file(name)
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run the earlier pipeline step first")
        return p

    def config(self) -> Config:
        return Config.load(self.require("config.txt"))

    def write_config(self, cfg: Config):
        self.path.mkdir(parents=True, exist_ok=True)
        _atomic_text(self.file("config.txt"), cfg.to_text())

    def vocab(self) -> Vocab:
        return Vocab.from_json(self.require("vocab.json").read_text(encoding="utf-8"))

    def write_vocab(self, vocab: Vocab):
        _atomic_text(self.file("vocab.json"), vocab.to_json())

    def split(self, name: str) -> StyleCorpus:
        self.require(f"splits/{name}")
        names = self.manifest().get("style_names")
        return StyleCorpus.load(self.file(f"splits/{name}"), names)

    def write_splits(self, splits):
        for name in ("train", "dev", "test"):
            getattr(splits, name).save(self.file(f"splits/{name}"))

    def load(self, name: str, tags=None) -> Checkpoint:
        return load_checkpoint(self.require(name), tags)

    def save(self, name: str, ckpt: Checkpoint, command: str | None = None) -> str:
        digest = save_checkpoint(ckpt, self.file(name))
        manifest = self.manifest()
        manifest.setdefault("checkpoints", {})[name] = {
            "sha256": digest,
            "components": {tag: ckpt.checksum(tag) for tag in sorted(ckpt.components)},
        }
        self.write_manifest(manifest)
        return digest

    def manifest(self) -> dict:
        p = self.file("manifest.json")
        return json.loads(p.read_text(encoding="utf-8")) if p.exists() else {}

    def write_manifest(self, manifest: dict):
        self.path.mkdir(parents=True, exist_ok=True)
        _atomic_text(self.file("manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def record(self, command: str, cfg: Config, **extra):
        manifest = self.manifest()
        manifest["config"] = cfg.to_dict()
        manifest["seeds"] = seed_record(cfg.root_seed())
        manifest.setdefault("commands", []).append({"command": command, **extra})
        self.write_manifest(manifest)

    def verify(self, name: str) -> bool:
        """True when the checkpoint on disk matches the hash in the manifest."""
        entry = self.manifest().get("checkpoints", {}).get(name)
        return entry is not None and entry["sha256"] == file_sha256(self.file(name))


def _atomic_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
