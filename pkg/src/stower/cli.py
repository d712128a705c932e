"""Command-line interface.

Every training subcommand reads and writes a run directory (see
:mod:`stower.persistence`); a full run is::

    stower gen-data --seed 7 --n 1000 --out data/
    stower pretrain --data data/ --run run/ [--config cfg.txt] [--set key=value ...]
    stower train-stage1 --run run/
    stower train-scorer --run run/
    stower train-stage2 --run run/
    stower train-eval-models --run run/
    stower transfer --run run/ --from neg --to pos --weight 1.5 --input in.txt --output out.txt
    stower evaluate --run run/ --hyp out.txt --ref in.txt --to pos
    stower sweep --run run/ --weights 0.5,1.0,1.5,2.0,2.5 --out sweep.csv
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .checkpoint import CheckpointError
from .config import Config, ConfigError, component_rng, component_seed
from .corpus import DataError, StyleCorpus, gen_synthetic_corpus, read_lines, tokenize
from .metrics import evaluate_outputs
from .optim import TrainingError
from .persistence import (RunDir, make_checkpoint, restore_backbone, restore_eval_models, restore_scorer,
                          restore_stower)
from .pivot import importance_scores
from .transfer import sweep_csv, sweep_style_weight, transfer_texts

log = logging.getLogger("stower")


class UsageError(Exception):
    pass


def _load_config(args) -> Config:
    cfg = Config.synthetic() if args.preset == "synthetic" else Config()
    if args.config:
        cfg = Config.load(args.config, base=cfg)
    for item in args.set or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    cfg.train.validate()
    return cfg


def _splits(run: RunDir) -> pipeline.Splits:
    return pipeline.Splits(run.split("train"), run.split("dev"), run.split("test"))


def _style_index(names: list[str], value: str) -> int:
    if value in names:
        return names.index(value)
    if value.isdigit() and int(value) < len(names):
        return int(value)
    raise UsageError(f"unknown style {value!r}; known: {', '.join(names)}")


def _read_input(path) -> list[str]:
    lines = sys.stdin.read().splitlines() if path == "-" else read_lines(path)
    return [line for line in lines if line.strip()]


def _write_output(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    corpus = gen_synthetic_corpus(component_seed(args.seed, "data"), args.n)
    corpus.save(args.out)
    print(f"wrote {len(corpus)} sentences in {corpus.k} styles to {args.out}")


def cmd_pretrain(args):
    cfg = _load_config(args)
    run = RunDir(args.run)
    corpus = StyleCorpus.load(args.data)
    splits, vocab = pipeline.prepare_data(cfg, corpus)
    run.write_config(cfg)
    run.write_vocab(vocab)
    run.write_splits(splits)
    manifest = run.manifest()
    manifest["style_names"] = list(corpus.names)
    manifest["data"] = str(Path(args.data).resolve())
    run.write_manifest(manifest)
    for line in cfg.to_text().splitlines():
        log.info("config %s", line)
    backbone = pipeline.step_pretrain(cfg, splits, vocab)
    run.save("backbone.ckpt", make_checkpoint(cfg, vocab, backbone=backbone))
    run.record("pretrain", cfg, final_loss=backbone.history[-1] if backbone.history else None)
    print(f"backbone: {backbone.num_parameters()} parameters, checksum {backbone.checksum()[:12]}")


def cmd_train_stage1(args):
    run = RunDir(args.run)
    cfg, vocab, splits = run.config(), run.vocab(), _splits(run)
    backbone = restore_backbone(run.load("backbone.ckpt"))
    vae, table, result = pipeline.step_stage1(cfg, splits, vocab, backbone, run.file("logs"))
    run.save("stage1.ckpt", make_checkpoint(cfg, vocab, backbone=backbone, vae=vae, style_table=table))
    run.record("train-stage1", cfg, steps=len(result.steps), heldout=result.heldout_loss[-1:])
    print(f"stage I: {len(result.steps)} steps, held-out loss {result.heldout_loss[-1]:.4f}")


def cmd_train_scorer(args):
    run = RunDir(args.run)
    cfg, vocab, splits = run.config(), run.vocab(), _splits(run)
    # a backbone fine-tuned in stage I is the one the scorer must read
    source = "stage1.ckpt" if cfg.backbone.trainable else "backbone.ckpt"
    backbone = restore_backbone(run.load(source, tags=["backbone"]))
    scorer = pipeline.step_scorer(cfg, splits, vocab, backbone)
    run.save("scorer.ckpt", make_checkpoint(cfg, vocab, backbone=backbone, scorer=scorer))
    run.record("train-scorer", cfg, heldout_accuracy=scorer.heldout_accuracy)
    print(f"scorer: held-out accuracy {scorer.heldout_accuracy:.4f}")


def cmd_train_stage2(args):
    run = RunDir(args.run)
    cfg, vocab, splits = run.config(), run.vocab(), _splits(run)
    models = restore_stower(run.load("stage1.ckpt"))
    scorer = restore_scorer(run.load("scorer.ckpt", tags=["scorer"]), models.backbone)
    result = pipeline.step_stage2(cfg, splits, vocab, models.backbone, models.vae, models.table, scorer,
                                  run.file("logs"))
    run.save("stage2.ckpt", make_checkpoint(cfg, vocab, backbone=models.backbone, vae=models.vae,
                                            style_table=models.table))
    run.record("train-stage2", cfg, steps=len(result.steps), heldout=result.heldout_loss[-1:])
    print(f"stage II: {len(result.steps)} steps, held-out loss {result.heldout_loss[-1]:.4f}")


def cmd_train_eval_models(args):
    run = RunDir(args.run)
    cfg, vocab, splits = run.config(), run.vocab(), _splits(run)
    classifier, lm = pipeline.step_eval_models(cfg, splits)
    run.save("eval.ckpt", make_checkpoint(cfg, vocab, char_lm=lm, eval_classifier=classifier))
    run.record("train-eval-models", cfg, classifier_heldout_accuracy=classifier.heldout_accuracy)
    print(f"eval classifier: held-out accuracy {classifier.heldout_accuracy:.4f}")


def cmd_score(args):
    run = RunDir(args.run)
    ckpt = run.load("scorer.ckpt")
    scorer = restore_scorer(ckpt)
    vocab, cfg = run.vocab(), run.config()
    out = []
    for text in _read_input(args.input):
        sent = tokenize(text, vocab, max_len=cfg.data.max_len)
        scores = importance_scores(scorer, sent)
        words = text.lower().split()[:len(scores)]
        out.extend(f"{w}\t{s:.6f}" for w, s in zip(words, scores))
        out.append("")
    _write_output(args.output, "\n".join(out) + ("\n" if out else ""))


def _models(run: RunDir, stage: int):
    return restore_stower(run.load(f"stage{stage}.ckpt"))


def cmd_transfer(args):
    run = RunDir(args.run)
    names = run.manifest().get("style_names") or []
    src, tgt = _style_index(names, args.source), _style_index(names, args.target)
    if src == tgt:
        raise UsageError("--from and --to must name different styles")
    models = _models(run, args.stage)
    texts = _read_input(args.input)
    rng = component_rng(run.config().root_seed(), "transfer") if args.sample else None
    outputs = transfer_texts(models, texts, src, tgt, args.weight, sample=args.sample, rng=rng)
    _write_output(args.output, "".join(o + "\n" for o in outputs))


def cmd_evaluate(args):
    run = RunDir(args.run)
    names = run.manifest().get("style_names") or []
    target = _style_index(names, args.target)
    classifier, lm = restore_eval_models(run.load("eval.ckpt"))
    hyps = read_lines(args.hyp)
    refs = [read_lines(r) for r in args.ref]
    for r, path in zip(refs, args.ref):
        if len(r) != len(hyps):
            raise UsageError(f"{path} has {len(r)} lines but {args.hyp} has {len(hyps)}")
    references = [list(group) for group in zip(*refs)]
    report = evaluate_outputs(hyps, target, references, classifier, lm)
    print(report.to_json())
    print(report.table())
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")


def cmd_sweep(args):
    run = RunDir(args.run)
    try:
        weights = [float(w) for w in args.weights.split(",") if w.strip()]
    except ValueError:
        raise UsageError(f"--weights must be comma-separated numbers, got {args.weights!r}") from None
    if not weights:
        raise UsageError("--weights needs at least one value")
    models = _models(run, args.stage)
    classifier, lm = restore_eval_models(run.load("eval.ckpt"))
    test = run.split("test")
    rows = sweep_style_weight(models, test, weights, classifier, lm, pipeline.marker_words(test))
    _write_output(args.out, sweep_csv(rows))
    for r in rows:
        log.info("w=%.2f acc=%.2f ppl=%.2f bleu=%.2f gm=%.2f", r["w"], r["acc"], r["ppl"], r["bleu"], r["gm"])


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stower", description="Latent-space text style transfer toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic two-style corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1000, help="sentences per style")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="split the data, build the vocabulary, pre-train the backbone")
    p.add_argument("--data", required=True, help="corpus directory with one <style>.txt per style")
    p.add_argument("--run", required=True)
    p.add_argument("--config", help="flat 'section.key = value' file")
    p.add_argument("--preset", choices=("synthetic", "default"), default="synthetic")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")
    p.set_defaults(func=cmd_pretrain)

    for name, func, text in (("train-stage1", cmd_train_stage1, "train the VAE and style embeddings"),
                             ("train-scorer", cmd_train_scorer, "train the attention style scorer"),
                             ("train-stage2", cmd_train_stage2, "fine-tune the VAE on pivot-masked input"),
                             ("train-eval-models", cmd_train_eval_models,
                              "train the evaluation classifier and character LM")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--run", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("score", help="print per-token pivot scores")
    p.add_argument("--run", required=True)
    p.add_argument("--input", required=True, help="one sentence per line, '-' for stdin")
    p.add_argument("--output")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("transfer", help="rewrite sentences into another style")
    p.add_argument("--run", required=True)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--to", dest="target", required=True)
    p.add_argument("--weight", type=float, default=1.0)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--sample", action="store_true", help="sample the latent instead of using its mean")
    p.add_argument("--stage", type=int, choices=(1, 2), default=2)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="accuracy, perplexity, BLEU and GM of transferred text")
    p.add_argument("--run", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True, action="append", help="reference file (repeatable)")
    p.add_argument("--to", dest="target", required=True)
    p.add_argument("--json", help="also write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate transfer of the test split over style weights")
    p.add_argument("--run", required=True)
    p.add_argument("--weights", default="0.5,1.0,1.5,2.0,2.5")
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    p.add_argument("--stage", type=int, choices=(1, 2), default=2)
    p.set_defaults(func=cmd_sweep)
    return parser


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"stower {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DataError, CheckpointError, TrainingError, FileNotFoundError, ValueError,
            KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"stower {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
