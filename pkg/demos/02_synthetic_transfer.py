"""Train the whole two-stage model on the synthetic sentiment corpus and look at what it learned.

    python demos/02_synthetic_transfer.py [--seed 0]

Takes about two minutes on one CPU core.
"""

import argparse
import logging

from stower.config import Config
from stower.corpus import normalize, tokenize
from stower.pipeline import run_pipeline
from stower.pivot import importance_scores
from stower.transfer import transfer_texts

parser = argparse.ArgumentParser()
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = Config.synthetic()
cfg.run.seed = args.seed

result = run_pipeline(cfg)
print(f"\nfinished in {result.timings['total']:.0f}s; "
      f"eval classifier held-out accuracy {100 * result.classifier.heldout_accuracy:.1f}%")

for stage in ("stage1", "stage2"):
    print(f"\n{stage} sweep (BLEU is measured against the source sentence)")
    print(f"{'w':>5} {'acc':>7} {'bleu':>7} {'ppl':>7} {'gm':>7} {'anchors':>8}")
    for row in result.sweeps[stage]:
        print(f"{row['w']:5.2f} {row['acc']:7.2f} {row['bleu']:7.2f} {row['ppl']:7.2f} {row['gm']:7.2f} "
              f"{row['anchor_overlap']:8.3f}")

negatives = result.splits.test.texts[0][:5]
print("\nnegative -> positive at w = 0.5, 1.5, 2.5")
for text in negatives:
    outs = [transfer_texts(result.stage2, [text], 0, 1, w)[0] for w in (0.5, 1.5, 2.5)]
    print(f"  {text}\n    " + "\n    ".join(outs))

print("\npivot scores from the style classifier's attention")
for text in negatives[:3]:
    alpha = importance_scores(result.scorer, tokenize(text, result.vocab).tokens)
    print("  " + "  ".join(f"{w}:{a:.2f}" for w, a in zip(normalize(text), alpha)))
