"""Synthetic end-to-end run: paired pretraining, GCD fine-tuning, evaluation.

With no arguments this is the desk configuration (200 pairs, 20 pretraining
epochs, 30 fine-tuning epochs; a few minutes on one CPU). ``--quick`` shrinks
everything to run in seconds.

    python3 demos/end_to_end.py --quick
"""

import argparse
import logging

from mcpt import pipeline
from mcpt.evaluation import evaluate

QUICK = [
    ("data.n_pairs", 40), ("data.train_per_class", 12), ("data.test_per_class", 4),
    ("schedule.pretrain.epochs", 3), ("schedule.finetune.epochs", 8),
]

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--quick", action="store_true")
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

overrides = (QUICK if args.quick else []) + [("seed", args.seed)]
cfg = pipeline.load_config(overrides=overrides)
pairs, split = pipeline.synthetic_data(cfg)
print(f"{len(pairs)} pairs; GCD split: {len(split.labeled)} labeled, {len(split.unlabeled)} unlabeled, "
      f"old classes {sorted(split.old_classes)}, new {sorted(split.new_classes)}")

pre = pipeline.pretrain(cfg, pairs)
print(f"pretrain epoch loss {pre.epoch_losses[0]:.4f} -> {pre.epoch_losses[-1]:.4f}")

for label, init in (("(f) MCPT", pre.inference_checkpoint), ("(a) no pretraining", None)):
    run_cfg = cfg if init is not None else pipeline.load_config(
        overrides=overrides + [(f"ablation.{n}", False) for n in pipeline.Ablation.ORDER])
    ft = pipeline.finetune(run_cfg, init, split)
    for protocol in ("transductive", "inductive"):
        rep, _, _ = evaluate(ft.model, ft.prototypes, split, protocol)
        print(f"{label:20s} {protocol:12s} All {rep.all:6.2f}  Old {rep.old:6.2f}  New {rep.new:6.2f}  "
              f"Intra {rep.intra:.3f}  Ratio {rep.ratio:.2f}")
