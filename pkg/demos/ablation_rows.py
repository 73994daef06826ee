"""All six ablation configurations (a)-(f) at a reduced scale.

Each row switches on one more component: paired pretraining, refinement module,
frequency experts, MDC-guided partition, adaptive parameter estimation.

    python3 demos/ablation_rows.py
"""

from mcpt import pipeline
from mcpt.evaluation import evaluate

SMALL = [
    ("data.n_pairs", 60), ("data.train_per_class", 12), ("data.test_per_class", 4),
    ("schedule.pretrain.epochs", 4), ("schedule.finetune.epochs", 10),
]

print(f"{'row':4s} {'mcpt fer fce mdc ape':22s} {'All':>6s} {'Old':>6s} {'New':>6s}")
for label, flags in pipeline.Ablation.ROWS.items():
    cfg = pipeline.load_config(overrides=SMALL + [(f"ablation.{n}", on) for n, on in zip(pipeline.Ablation.ORDER, flags)])
    pairs, split = pipeline.synthetic_data(cfg)
    init = pipeline.pretrain(cfg, pairs).inference_checkpoint if cfg.ablation.mcpt else None
    ft = pipeline.finetune(cfg, init, split)
    rep, _, _ = evaluate(ft.model, ft.prototypes, split)
    marks = "  ".join(" x " if on else " - " for on in flags)
    print(f"({label})  {marks:22s} {rep.all:6.2f} {rep.old:6.2f} {rep.new:6.2f}")
