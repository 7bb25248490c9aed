"""
Training a toy detector and scoring it under blackout
=====================================================

Under a minute of CPU training on small synthetic scenes, then the MR table
over all six scenarios and a Caltech-style FPPI / miss-rate plot. Pass
``--no-ha`` to train the variant without hybrid attention for comparison.
"""

import sys
import time
from pathlib import Path

from hamlpd.evaluation import write_metrics
from hamlpd.experiments import toy_config, variant_configs
from hamlpd.data import generate_split
from hamlpd.report import write_report
from hamlpd.trainer import evaluate_scenarios, train

args = [a for a in sys.argv[1:] if not a.startswith("--")]
out_dir = Path(args[0] if args else "demo_output")
variant = "aug" if "--no-ha" in sys.argv else "ha"

# the acceptance-suite setting, shrunk: fewer scenes and epochs
cfg = toy_config()
cfg.synth.n_train, cfg.synth.n_test = 200, 60
cfg.train.epochs, cfg.train.lr_milestones = 12, (9,)
train_pairs = generate_split(cfg.synth, "train")
test_pairs = generate_split(cfg.synth, "test")
print(f"{len(train_pairs)} training scenes, {len(test_pairs)} test scenes, variant {variant}")

model_cfg, train_cfg = variant_configs(cfg, variant)
t0 = time.perf_counter()
result = train(train_pairs, model_cfg, train_cfg, out_dir=out_dir / variant)
print(f"trained in {time.perf_counter() - t0:.0f} s, best epoch {result.best_epoch}")

# pedestrians shorter than 8 px count as ignore regions on these small images
table = evaluate_scenarios(result.model, test_pairs, min_height=train_cfg.min_height)
print(table.format())

metrics = out_dir / f"metrics_{variant}.json"
write_metrics(metrics, table.records)
paths = write_report([metrics], out_dir / f"report_{variant}")
print("wrote", paths["curves_svg"], "and", paths["summary"])
