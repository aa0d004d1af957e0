"""Train a small DS-CNN and an equally sized U-Net on synthetic slices and compare Dice.

Takes about a minute on one CPU core.
Run: python3 demos/02_train_and_compare.py
"""

from dscnn.config import PRESETS, RunConfig
from dscnn.data import make_synthetic
from dscnn.metrics import compare_report, evaluate
from dscnn.training import Trainer

# blurred boundaries and a bias field make this the harder preset
data = make_synthetic(64, 64, "hard", seed=100)
train, test = data.split(4, seed=0)
print(f"{len(train)} training slices, {len(test)} test slices")

summaries = []
for kind, label in (("dscnn", "DS-CNN"), ("unet", "U-Net")):
    cfg = RunConfig(model=kind, base_channels=16, steps=600, augment=False, seed=0)
    trainer = Trainer(cfg.replace(**PRESETS["paper"]), train)
    reports = trainer.run()
    print(f"{label}: final training loss {reports[-1].total:.4f} (main {reports[-1].main:.4f})")
    summaries.append(evaluate(trainer.model, test, label))

print()
print(compare_report(summaries), end="")
