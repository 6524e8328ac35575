"""Train and cross-validate on a small synthetic three-class dataset.

Each class is a gray noise field with a different mean intensity, so a
working network separates them within a few epochs. Takes several minutes
on one CPU core.

Run: python3 demos/04_train_toy.py [work_dir] [epochs]
"""

import logging
import sys
from pathlib import Path

from covidlite.cli import ingest
from covidlite.imaging import PreprocessConfig
from covidlite.model import build_covidlite
from covidlite.synthetic import write_toy_tree
from covidlite.training import ImageCache, TrainConfig, accuracy, cross_validate, fit, stratified_split
from covidlite.weights import save_weights

logging.basicConfig(level=logging.INFO, format="%(message)s")
work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_toy")
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 20

# %% dataset, index and an 80/20 stratified split
root = write_toy_tree(work / "data", n_per_class=20, seed=0)
index = ingest(root)
train, test = stratified_split(index, 0.8, seed=0)
print("train", train.class_counts(), "test", test.class_counts())

# %% toy images need no contrast work; short runs use a faster BN moving average
raw = PreprocessConfig(apply_white_balance=False, apply_clahe=False)
config = TrainConfig(epochs=epochs, seed=0, num_classes=3, bn_momentum=0.9)
cache = ImageCache(raw)

model = build_covidlite(3, seed=config.seed)
history = fit(model, train, config, raw, cache)
history.to_csv(work / "history.csv")
save_weights(model, work / "toy.cvl", meta={"seed": config.seed, "class_names": index.class_names})
print(f"train acc {accuracy(model, train, raw, cache):.3f}, test acc {accuracy(model, test, raw, cache):.3f}")

# %% 5-fold cross-validation on the training portion
report = cross_validate(train, config, raw, cache)
print(report.format_table())
