"""Confusion-matrix metrics, kappa, Wilson intervals and ROC curves.

Run: python3 demos/05_metrics.py
"""

import numpy as np

from covidlite.metrics import ConfusionMatrix, class_report, multiclass_auc, roc_curve

cm = ConfusionMatrix(np.array([[50, 3, 2], [4, 45, 1], [0, 2, 48]]))
report = class_report(cm, ["covid", "normal", "viral"])
print(report.format_table())

# %% ROC with a tie-aware threshold sweep; AUC is the trapezoid area
curve = roc_curve([0.9, 0.8, 0.7, 0.6, 0.55, 0.4], [1, 1, 0, 1, 0, 0])
print("fpr", curve.fpr, "tpr", curve.tpr, "auc", curve.auc)

# %% one-vs-rest AUC from noisy synthetic probabilities
rng = np.random.default_rng(0)
labels = rng.integers(0, 3, 300)
scores = np.eye(3)[labels] + rng.normal(0, 0.6, (300, 3))
per_class, mean = multiclass_auc(scores, labels, 3)
print("per-class AUC", per_class.round(3), "mean", round(mean, 3))
