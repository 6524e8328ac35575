"""Confusion-matrix metrics, Cohen's kappa, ROC/AUC and Wilson intervals."""

import csv
import json
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

__all__ = [
    "UndefinedMetricWarning",
    "ConfusionMatrix",
    "ClassReport",
    "RocCurve",
    "confusion",
    "class_report",
    "cohens_kappa",
    "roc_curve",
    "multiclass_auc",
    "error_ci",
    "write_roc_csv",
]


class UndefinedMetricWarning(UserWarning):
    """A rate had a zero denominator and was reported as 0."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise ValueError(f"confusion matrix must be KxK with K >= 2, got {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def k(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def tp(self):
        return np.diag(self.counts).copy()

    @property
    def fp(self):
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self):
        return self.counts.sum(axis=1) - self.tp

    @property
    def tn(self):
        return self.total - self.tp - self.fp - self.fn

    @property
    def support(self):
        return self.counts.sum(axis=1)


def confusion(labels, predictions, k):
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions differ in length")
    for name, arr in (("label", labels), ("prediction", predictions)):
        bad = np.flatnonzero((arr < 0) | (arr >= k))
        if bad.size:
            raise ValueError(f"{name} at index {bad[0]} is outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts)


def _rate(num, den, what):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    zero = den == 0
    if zero.any():
        warnings.warn(f"{what} undefined (0/0) for some class; reported as 0", UndefinedMetricWarning)
    return np.where(zero, 0.0, num / np.where(zero, 1.0, den)), zero


def cohens_kappa(cm):
    """Chance-corrected agreement ``(p_o - p_e) / (1 - p_e)``."""
    c = cm.counts.astype(np.float64)
    n = c.sum()
    p_o = np.trace(c) / n
    p_e = float((c.sum(axis=1) * c.sum(axis=0)).sum()) / n**2
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def error_ci(errors, n, level=0.95):
    """Wilson score interval for an error proportion ``errors / n``."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= errors <= n:
        raise ValueError("errors must lie in [0, n]")
    z = NormalDist().inv_cdf(1 - (1 - level) / 2)
    p = errors / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class ClassReport:
    precision: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    error_ci: list
    accuracy: float
    kappa: float
    macro_f1: float
    weighted_f1: float
    undefined: dict = field(default_factory=dict)
    class_names: list = None
    auc: np.ndarray = None

    def to_dict(self):
        names = self.class_names or [str(i) for i in range(len(self.support))]
        per_class = {}
        for i, name in enumerate(names):
            entry = {
                "precision": float(self.precision[i]),
                "sensitivity": float(self.sensitivity[i]),
                "specificity": float(self.specificity[i]),
                "f1": float(self.f1[i]),
                "support": int(self.support[i]),
                "error_ci": [float(v) for v in self.error_ci[i]],
            }
            if self.auc is not None:
                entry["auc"] = float(self.auc[i])
            per_class[name] = entry
        return {
            "per_class": per_class,
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "undefined": {k: [int(i) for i in v] for k, v in self.undefined.items()},
        }

    def to_json(self, **extra):
        return json.dumps({**extra, **self.to_dict()}, indent=2)

    def format_table(self):
        names = self.class_names or [str(i) for i in range(len(self.support))]
        width = max(12, *(len(n) + 2 for n in names))
        rows = [
            ("Precision", self.precision, "{:.2%}"),
            ("Sensitivity", self.sensitivity, "{:.2%}"),
            ("Specificity", self.specificity, "{:.2%}"),
            ("F1-Score", self.f1, "{:.2%}"),
        ]
        lines = ["Parameters".ljust(22) + "".join(n.rjust(width) for n in names)]
        for label, values, fmt in rows:
            lines.append(label.ljust(22) + "".join(fmt.format(v).rjust(width) for v in values))
        lines.append(
            "Class error (95% CI)".ljust(22)
            + "".join(f"({lo:.5f}, {hi:.5f})".rjust(max(width, 20)) for lo, hi in self.error_ci)
        )
        if self.auc is not None:
            lines.append("AUC".ljust(22) + "".join(f"{a:.4f}".rjust(width) for a in self.auc))
        lines.append(f"Accuracy: {self.accuracy:.2%}")
        lines.append(f"Kappa: {self.kappa:.4f}")
        lines.append(f"Macro F1: {self.macro_f1:.2%}  Weighted F1: {self.weighted_f1:.2%}")
        return "\n".join(lines)


def class_report(cm, class_names=None, level=0.95):
    """One-vs-rest rates per class plus global accuracy, kappa and F1 averages."""
    tp, fp, fn, tn = cm.tp, cm.fp, cm.fn, cm.tn
    undefined = {}
    precision, z = _rate(tp, tp + fp, "precision")
    undefined["precision"] = np.flatnonzero(z)
    sensitivity, z = _rate(tp, tp + fn, "sensitivity")
    undefined["sensitivity"] = np.flatnonzero(z)
    specificity, z = _rate(tn, tn + fp, "specificity")
    undefined["specificity"] = np.flatnonzero(z)
    f1, z = _rate(2 * precision * sensitivity, precision + sensitivity, "f1")
    undefined["f1"] = np.flatnonzero(z)
    support = cm.support
    cis = [error_ci(int(fn[i]), int(support[i]), level) if support[i] else (0.0, 0.0) for i in range(cm.k)]
    weighted = float((f1 * support).sum() / support.sum())
    return ClassReport(
        precision=precision,
        sensitivity=sensitivity,
        specificity=specificity,
        f1=f1,
        support=support,
        error_ci=cis,
        accuracy=float(np.trace(cm.counts) / cm.total),
        kappa=cohens_kappa(cm),
        macro_f1=float(f1.mean()),
        weighted_f1=weighted,
        undefined={k: v for k, v in undefined.items() if v.size},
        class_names=list(class_names) if class_names is not None else None,
    )


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_curve(scores, labels):
    """Threshold sweep over every distinct score (score >= t is positive)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("roc_curve needs both positive and negative labels")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    # last index of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / pos]
    fpr = np.r_[0.0, fps / neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(fpr, tpr, thresholds, auc)


def multiclass_auc(scores, labels, k):
    """One-vs-rest AUC per class and their unweighted mean."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[1] != k:
        raise ValueError(f"score matrix must be (n, {k}), got {scores.shape}")
    per_class = np.array([roc_curve(scores[:, c], labels == c).auc for c in range(k)])
    return per_class, float(per_class.mean())


def write_roc_csv(curves, path, header_comment=None):
    """Write ``{class_name: RocCurve}`` as long-format CSV rows."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["class", "threshold", "fpr", "tpr"])
        for name, curve in curves.items():
            for t, f, r in zip(curve.thresholds, curve.fpr, curve.tpr):
                writer.writerow([name, repr(float(t)), repr(float(f)), repr(float(r))])
