"""Optimizer, dataset splitting and the mini-batch training loop."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .imaging import ImageDecodeError, PreprocessConfig, load_preprocessed
from .model import build_covidlite
from .nncore import BatchNorm, Tape, softmax, sparse_ce_loss

log = logging.getLogger(__name__)

# sub-streams derived from the run seed
SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2
SPLIT_STREAM = 3
FOLD_STREAM = 4


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    initial_lr: float = 0.001
    seed: int = 0
    num_classes: int = 3
    k_folds: int = 5
    split_ratio: float = 0.8
    # moving-statistics momentum of every BatchNorm layer during fit
    bn_momentum: float = 0.99

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must be in (0, 1)")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if not 0 <= self.bn_momentum < 1:
            raise ValueError("bn_momentum must be in [0, 1)")

    @property
    def decay(self):
        return self.initial_lr / self.epochs


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment accumulators plus the time-based learning-rate decay."""

    lr: float = 0.001
    decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, config):
        return cls(lr=config.initial_lr, decay=config.decay)

    def current_lr(self, t=None):
        t = self.t if t is None else t
        return self.lr / (1.0 + self.decay * t)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place. Returns ``params``.

    The step size for global step ``t`` (0-based) is ``lr / (1 + decay*t)``.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    lr_t = state.current_lr()
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (lr_t * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype, copy=False)
    return params


# --------------------------------------------------------------------------
# dataset index
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetIndex:
    entries: tuple
    class_names: tuple
    seed: int = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(p), int(y)) for p, y in self.entries))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        k = len(self.class_names)
        paths = set()
        for path, label in self.entries:
            if not 0 <= label < k:
                raise ValueError(f"label {label} for {path} outside [0, {k})")
            if path in paths:
                raise ValueError(f"duplicate path {path}")
            paths.add(path)

    def __len__(self):
        return len(self.entries)

    @property
    def paths(self):
        return [p for p, _ in self.entries]

    @property
    def labels(self):
        return np.array([y for _, y in self.entries], dtype=np.int64)

    @property
    def num_classes(self):
        return len(self.class_names)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices, seed=None):
        return DatasetIndex([self.entries[i] for i in indices], self.class_names, seed)


def write_manifest(index, path, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "class_name"])
        for p, y in index.entries:
            writer.writerow([p, y, index.class_names[y]])
    return Path(path)


def read_manifest(path, class_names=None):
    """Load a manifest CSV; ``#`` lines are metadata and skipped."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    names = dict(class_names and enumerate(class_names) or {})
    for row in rows:
        names.setdefault(int(row["label"]), row["class_name"])
    k = max(names) + 1 if names else 0
    ordered = [names.get(i, f"class_{i}") for i in range(k)]
    return DatasetIndex([(r["path"], int(r["label"])) for r in rows], ordered)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_split(index, ratio=0.8, seed=0):
    """Per-class seeded shuffle; ``round(ratio * n_class)`` go to training."""
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng([seed, SPLIT_STREAM])
    labels = index.labels
    train, test = [], []
    for c in range(index.num_classes):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        n_train = _round_half_up(ratio * members.size)
        train.extend(members[:n_train].tolist())
        test.extend(members[n_train:].tolist())
    return index.subset(sorted(train), seed), index.subset(sorted(test), seed)


def kfold_partition(index, k=5, seed=0):
    """Stratified k-fold: ``k`` (fit, validate) index pairs.

    Within each class, shuffled members are dealt round-robin into folds,
    starting where the previous class stopped so total fold sizes stay
    balanced.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(index) < k:
        raise ValueError(f"cannot make {k} folds from {len(index)} samples")
    rng = np.random.default_rng([seed, FOLD_STREAM])
    labels = index.labels
    fold_of = np.empty(len(index), dtype=np.int64)
    start = 0
    for c in range(index.num_classes):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        fold_of[members] = (start + np.arange(members.size)) % k
        start = (start + members.size) % k
    pairs = []
    for f in range(k):
        val = np.flatnonzero(fold_of == f)
        fit_idx = np.flatnonzero(fold_of != f)
        pairs.append((index.subset(fit_idx, seed), index.subset(val, seed)))
    return pairs


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


class ImageCache:
    """Preprocessed network inputs keyed by path; unreadable files are remembered."""

    def __init__(self, config=PreprocessConfig()):
        self.config = config
        self._arrays = {}
        self.failed = {}

    def get(self, path):
        if path in self.failed:
            return None
        arr = self._arrays.get(path)
        if arr is None:
            try:
                arr = load_preprocessed(path, self.config)
            except (OSError, ImageDecodeError) as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                self.failed[path] = str(exc)
                return None
            self._arrays[path] = arr
        return arr

    def readable(self, index):
        """Indices of entries whose image loads."""
        return [i for i, p in enumerate(index.paths) if self.get(p) is not None]

    def batch(self, paths):
        return np.stack([self._arrays[p] for p in paths])


@dataclass
class History:
    seed: int
    config: dict
    epochs: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def loss(self):
        return [e["loss"] for e in self.epochs]

    @property
    def accuracy(self):
        return [e["accuracy"] for e in self.epochs]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed} config={json.dumps(self.config, sort_keys=True)}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss", "accuracy", "lr"])
            for e in self.epochs:
                writer.writerow([e["epoch"], repr(e["loss"]), repr(e["accuracy"]), repr(e["lr"])])
        return Path(path)


def fit(model, index, config, preprocess_config=PreprocessConfig(), cache=None, on_epoch=None):
    """Train ``model`` in place on ``index``; return the per-epoch :class:`History`.

    Accuracy is the running training-mode accuracy over each epoch's batches.
    """
    if len(index) == 0:
        raise ValueError("training index is empty")
    cache = cache or ImageCache(preprocess_config)
    usable = cache.readable(index)
    skipped = [index.paths[i] for i in range(len(index)) if i not in set(usable)]
    if skipped:
        log.warning("%d unreadable image(s) skipped", len(skipped))
    if not usable:
        raise ValueError("no readable images in training index")
    paths = [index.paths[i] for i in usable]
    labels = index.labels[usable]

    for layer in model:
        if isinstance(layer, BatchNorm):
            layer.momentum = config.bn_momentum
    shuffle_rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    model.seed_dropout(np.random.default_rng([config.seed, DROPOUT_STREAM]))
    state = AdamState.for_config(config)
    history = History(config.seed, {**asdict(config), **{"preprocess": asdict(preprocess_config)}})
    history.skipped = skipped

    n = len(paths)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            sel = order[start : start + config.batch_size]
            x = cache.batch([paths[i] for i in sel])
            y = labels[sel]
            tape = Tape()
            model.zero_grad()
            logits = model.forward(x, tape=tape, training=True)
            probs = softmax(logits)
            loss, dlogits = sparse_ce_loss(probs, y)
            tape.backward(dlogits.astype(np.float32), input_grad=False)
            adam_step(model.parameters(), model.gradients(), state)
            total_loss += loss * len(sel)
            correct += int((probs.argmax(axis=1) == y).sum())
        record = {
            "epoch": epoch,
            "loss": total_loss / n,
            "accuracy": correct / n,
            "lr": state.current_lr(),
        }
        history.epochs.append(record)
        log.info("epoch %d loss %.4f acc %.4f", epoch, record["loss"], record["accuracy"])
        if on_epoch is not None:
            on_epoch(record)
    return history


def predict_index(model, index, preprocess_config=PreprocessConfig(), cache=None, batch_size=8):
    """Class probabilities for every readable entry; returns ``(probs, labels, used)``."""
    cache = cache or ImageCache(preprocess_config)
    usable = cache.readable(index)
    probs = np.zeros((len(usable), model.num_classes), dtype=np.float64)
    for start in range(0, len(usable), batch_size):
        sel = usable[start : start + batch_size]
        x = cache.batch([index.paths[i] for i in sel])
        probs[start : start + len(sel)] = softmax(model.forward(x, training=False))
    return probs, index.labels[usable], usable


def accuracy(model, index, preprocess_config=PreprocessConfig(), cache=None):
    probs, labels, _ = predict_index(model, index, preprocess_config, cache)
    return float((probs.argmax(axis=1) == labels).mean())


@dataclass
class CVReport:
    fold_accuracies: list
    ddof: int = 0

    @property
    def mean(self):
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self):
        return float(np.std(self.fold_accuracies, ddof=self.ddof))

    def summary(self):
        return f"{100 * self.mean:.2f}% (± {100 * self.std:.2f}%)"

    def format_table(self):
        lines = [f"{'Fold':<10}Accuracy"]
        for i, acc in enumerate(self.fold_accuracies, start=1):
            lines.append(f"Fold {i:<5}{100 * acc:.2f}%")
        lines.append(f"{'Average':<10}{self.summary()}")
        return "\n".join(lines)


def cross_validate(index, config, preprocess_config=PreprocessConfig(), cache=None, model_factory=None):
    """Train one fresh model per stratified fold and score it on the held-out part.

    The spread is the population standard deviation across folds.
    """
    cache = cache or ImageCache(preprocess_config)
    model_factory = model_factory or (lambda: build_covidlite(config.num_classes, config.seed))
    accs = []
    for f, (fit_idx, val_idx) in enumerate(kfold_partition(index, config.k_folds, config.seed), 1):
        model = model_factory()
        fit(model, fit_idx, config, preprocess_config, cache)
        acc = accuracy(model, val_idx, preprocess_config, cache)
        log.info("fold %d accuracy %.4f", f, acc)
        accs.append(acc)
    return CVReport(accs)
