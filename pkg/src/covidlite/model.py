"""The COVIDLite network: architecture table, construction and parameter accounting."""

from dataclasses import dataclass

import numpy as np

from .nncore import (
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2D,
    ReLU,
    SeparableConv2D,
    Sequential,
    softmax,
)

INPUT_SIZE = 224
CONV_FILTERS = 16
SEP_FILTERS = (32, 64, 128, 256, 256, 512)
FC_UNITS = (512, 128, 64, 32)
FC_DROPOUT = (0.7, 0.5, 0.3, 0.2)
POOL_DROPOUT = 0.2
# separable blocks whose pool is followed by dropout (0-based)
POOL_DROPOUT_BLOCKS = (1, 2, 3, 4, 5)
GRADCAM_LAYER = "sep7_2_relu"


@dataclass(frozen=True)
class LayerSpec:
    """One row of the architecture table."""

    name: str
    kind: str
    filters: int = 0
    kernel: int = 0
    dropout: float = 0.0


@dataclass(frozen=True)
class ModelSpec:
    num_classes: int
    input_size: int = INPUT_SIZE

    def __post_init__(self):
        if self.num_classes not in (2, 3):
            raise ValueError(f"num_classes must be 2 or 3, got {self.num_classes}")

    @property
    def rows(self):
        rows = [
            LayerSpec("Input", "input"),
            LayerSpec("Conv2D x 2", "conv_x2", CONV_FILTERS, 3),
            LayerSpec("Maxpool2D", "pool"),
        ]
        for i, f in enumerate(SEP_FILTERS):
            drop = POOL_DROPOUT if i in POOL_DROPOUT_BLOCKS else 0.0
            rows += [
                LayerSpec("Separable Conv2D x 2", "sepconv_x2", f, 3),
                LayerSpec("Batch Norm.", "batchnorm"),
                LayerSpec("Maxpool2D", "pool", dropout=drop),
            ]
        for i, (units, drop) in enumerate(zip(FC_UNITS, FC_DROPOUT), start=1):
            rows.append(LayerSpec(f"FC{i} (ReLU)", "dense_relu", units, dropout=drop))
        rows.append(LayerSpec("FC5 (Softmax)", "dense_softmax", self.num_classes))
        return tuple(rows)


class CovidLite(Sequential):
    """Sequential network plus the table metadata needed for reporting.

    ``forward`` returns logits; :meth:`predict_proba` applies the softmax head.
    """

    def __init__(self, spec, seed, layers, row_layers):
        super().__init__(layers)
        self.spec = spec
        self.seed = seed
        self.row_layers = row_layers
        self.gradcam_layer = GRADCAM_LAYER

    @property
    def num_classes(self):
        return self.spec.num_classes

    def seed_dropout(self, rng):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def predict_proba(self, x, batch_size=8):
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        out = [
            softmax(self.forward(x[i : i + batch_size], training=False))
            for i in range(0, len(x), batch_size)
        ]
        return np.concatenate(out, axis=0)


def build_covidlite(num_classes=3, seed=0):
    """Instantiate the network with Glorot-uniform weights drawn from ``seed``."""
    spec = ModelSpec(num_classes)
    rng = np.random.default_rng(seed)
    layers = []
    row_layers = []
    channels = 3
    features = 0
    block = 0
    fc = 0
    for row in spec.rows:
        names = []

        def add(layer):
            layers.append(layer)
            names.append(layer.name)

        if row.kind == "conv_x2":
            for j in (1, 2):
                add(Conv2D(channels, row.filters, row.kernel, name=f"conv1_{j}", rng=rng))
                add(ReLU(name=f"conv1_{j}_relu"))
                channels = row.filters
            block = 1
        elif row.kind == "sepconv_x2":
            block += 1
            for j in (1, 2):
                add(SeparableConv2D(channels, row.filters, row.kernel, name=f"sep{block}_{j}", rng=rng))
                add(ReLU(name=f"sep{block}_{j}_relu"))
                channels = row.filters
        elif row.kind == "batchnorm":
            add(BatchNorm(channels, name=f"bn{block}"))
        elif row.kind == "pool":
            add(MaxPool2D(name=f"pool{block}"))
            if row.dropout:
                add(Dropout(row.dropout, name=f"pool{block}_drop"))
        elif row.kind in ("dense_relu", "dense_softmax"):
            if not features:
                add(Flatten(name="flatten"))
                features = channels  # spatial dims are 1x1 after the last pool
            fc += 1
            add(Dense(features, row.filters, name=f"fc{fc}", rng=rng))
            features = row.filters
            if row.kind == "dense_relu":
                add(ReLU(name=f"fc{fc}_relu"))
                add(Dropout(row.dropout, name=f"fc{fc}_drop"))
        row_layers.append(tuple(names))
    return CovidLite(spec, seed, layers, tuple(row_layers))


@dataclass(frozen=True)
class ParamRow:
    name: str
    output_shape: tuple
    params: int
    trainable: int


def param_table(model):
    """Per-row output shape and parameter counts, bias included."""
    shape = (model.spec.input_size, model.spec.input_size, 3)
    rows = []
    for spec_row, names in zip(model.spec.rows, model.row_layers):
        total = trainable = 0
        for name in names:
            layer = model.layers[model.index(name)]
            shape = layer.output_shape(shape)
            total += layer.num_params()
            trainable += layer.num_trainable()
        rows.append(ParamRow(spec_row.name, shape, total, trainable))
    return rows


def param_totals(model):
    """``(total, trainable, non_trainable)`` over the whole network."""
    rows = param_table(model)
    total = sum(r.params for r in rows)
    trainable = sum(r.trainable for r in rows)
    return total, trainable, total - trainable


def format_param_table(model):
    lines = [f"{'Layer':<22}{'Output shape':<18}{'Params':>10}{'Trainable':>11}"]
    for row in param_table(model):
        shape = "(" + ",".join(str(d) for d in row.output_shape) + ")"
        lines.append(f"{row.name:<22}{shape:<18}{row.params:>10,}{row.trainable:>11,}")
    total, trainable, frozen = param_totals(model)
    lines.append(f"Total params: {total:,}")
    lines.append(f"Total trainable: {trainable:,}")
    lines.append(f"Non-trainable: {frozen:,}")
    return "\n".join(lines)
