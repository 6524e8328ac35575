"""Layers, separable-conv savings and finite-difference gradient checks.

Run: python3 demos/02_layers_and_gradients.py
"""

import numpy as np

from covidlite.nncore import (
    BatchNorm,
    Conv2D,
    Dense,
    MaxPool2D,
    SeparableConv2D,
    SoftmaxCrossEntropy,
    dsc_param_count,
    format_reduction,
    gradient_check,
)

# %% a depthwise separable conv replaces one K x K x M x N kernel with
# a K x K x M depthwise kernel plus an M x N pointwise kernel
for m, n, k in ((48, 96, 3), (256, 512, 3)):
    regular, separable, pct = dsc_param_count(m, n, k)
    print(f"M={m} N={n} K={k}: {regular:,} vs {separable:,} weights, {format_reduction(pct)} fewer")

# %% every primitive's backward pass agrees with central differences
rng = np.random.default_rng(0)
cases = [
    ("conv", Conv2D(2, 3, rng=rng), rng.standard_normal((2, 5, 5, 2))),
    ("separable conv", SeparableConv2D(2, 3, rng=rng), rng.standard_normal((1, 5, 4, 2))),
    ("batchnorm", BatchNorm(3), rng.standard_normal((4, 3, 3, 3))),
    ("dense", Dense(6, 4, rng=rng), rng.standard_normal((3, 6))),
    ("maxpool", MaxPool2D(), rng.permutation(64).reshape(1, 4, 4, 4) * 0.1),
    ("softmax+CE", SoftmaxCrossEntropy(np.array([0, 2, 1])), rng.standard_normal((3, 4))),
]
for name, layer, x in cases:
    print(f"{name:15s} max relative error {gradient_check(layer, x):.2e}")
