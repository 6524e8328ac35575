"""Gradient explanations: input saliency, Grad-CAM and colour overlays."""

from dataclasses import dataclass

import numpy as np

from .imaging import as_image, resize_bilinear
from .nncore import Tape

METHODS = ("saliency", "gradcam")

# blue -> cyan -> yellow -> red, evenly spaced
RAMP_STOPS = np.array([0.0, 1 / 3, 2 / 3, 1.0])
RAMP_COLORS = np.array(
    [[0, 0, 255], [0, 255, 255], [255, 255, 0], [255, 0, 0]], dtype=np.float64
)


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray
    class_id: int
    method: str
    raw: np.ndarray = None  # un-normalized map at its native resolution

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("heatmap values must be finite")


def normalize_map(m):
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def _num_outputs(model, x):
    return model.forward(x[None], training=False).shape[-1]


def _class_grad(logits, class_id):
    k = logits.shape[-1]
    if not 0 <= class_id < k:
        raise ValueError(f"class id {class_id} outside [0, {k})")
    g = np.zeros_like(logits)
    g[..., class_id] = 1
    return g


def saliency_map(model, image, class_id):
    """``max_c |d logit[class_id] / d image[..., c]|`` normalized to [0, 1]."""
    x = np.asarray(image)
    if x.ndim != 3:
        raise ValueError(f"expected one (H, W, C) image, got shape {x.shape}")
    tape = Tape()
    logits = model.forward(x[None], tape=tape, training=False)
    dx = tape.backward(_class_grad(logits, class_id))[0]
    raw = np.abs(dx).max(axis=-1).astype(np.float64)
    return Heatmap(normalize_map(raw), int(class_id), "saliency", raw)


def grad_cam(model, image, class_id, layer=None, size=None):
    """Class-weighted feature-map activation at ``layer``, upsampled and normalized.

    Channel weights are the spatial mean of the class-logit gradient; the map
    is the ReLU of the weighted channel sum. ``layer`` defaults to the
    model's ``gradcam_layer``; ``size`` defaults to the input resolution.
    """
    x = np.asarray(image)
    if x.ndim != 3:
        raise ValueError(f"expected one (H, W, C) image, got shape {x.shape}")
    layer = layer or model.gradcam_layer
    split = model.index(layer) + 1
    acts = model.forward(x[None], training=False, stop=split)
    tape = Tape()
    logits = model.forward(acts, tape=tape, training=False, start=split)
    grads = tape.backward(_class_grad(logits, class_id))
    a = acts[0].astype(np.float64)
    alpha = grads[0].astype(np.float64).mean(axis=(0, 1))
    raw = np.maximum((a * alpha).sum(axis=-1), 0.0)
    h, w = size or x.shape[:2]
    up = resize_bilinear(raw[:, :, None], h, w)[:, :, 0]
    return Heatmap(normalize_map(np.maximum(up, 0.0)), int(class_id), "gradcam", raw)


def colorize(values):
    """Map [0, 1] intensities to float RGB via the fixed blue-to-red ramp."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.stack([np.interp(v, RAMP_STOPS, RAMP_COLORS[:, c]) for c in range(3)], axis=-1)


def to_uint8(x):
    """[0, 1] float image to uint8, rounding half up."""
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) * 255 + 0.5), 0, 255).astype(np.uint8)


def overlay(img, heatmap, alpha=0.4):
    """Blend ``(1 - alpha) * img + alpha * colour`` and round half up.

    Grayscale input is replicated to RGB; the heatmap is resampled to the
    image size when they differ.
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    img = as_image(img)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    h, w = img.shape[:2]
    if values.shape != (h, w):
        values = resize_bilinear(values[:, :, None].astype(np.float64), h, w)[:, :, 0]
    color = colorize(values)
    out = (1 - alpha) * img.astype(np.float64) + alpha * color
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
