"""Lightweight depthwise-separable CNN for chest X-ray classification.

Everything from the convolution kernels to the optimizer is implemented on
numpy (with numba loops for the hot paths).
"""

from .imaging import PreprocessConfig, preprocess, read_image
from .interpret import grad_cam, overlay, saliency_map
from .model import build_covidlite, format_param_table, param_totals
from .training import TrainConfig, cross_validate, fit, stratified_split
from .weights import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "PreprocessConfig",
    "TrainConfig",
    "build_covidlite",
    "cross_validate",
    "fit",
    "format_param_table",
    "grad_cam",
    "load_weights",
    "overlay",
    "param_totals",
    "preprocess",
    "read_image",
    "saliency_map",
    "save_weights",
    "stratified_split",
]
