"""Saliency and Grad-CAM heatmaps blended over an input image.

Uses an untrained network unless a weight file is given, so the maps only
illustrate the mechanics.

Run: python3 demos/06_explain.py [weights.cvl] [out_dir]
"""

import sys
from pathlib import Path

from covidlite.imaging import PreprocessConfig, encode_image, preprocess
from covidlite.interpret import grad_cam, overlay, saliency_map
from covidlite.model import build_covidlite
from covidlite.synthetic import toy_images
from covidlite.weights import load_weights

model = load_weights(sys.argv[1]) if len(sys.argv) > 1 else build_covidlite(3, seed=0)
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

images, labels = toy_images(n_per_class=1, seed=0)
img = images[0]
x = preprocess(img, PreprocessConfig(apply_white_balance=False, apply_clahe=False))
probs = model.predict_proba(x)[0]
c = int(probs.argmax())
print("probabilities", probs.round(3), "-> class", c)

sal = saliency_map(model, x, c)
cam = grad_cam(model, x, c)
print("saliency", sal.values.shape, "grad-cam raw", cam.raw.shape, "min", float(cam.raw.min()))
encode_image(overlay(img, sal), out / "saliency.png")
encode_image(overlay(img, cam), out / "gradcam.png")
print("wrote", out / "saliency.png", out / "gradcam.png")
