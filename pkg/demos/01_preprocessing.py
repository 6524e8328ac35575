"""Preprocessing walk-through: white balance, CLAHE, then resize to 224x224.

Run: python3 demos/01_preprocessing.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from covidlite.imaging import PreprocessConfig, clahe, encode_image, preprocess, white_balance

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# %% a washed-out synthetic "radiograph": a bright disc on a narrow-range background
rng = np.random.default_rng(0)
yy, xx = np.mgrid[:300, :260]
disc = ((yy - 150) ** 2 + (xx - 130) ** 2 < 90**2) * 40
img = (90 + disc + rng.normal(0, 6, (300, 260))).clip(0, 255).astype(np.uint8)[:, :, None]
print("input range:", img.min(), img.max())

# %% percentile stretch spreads each channel over the full 0..255 range
wb = white_balance(img, percentile=0.0005)
print("after white balance:", wb.min(), wb.max())

# %% CLAHE equalizes contrast locally on an 8x8 tile grid with clip limit 2
eq = clahe(wb, tiles=8, clip=2.0)
print("after CLAHE, std %.1f -> %.1f" % (wb.std(), eq.std()))

# %% the full pipeline ends in float32 [0, 1] tensors of shape (224, 224, 3)
x = preprocess(img, PreprocessConfig())
print("model input:", x.shape, x.dtype, float(x.min()), float(x.max()))

for name, arr in (("input", img), ("white_balance", wb), ("clahe", eq)):
    encode_image(arr, out / f"{name}.png")
print("wrote", sorted(p.name for p in out.glob("*.png")))
