"""Weight-file round trip and the integrity checks on load.

Run: python3 demos/07_weights.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from covidlite.model import build_covidlite
from covidlite.weights import WeightFileError, load_weights, save_weights

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

model = build_covidlite(2, seed=3)
path = save_weights(model, out / "model.cvl", meta={"seed": 3})
print(path, f"{path.stat().st_size / 2**20:.2f} MiB")

loaded = load_weights(path)
same = all(np.array_equal(a, loaded.state_dict()[k]) for k, a in model.state_dict().items())
print("round trip exact:", same, "meta:", loaded.meta)

# %% a flipped byte or a truncated file is rejected with a typed error
data = bytearray(path.read_bytes())
for name, bad in (("flipped", data[:100] + bytes([data[100] ^ 1]) + data[101:]), ("truncated", data[:-10])):
    (out / "bad.cvl").write_bytes(bytes(bad))
    try:
        load_weights(out / "bad.cvl")
    except WeightFileError as err:
        print(f"{name}: {type(err).__name__}: {err}")
