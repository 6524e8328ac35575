"""Parameter table for the 2- and 3-class networks.

Run: python3 demos/03_architecture.py
"""

from covidlite.model import build_covidlite, format_param_table, param_totals

for k in (2, 3):
    model = build_covidlite(num_classes=k, seed=0)
    print(format_param_table(model))
    total, trainable, non_trainable = param_totals(model)
    # float32 weights: 4 bytes per value
    print(f"{k} classes: {trainable:,} trainable, {non_trainable:,} non-trainable, "
          f"~{total * 4 / 2**20:.2f} MiB of float32\n")
