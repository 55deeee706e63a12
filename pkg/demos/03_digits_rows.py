# coding: utf-8
# # Handwritten digits, one row per time step
#
# scikit-learn's 8x8 digits are upsampled to 28x28 and written as IDX files,
# the same binary format used by the usual 28x28 digit benchmarks. Each
# image is then read back as a sequence of 28 rows for a unidirectional
# LSTM.

# %%
import tempfile

import numpy as np

from gatekeeper import ExperimentConfig, Rng
from gatekeeper.data import read_idx_images, write_digits_idx
from gatekeeper.experiment import prepare, train
from gatekeeper.signature import generate_key
from gatekeeper.training import evaluate
from gatekeeper.verification import gate_histogram

images, labels = write_digits_idx(tempfile.mkdtemp())
raw = read_idx_images(images)
print(raw.shape, raw.dtype, "pixel range", raw.min(), raw.max())

# %% [markdown]
# A quick look at one digit, thresholded to ASCII.

# %%
for row in raw[0][::2]:
    print("".join("#" if v > 128 else "." for v in row[::2]))

# %%
cfg = ExperimentConfig.from_dict({
    "dataset": {"kind": "idx_rows", "images": images, "labels": labels},
    "model": {"cell": "lstm", "bidirectional": False, "hidden": 64},
    "protection": {"key": {"l": 2}, "signature": {"text": "priv"}, "trigger_size": 25},
    "training": {"epochs": 15, "batch": 16, "trigger": 2, "lr": 3e-3, "patience": 15},
})
prep = prepare(cfg)
out = train(cfg, prep=prep)
print({k: round(v, 4) if isinstance(v, float) else v for k, v in out.metrics.items()})

# %% [markdown]
# ## Where the gate sits
#
# Histogram of every gate value over a 28-step run, for the genuine key and
# for a random stranger key.

# %%
stranger = generate_key("random", Rng(99), 1, 2, 28)
for label, k in (("genuine", out.key), ("stranger", stranger)):
    counts, edges, _ = gate_histogram(out.model, k, 28, bins=10)
    bars = " ".join(f"{c:4d}" for c in counts)
    print(f"{label:>8}: {bars}")
print("bins:", np.round(edges, 1).tolist())
print("test accuracy with stranger key:", round(evaluate(out.model, prep.test, stranger), 3))
