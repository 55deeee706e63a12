"""Desk-scale experiment fixtures shared by the acceptance suite.

Two tasks:

* ``digits``: handwritten digits as 28-step row sequences (scikit-learn's
  8x8 digits upsampled to 28x28 and written as IDX files), unidirectional
  LSTM with N=64.
* ``text``: synthetic 6-class token task, bidirectional GRU with N=32.

Each trained artefact is computed once per process and cached.
"""
from __future__ import annotations

import functools
import tempfile
import time

from gatekeeper.config import ExperimentConfig
from gatekeeper.data import write_digits_idx
from gatekeeper.experiment import prepare, train

TASKS = ("digits", "text")


@functools.lru_cache(maxsize=None)
def digits_files():
    return write_digits_idx(tempfile.mkdtemp(prefix="gk-digits-"))


def desk_config(task: str) -> ExperimentConfig:
    if task == "digits":
        images, labels = digits_files()
        return ExperimentConfig.from_dict({
            "dataset": {"kind": "idx_rows", "images": images, "labels": labels},
            "model": {"cell": "lstm", "bidirectional": False, "hidden": 64},
            "protection": {"scheme": "public", "key": {"method": "random", "K": 1, "l": 2},
                           "signature": {"text": "priv"}, "trigger_size": 25},
            # ~1.2k training rows: 40 epochs is about the sample budget of 3 epochs on 10k
            "training": {"epochs": 40, "batch": 16, "trigger": 2, "lr": 3e-3, "patience": 40},
        })
    if task == "text":
        return ExperimentConfig.from_dict({
            "dataset": {"kind": "synthetic_text", "size": 3000, "vocab_size": 10, "num_classes": 6,
                        "length_min": 20, "length_max": 30},
            "model": {"cell": "gru", "bidirectional": True, "hidden": 32, "embed": 32},
            "protection": {"scheme": "public", "key": {"method": "random", "K": 1, "l": 2},
                           "signature": {"text": "priv"}, "trigger_size": 50},
            "training": {"epochs": 20, "batch": 16, "trigger": 2, "lr": 3e-3},
        })
    raise ValueError(task)


@functools.lru_cache(maxsize=None)
def prepared(task: str):
    return prepare(desk_config(task))


@functools.lru_cache(maxsize=None)
def trained(task: str, scheme: str):
    """``(TrainOutcome, seconds)`` for one task and scheme."""
    t0 = time.perf_counter()
    out = train(desk_config(task), scheme=scheme, prep=prepared(task))
    return out, time.perf_counter() - t0
