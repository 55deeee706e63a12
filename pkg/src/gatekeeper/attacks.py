"""Removal and ambiguity attacks on a protected model.

Every attack works on a clone; the victim model is never modified.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .model import SequenceModel
from .numeric import Adam, Rng
from .signature import Key, Signature, sign_accuracy, sign_loss
from .training import TriggerSet, evaluate, train_baseline_step, train_public_step

SWEEP_COLUMNS = ("parameter", "test_acc", "trigger_acc", "sign_acc")


@dataclass
class AttackReport:
    kind: str
    params: dict
    pre_test_acc: float
    post_test_acc: float
    pre_trigger_acc: float | None
    post_trigger_acc: float | None
    pre_sign_acc: float
    post_sign_acc: float
    steps: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def measure(model: SequenceModel, key: Key, sig: Signature, test: Dataset, trigger: TriggerSet | None = None):
    """``(test_acc, trigger_acc, sign_acc)`` with the genuine key."""
    test_acc = evaluate(model, test, key)
    trig_acc = evaluate(model, trigger, key) if trigger is not None and len(trigger) else None
    return test_acc, trig_acc, sign_accuracy(model.key_first_hidden(key)[0], sig)


def weight_names(model: SequenceModel) -> list:
    """Names of all weight tensors (matrices); biases are excluded."""
    return sorted(n for n, p in model.params.items() if p.value.ndim >= 2)


def prune_global_l1(model: SequenceModel, rate: float) -> SequenceModel:
    """Zero the ``rate`` fraction of smallest-magnitude weights, pooled over all weight tensors.

    Ties are broken by parameter name, then flat index.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"pruning rate must lie in [0, 1], got {rate}")
    out = model.clone()
    names = weight_names(out)
    mags, name_rank, flat_idx = [], [], []
    for r, n in enumerate(names):
        v = out.params[n].value.ravel()
        mags.append(np.abs(v))
        name_rank.append(np.full(v.size, r))
        flat_idx.append(np.arange(v.size))
    mags = np.concatenate(mags)
    name_rank = np.concatenate(name_rank)
    flat_idx = np.concatenate(flat_idx)
    k = int(np.floor(rate * mags.size + 0.5))
    if k == 0:
        return out
    order = np.lexsort((flat_idx, name_rank, mags))[:k]
    for r, n in enumerate(names):
        sel = flat_idx[order[name_rank[order] == r]]
        out.params[n].value.reshape(-1)[sel] = 0.0
    return out


def _batches(train: Dataset, batch_size: int, rng: Rng):
    while True:
        perm = rng.permutation(len(train))
        for s in range(0, len(train), batch_size):
            idx = perm[s:s + batch_size]
            yield train.inputs[idx], train.labels[idx]


def finetune_attack(model: SequenceModel, dataset: Dataset, steps: int, lr: float = 1e-4,
                    batch_size: int = 16, seed: int = 0, clip_norm: float | None = 5.0) -> SequenceModel:
    """Plain task training without key, trigger set or sign loss."""
    out = model.clone()
    if steps <= 0:
        return out
    opt = Adam(out.parameters(), lr=lr, clip_norm=clip_norm)
    rng = Rng(seed)
    for _, batch in zip(range(steps), _batches(dataset, batch_size, rng)):
        train_baseline_step(out, batch, opt)
    return out


def overwrite_attack(model: SequenceModel, new_key: Key, new_sig: Signature, dataset: Dataset, steps: int,
                     lr: float = 1e-3, batch_size: int = 16, trigger: TriggerSet | None = None,
                     trigger_batch: int = 2, seed: int = 0, clip_norm: float | None = 5.0) -> SequenceModel:
    """Re-run public-scheme protection with the attacker's own key and signature."""
    out = model.clone()
    if steps <= 0:
        return out
    opt = Adam(out.parameters(), lr=lr, clip_norm=clip_norm)
    rng = Rng(seed)
    for _, batch in zip(range(steps), _batches(dataset, batch_size, rng)):
        tb = None
        if trigger is not None and len(trigger) and trigger_batch:
            ti = rng.choice(len(trigger), min(trigger_batch, len(trigger)))
            tb = (trigger.inputs[ti], trigger.assigned_labels[ti])
        train_public_step(out, new_key, new_sig, batch, tb, opt)
    return out


def flip_signs(model: SequenceModel, key: Key, sig: Signature, fraction: float, dataset: Dataset,
               max_steps: int = 200, lr: float = 1e-3, batch_size: int = 16, sign_weight: float = 1.0,
               trigger: TriggerSet | None = None, trigger_batch: int = 2, seed: int = 0,
               clip_norm: float | None = 5.0):
    """Retrain under a signature with ``fraction`` of its signs inverted.

    The attacker runs the full public objective with the corrupted signature
    and stops once the sign loss is zero or after ``max_steps`` updates.
    Returns ``(model, flipped_signature, flipped_positions, steps)``.
    """
    rng = Rng(seed)
    bad_sig, flipped = sig.flipped(fraction, rng)
    out = model.clone()
    if fraction == 0.0:
        return out, bad_sig, flipped, 0
    opt = Adam(out.parameters(), lr=lr, clip_norm=clip_norm)
    steps = 0
    for _, batch in zip(range(max_steps), _batches(dataset, batch_size, rng)):
        if sign_loss(out.key_first_hidden(key)[0], bad_sig)[0] == 0.0:
            break
        tb = None
        if trigger is not None and len(trigger) and trigger_batch:
            ti = rng.choice(len(trigger), min(trigger_batch, len(trigger)))
            tb = (trigger.inputs[ti], trigger.assigned_labels[ti])
        train_public_step(out, key, bad_sig, batch, tb, opt, sign_weight)
        steps += 1
    return out, bad_sig, flipped, steps


def report(kind: str, params: dict, before: SequenceModel, after: SequenceModel, key: Key, sig: Signature,
           test: Dataset, trigger: TriggerSet | None = None, steps: int = 0, **extra) -> AttackReport:
    pre = measure(before, key, sig, test, trigger)
    post = measure(after, key, sig, test, trigger)
    return AttackReport(kind, dict(params), pre[0], post[0], pre[1], post[1], pre[2], post[2], steps, extra)


def prune_sweep(model, rates, key, sig, test, trigger=None) -> list:
    rows = []
    for r in rates:
        t, tr, s = measure(prune_global_l1(model, r), key, sig, test, trigger)
        rows.append({"parameter": r, "test_acc": t, "trigger_acc": tr, "sign_acc": s})
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in SWEEP_COLUMNS})
