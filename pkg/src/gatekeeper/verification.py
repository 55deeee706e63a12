"""Ownership verification: signature read-out, trigger-set p-values, key studies, secrecy."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np

from .model import SequenceModel
from .numeric import Rng
from .signature import Key, Signature, decode_signature, generate_key
from .training import TriggerSet, evaluate


class MissingKeyError(ValueError):
    pass


class ArchitectureMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# White box
# ---------------------------------------------------------------------------

def verify_whitebox(model: SequenceModel, reference: Signature, key: Key | None):
    """Decode the signature carried by the key's first hidden state.

    Returns ``(bit_accuracy, decoded_text)``.
    """
    if key is None:
        raise MissingKeyError(
            "white-box verification needs the owner's key: run the key's first step through the "
            "suspect weights, so both the weights and the genuine key must be available")
    h0, _ = model.key_first_hidden(key)
    text, acc = decode_signature(h0, reference.n_bits // 8, reference)
    return acc, text


# ---------------------------------------------------------------------------
# Black box
# ---------------------------------------------------------------------------

def binomial_tail(matches: int, n: int, n_classes: int) -> float:
    """``P(X >= matches)`` for ``X ~ Binomial(n, 1/C)``, summed in exact integer arithmetic."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if matches <= 0:
        return 1.0
    if matches > n:
        return 0.0
    C = n_classes
    num = sum(comb(n, k) * (C - 1) ** (n - k) for k in range(matches, n + 1))
    return num / C ** n


def predictions_oracle(model: SequenceModel, key=None):
    """Query-only view of a model: inputs -> predicted labels."""
    return lambda x: model.predict(x, key)


def verify_blackbox_pvalue(oracle, trigger: TriggerSet, n_classes: int):
    """Count trigger matches through ``oracle`` and return ``(matches, p_value)``.

    ``oracle`` maps a batch of inputs to labels (or to logits, which are
    argmax-ed).
    """
    if len(trigger) == 0:
        raise ValueError("black-box verification needs a non-empty trigger set")
    out = np.asarray(oracle(trigger.inputs))
    pred = out.argmax(axis=1) if out.ndim == 2 else out
    matches = int(np.sum(pred == trigger.assigned_labels))
    return matches, binomial_tail(matches, len(trigger), n_classes)


# ---------------------------------------------------------------------------
# Key study
# ---------------------------------------------------------------------------

def make_counterfeit(genuine: Key, rng: Rng, corpus=None, embedding=None) -> Key:
    """Draw a key with the genuine key's method and dimensions but fresh randomness."""
    K, l, d = genuine.shape
    return generate_key(genuine.method, rng, K, l, d, embedding=embedding, corpus=corpus)


@dataclass
class KeyStudy:
    genuine_acc: float
    counterfeit_accs: list = field(default_factory=list)
    genuine_trigger_acc: float | None = None
    counterfeit_trigger_accs: list = field(default_factory=list)

    @staticmethod
    def _stats(vals):
        if not vals:
            return {"count": 0, "mean": None, "min": None, "max": None}
        return {"count": len(vals), "mean": float(np.mean(vals)), "min": float(np.min(vals)),
                "max": float(np.max(vals))}

    def summary(self) -> dict:
        out = {"genuine_acc": self.genuine_acc, "counterfeit": self._stats(self.counterfeit_accs)}
        if self.genuine_trigger_acc is not None:
            out["genuine_trigger_acc"] = self.genuine_trigger_acc
            out["counterfeit_trigger"] = self._stats(self.counterfeit_trigger_accs)
        return out


def counterfeit_study(model: SequenceModel, genuine: Key, n_counterfeit: int, rng: Rng, dataset,
                      trigger: TriggerSet | None = None, corpus=None, embedding=None) -> KeyStudy:
    """Accuracy under the genuine key and under ``n_counterfeit`` independently drawn keys."""
    study = KeyStudy(evaluate(model, dataset, genuine))
    if trigger is not None and len(trigger):
        study.genuine_trigger_acc = evaluate(model, trigger, genuine)
    for _ in range(n_counterfeit):
        fake = make_counterfeit(genuine, rng.spawn(), corpus, embedding)
        study.counterfeit_accs.append(evaluate(model, dataset, fake))
        if study.genuine_trigger_acc is not None:
            study.counterfeit_trigger_accs.append(evaluate(model, trigger, fake))
    return study


# ---------------------------------------------------------------------------
# Gate activations
# ---------------------------------------------------------------------------

GATE_BINS = 50


def gate_histogram(model: SequenceModel, key, T: int, bins: int = GATE_BINS):
    """Histogram of every ``gk_t`` entry over a length-``T`` run, ``bins`` bins over [0, 1].

    ``gk_t`` depends only on the key and the weights, so each (direction,
    step, unit) contributes one value. Returns ``(counts, edges, density)``.
    """
    vals = model.gate_trace(key, T).ravel()
    counts, edges = np.histogram(vals, bins=bins, range=(0.0, 1.0))
    density = counts / (counts.sum() * np.diff(edges)) if counts.sum() else np.zeros(bins)
    return counts, edges, density


def high_gate_mass(model: SequenceModel, key, T: int, threshold: float = 0.9) -> float:
    """Fraction of gate values in [threshold, 1]."""
    vals = model.gate_trace(key, T).ravel()
    return float(np.mean(vals >= threshold))


def gate_comparison_rows(model: SequenceModel, genuine: Key, counterfeits, T: int, bins: int = GATE_BINS):
    _, edges, dg = gate_histogram(model, genuine, T, bins)
    fake_vals = np.concatenate([model.gate_trace(k, T).ravel() for k in counterfeits])
    fc, _ = np.histogram(fake_vals, bins=edges)
    dc = fc / (fc.sum() * np.diff(edges)) if fc.sum() else np.zeros(bins)
    return [{"bin_left": float(edges[i]), "bin_right": float(edges[i + 1]),
             "density_genuine": float(dg[i]), "density_counterfeit": float(dc[i])} for i in range(bins)]


def write_rows_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in columns})


# ---------------------------------------------------------------------------
# Secrecy
# ---------------------------------------------------------------------------

def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


@dataclass
class SecrecyReport:
    layers: dict
    threshold: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def secrecy_check(protected: SequenceModel, baseline: SequenceModel, threshold: float = 0.1,
                  bins: int = 50) -> SecrecyReport:
    """Per-layer KS statistic between the recurrent weight distributions of two models."""
    if protected.config() | {"seed": None} != baseline.config() | {"seed": None}:
        raise ArchitectureMismatchError("protected and baseline models differ in architecture")
    layers = {}
    for name in sorted(protected.params):
        if not name.startswith("rnn.") or protected.params[name].value.ndim < 2:
            continue
        a = protected.params[name].value.ravel()
        b = baseline.params[name].value.ravel()
        lo, hi = float(min(a.min(), b.min())), float(max(a.max(), b.max()))
        if hi <= lo:
            hi = lo + 1.0
        ha, edges = np.histogram(a, bins=bins, range=(lo, hi))
        hb, _ = np.histogram(b, bins=edges)
        layers[name] = {"ks": ks_statistic(a, b), "edges": edges.tolist(),
                        "hist_protected": ha.tolist(), "hist_baseline": hb.tolist()}
    passed = all(v["ks"] < threshold for v in layers.values())
    return SecrecyReport(layers, threshold, passed)


@dataclass
class VerificationReport:
    whitebox: dict | None = None
    blackbox: dict | None = None
    keys: dict | None = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
