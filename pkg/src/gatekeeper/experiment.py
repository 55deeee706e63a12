"""End-to-end orchestration: data, model, key and signature from a config; runs and run directories."""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .attacks import AttackReport
from .checkpoint import Checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import (DataFormatError, Dataset, generate_synthetic_text, load_idx, load_trec_tsv,
                   split_dataset)
from .model import SequenceModel
from .numeric import Rng
from .signature import RANDOM_PATTERNS, Key, Signature, encode_signature, generate_key
from .training import (BASELINE, ConfigurationError, TrainConfig, TrainResult, TriggerSet,
                       build_trigger_set, evaluate, fit)


class DataError(Exception):
    """Input data is missing or malformed."""


class ContractError(Exception):
    """A verification result fell short of its configured contract."""


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    try:
        if d.kind == "idx_rows":
            return load_idx(d.images, d.labels, d.limit)
        if d.kind == "trec_tsv":
            ds = load_trec_tsv(d.path, max_len=d.max_len)
            return ds.take(d.limit) if d.limit else ds
        return generate_synthetic_text(Rng(d.seed), d.size, d.vocab_size, d.num_classes,
                                       (d.length_min, d.length_max), d.markers)
    except DataFormatError as exc:
        raise DataError(str(exc)) from None
    except OSError as exc:
        raise DataError(f"cannot read dataset: {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(f"dataset: {exc}") from None


@dataclass
class Prepared:
    """Splits, trigger set and the untrained model for one config."""
    cfg: ExperimentConfig
    train: Dataset
    val: Dataset
    test: Dataset
    trigger: TriggerSet
    model: SequenceModel


def prepare(cfg: ExperimentConfig, dataset: Dataset | None = None) -> Prepared:
    ds = load_dataset(cfg) if dataset is None else dataset
    splits = split_dataset(ds, Rng(cfg.dataset.seed + 1), cfg.dataset.val_fraction, cfg.dataset.test_fraction)
    t = cfg.protection.trigger_size
    if t > len(splits["train"]):
        raise ConfigurationError(f"trigger_size {t} exceeds the {len(splits['train'])}-sample training split")
    trigger, train = build_trigger_set(splits["train"], t, Rng(cfg.protection.trigger_seed))
    C = cfg.model.classes or ds.num_classes
    if C != ds.num_classes:
        raise ConfigurationError(f"model.classes={C} but the dataset has {ds.num_classes} classes")
    m = cfg.model
    if ds.is_tokens:
        vocab = len(ds.vocab) if ds.vocab is not None else int(ds.inputs.max()) + 1
        model = SequenceModel(m.cell, hidden_size=m.hidden, num_classes=C, vocab_size=vocab, embed_dim=m.embed,
                              bidirectional=m.bidirectional, seed=m.seed)
    else:
        model = SequenceModel(m.cell, input_size=ds.feature_dim, hidden_size=m.hidden, num_classes=C,
                              bidirectional=m.bidirectional, seed=m.seed)
    return Prepared(cfg, train, splits["val"], splits["test"], trigger, model)


def key_corpus(prep: Prepared):
    return prep.train.inputs


def make_key(prep: Prepared, model: SequenceModel, seed: int, method: str | None = None) -> Key:
    k = prep.cfg.protection.key
    method = method or k.method
    emb = model.params["embedding.weight"].value if model.has_embedding else None
    corpus = None if method == RANDOM_PATTERNS else key_corpus(prep)
    key = generate_key(method, Rng(seed), k.K, k.l, model.input_size, embedding=emb, corpus=corpus)
    key.seed = seed
    return key


def make_signature(cfg: ExperimentConfig, hidden: int, text: str | None = None) -> Signature:
    s = cfg.protection.signature
    return encode_signature(s.text if text is None else text, hidden, s.gamma)


def train_config(cfg: ExperimentConfig, scheme: str | None = None) -> TrainConfig:
    t = cfg.training
    scheme = scheme or cfg.protection.scheme
    return TrainConfig(scheme=scheme, epochs=t.epochs, batch_size=t.batch,
                       trigger_batch=0 if scheme == BASELINE else t.trigger, lr=t.lr, sign_weight=t.sign_weight,
                       seed=t.seed, patience=t.patience, clip_norm=t.clip_norm, restore_best=t.restore_best)


@dataclass
class TrainOutcome:
    prep: Prepared
    model: SequenceModel
    key: Key | None
    signature: Signature | None
    result: TrainResult
    metrics: dict

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.model, self.key, self.signature, self.prep.trigger, self.prep.cfg.to_dict(),
                          self.metrics)


def train(cfg: ExperimentConfig, scheme: str | None = None, dataset: Dataset | None = None,
          prep: Prepared | None = None) -> TrainOutcome:
    """Train one model per the config; ``scheme`` overrides the protection scheme."""
    prep = prep or prepare(cfg, dataset)
    scheme = scheme or cfg.protection.scheme
    model = prep.model.clone()
    key = sig = None
    if scheme != BASELINE:
        key = make_key(prep, model, cfg.protection.key.seed)
        sig = make_signature(cfg, model.hidden_size)
    tc = train_config(cfg, scheme)
    trigger = prep.trigger if scheme != BASELINE else None
    res = fit(model, prep.train, tc, key=key, sig=sig, trigger=trigger, val=prep.val)
    metrics = {"scheme": scheme, "steps": res.steps, "epochs_run": res.epochs_run, "best_epoch": res.best_epoch,
               "test_acc_no_key": evaluate(model, prep.test)}
    if key is not None:
        metrics["test_acc_key"] = evaluate(model, prep.test, key)
        metrics["trigger_acc_key"] = evaluate(model, prep.trigger, key) if len(prep.trigger) else None
    return TrainOutcome(prep, model, key, sig, res, metrics)


# ---------------------------------------------------------------------------
# Run directories and reports
# ---------------------------------------------------------------------------

def make_run_dir(root, command: str) -> str:
    """Create ``root/<UTC timestamp>-<command>``, adding a counter on collision."""
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    base = os.path.join(root, f"{stamp}-{command.replace(' ', '-')}")
    path, n = base, 1
    while True:
        try:
            os.makedirs(path)
            return path
        except FileExistsError:
            n += 1
            path = f"{base}-{n}"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        raise ValueError("reports must not contain NaN or infinite values")
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_run(run_dir, cfg: ExperimentConfig, report: dict | AttackReport):
    write_json(os.path.join(run_dir, "resolved_config.json"), cfg.to_dict())
    write_json(os.path.join(run_dir, "report.json"), report.to_dict() if hasattr(report, "to_dict") else report)


def save_outcome(run_dir, outcome: TrainOutcome, name: str = "model.ckpt") -> str:
    path = os.path.join(run_dir, name)
    c = outcome.checkpoint()
    save_checkpoint(path, c.model, c.key, c.signature, c.trigger, c.config, _clean(c.metrics))
    return path
