"""Trigger sets, public/private ownership training steps, evaluation and the fit loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .model import SequenceModel
from .numeric import Adam, Rng, softmax_cross_entropy
from .signature import Key, Signature, sign_accuracy, sign_loss

log = logging.getLogger(__name__)

PUBLIC = "public"
PRIVATE = "private"
BASELINE = "baseline"
SCHEMES = (PUBLIC, PRIVATE, BASELINE)


class ConfigurationError(ValueError):
    pass


@dataclass
class TriggerSet:
    inputs: np.ndarray
    assigned_labels: np.ndarray
    original_labels: np.ndarray
    source_index: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.assigned_labels)

    def as_dataset(self) -> Dataset:
        return Dataset(self.inputs, self.assigned_labels, self.num_classes, name="trigger", index=self.source_index)


def build_trigger_set(dataset: Dataset, t: int, rng: Rng) -> tuple[TriggerSet, Dataset]:
    """Pick ``t`` samples without replacement and relabel each to a uniformly drawn wrong class.

    Returns the trigger set and the remaining training pool.
    """
    C = dataset.num_classes
    if C < 2:
        raise ValueError("trigger labels need at least two classes")
    if t > len(dataset):
        raise ValueError(f"trigger size {t} exceeds dataset size {len(dataset)}")
    picks = rng.choice(len(dataset), t)
    original = dataset.labels[picks]
    # shift by 1..C-1 so the new label is uniform over the C-1 wrong classes
    assigned = (original + 1 + rng.integers(C - 1, t)) % C if t else original.copy()
    keep = np.setdiff1d(np.arange(len(dataset)), picks)
    trig = TriggerSet(dataset.inputs[picks], assigned.astype(np.int64), original.copy(),
                      dataset.index[picks], C)
    return trig, dataset.subset(keep)


@dataclass
class LossBreakdown:
    L_k: float = 0.0
    L_x: float = 0.0
    L_r: float = 0.0
    L_total: float = 0.0

    def as_dict(self):
        return asdict(self)


def _xy(batch):
    if batch is None:
        return None, None
    if isinstance(batch, (Dataset, TriggerSet)):
        ds = batch.as_dataset() if isinstance(batch, TriggerSet) else batch
        return ds.inputs, ds.labels
    x, y = batch
    return np.asarray(x), np.asarray(y, dtype=np.int64)


def _concat(batch, trigger_batch):
    x, y = _xy(batch)
    tx, ty = _xy(trigger_batch)
    if tx is not None and len(ty):
        x = np.concatenate([x, tx])
        y = np.concatenate([y, ty])
    return x, y


def _task_loss(model: SequenceModel, x, y, key, scale: float = 1.0) -> float:
    logits, cache = model.forward(x, key)
    loss, grad = softmax_cross_entropy(logits, y)
    if scale:
        model.backward(cache, grad * scale)
    return loss


def _sign_term(model: SequenceModel, key, sig: Signature, weight: float) -> float:
    h0, cache = model.key_first_hidden(key)
    loss, grad = sign_loss(h0, sig)
    if weight:
        model.key_first_hidden_backward(cache, grad * weight)
    return weight * loss


def protected_objective(model: SequenceModel, key, sig: Signature, x, y, sign_weight: float = 1.0,
                        with_plain_branch: bool = True) -> LossBreakdown:
    """Accumulate gradients of ``L_k (+ L_x) + L_r`` on one concatenated batch.

    Gradients are added to the parameters' ``grad`` buffers; nothing is
    zeroed or stepped here.
    """
    if key is None:
        raise ConfigurationError("protected training needs a key")
    if sig is None:
        raise ConfigurationError("protected training needs a signature")
    out = LossBreakdown()
    enabled = model.gatekeeper_enabled
    try:
        model.gatekeeper_enabled = True
        out.L_k = _task_loss(model, x, y, key)
        if with_plain_branch:
            model.gatekeeper_enabled = False
            out.L_x = _task_loss(model, x, y, None)
    finally:
        model.gatekeeper_enabled = enabled
    out.L_r = _sign_term(model, key, sig, sign_weight)
    out.L_total = out.L_k + out.L_x + out.L_r
    return out


def _protected_step(model, key, sig, batch, trigger_batch, optimizer, sign_weight, with_plain_branch):
    x, y = _concat(batch, trigger_batch)
    optimizer.zero_grad()
    out = protected_objective(model, key, sig, x, y, sign_weight, with_plain_branch)
    optimizer.step()
    return out


def train_public_step(model, key, sig, batch, trigger_batch, optimizer, sign_weight: float = 1.0) -> LossBreakdown:
    """One update on ``L_k + L_x + L_r``: with key, without Gatekeeper, and the sign loss."""
    return _protected_step(model, key, sig, batch, trigger_batch, optimizer, sign_weight, True)


def train_private_step(model, key, sig, batch, trigger_batch, optimizer, sign_weight: float = 1.0) -> LossBreakdown:
    """Like the public step without the Gatekeeper-disabled branch: ``L_k + L_r``."""
    return _protected_step(model, key, sig, batch, trigger_batch, optimizer, sign_weight, False)


def train_baseline_step(model, batch, optimizer, trigger_batch=None) -> LossBreakdown:
    """Plain task training with the Gatekeeper bypassed."""
    x, y = _concat(batch, trigger_batch)
    optimizer.zero_grad()
    enabled = model.gatekeeper_enabled
    model.gatekeeper_enabled = False
    try:
        loss = _task_loss(model, x, y, None)
    finally:
        model.gatekeeper_enabled = enabled
    optimizer.step()
    return LossBreakdown(L_x=loss, L_total=loss)


def evaluate(model: SequenceModel, dataset, key=None, batch_size: int = 256) -> float:
    """Argmax accuracy in [0, 1]; ``key=None`` runs without the Gatekeeper."""
    x, y = _xy(dataset)
    if len(y) == 0:
        return 0.0
    return float(np.mean(model.predict(x, key, batch_size) == y))


@dataclass
class TrainConfig:
    scheme: str = PUBLIC
    epochs: int = 3
    batch_size: int = 32
    trigger_batch: int = 4
    lr: float = 1e-3
    sign_weight: float = 1.0
    seed: int = 0
    patience: int = 5
    clip_norm: float | None = 5.0
    max_steps: int | None = None
    restore_best: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.batch_size <= 0 or self.trigger_batch < 0:
            raise ConfigurationError("batch sizes must be positive")
        if self.trigger_batch > self.batch_size:
            raise ConfigurationError("trigger batch n must not exceed batch size m")


@dataclass
class TrainResult:
    steps: int
    epochs_run: int
    best_epoch: int
    history: list = field(default_factory=list)


def fit(model: SequenceModel, train: Dataset, cfg: TrainConfig, key: Key | None = None,
        sig: Signature | None = None, trigger: TriggerSet | None = None, val: Dataset | None = None,
        optimizer: Adam | None = None) -> TrainResult:
    """Epoch loop with early stopping on validation accuracy.

    The validation metric uses the genuine key for protected schemes and,
    when a trigger set is trained, adds trigger accuracy. When that score
    has not improved for ``patience`` epochs training
    stops and, with ``restore_best``, the best-scoring epoch's weights are
    restored.
    """
    rng = Rng(cfg.seed)
    if optimizer is None:
        optimizer = Adam(model.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    protected = cfg.scheme in (PUBLIC, PRIVATE)
    if protected and (key is None or sig is None):
        raise ConfigurationError(f"{cfg.scheme} scheme needs a key and a signature")
    use_trigger = trigger is not None and len(trigger) > 0 and cfg.trigger_batch > 0
    eval_key = key if protected else None

    history = []
    best_acc, best_epoch, best_state, bad = -1.0, 0, None, 0
    steps = 0
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(train))
        totals = np.zeros(4)
        n_batches = 0
        for s in range(0, len(train), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            batch = (train.inputs[idx], train.labels[idx])
            tb = None
            if use_trigger:
                ti = rng.choice(len(trigger), min(cfg.trigger_batch, len(trigger)))
                tb = (trigger.inputs[ti], trigger.assigned_labels[ti])
            if cfg.scheme == PUBLIC:
                lb = train_public_step(model, key, sig, batch, tb, optimizer, cfg.sign_weight)
            elif cfg.scheme == PRIVATE:
                lb = train_private_step(model, key, sig, batch, tb, optimizer, cfg.sign_weight)
            else:
                lb = train_baseline_step(model, batch, optimizer, tb)
            totals += (lb.L_k, lb.L_x, lb.L_r, lb.L_total)
            n_batches += 1
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
        rec = dict(zip(("L_k", "L_x", "L_r", "L_total"), (totals / max(n_batches, 1)).tolist()))
        rec["epoch"] = epoch
        rec["steps"] = steps
        if val is not None and len(val):
            rec["val_acc"] = evaluate(model, val, eval_key)
        if protected:
            rec["sign_acc"] = sign_accuracy(model.key_first_hidden(key)[0], sig)
        history.append(rec)
        log.info("epoch %d %s", epoch, rec)
        if use_trigger:
            rec["trigger_acc"] = evaluate(model, trigger, eval_key)
        if val is not None and len(val):
            # the trigger set is part of what protected training must fit
            score = rec["val_acc"] + rec.get("trigger_acc", 0.0)
            if score > best_acc:
                best_acc, best_epoch, best_state, bad = score, epoch, model.state_dict(), 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    if cfg.restore_best and best_state is not None and best_epoch != epoch:
        model.load_state_dict(best_state)
    return TrainResult(steps, epoch, best_epoch if best_state is not None else epoch, history)
