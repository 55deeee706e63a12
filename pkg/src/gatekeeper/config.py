"""Experiment configuration: a JSON document with fixed sections and materialised defaults."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .signature import KEY_METHODS
from .training import SCHEMES, ConfigurationError

DATASET_KINDS = ("idx_rows", "trec_tsv", "synthetic_text")


@dataclass
class DatasetConfig:
    kind: str = "synthetic_text"
    images: str | None = None
    labels: str | None = None
    path: str | None = None
    limit: int | None = None
    max_len: int = 30
    size: int = 3000
    vocab_size: int = 10
    num_classes: int = 6
    length_min: int = 20
    length_max: int = 30
    markers: bool = True
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def check(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigurationError(f"dataset.kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "idx_rows" and not (self.images and self.labels):
            raise ConfigurationError("dataset.images and dataset.labels are required for idx_rows")
        if self.kind == "trec_tsv" and not self.path:
            raise ConfigurationError("dataset.path is required for trec_tsv")
        if not 0 <= self.val_fraction + self.test_fraction < 1:
            raise ConfigurationError("val_fraction + test_fraction must lie in [0, 1)")
        if self.length_min < 1 or self.length_max < self.length_min:
            raise ConfigurationError("need 1 <= length_min <= length_max")


@dataclass
class ModelConfig:
    cell: str = "gru"
    bidirectional: bool = True
    hidden: int = 32
    embed: int = 32
    classes: int | None = None
    seed: int = 3

    def check(self):
        if self.cell not in ("lstm", "gru"):
            raise ConfigurationError(f"model.cell must be lstm or gru, got {self.cell!r}")
        if self.hidden < 1 or self.embed < 1:
            raise ConfigurationError("model.hidden and model.embed must be positive")


@dataclass
class KeyConfig:
    method: str = "random"
    K: int = 1
    l: int = 2
    seed: int = 10

    def check(self):
        if self.method not in KEY_METHODS:
            raise ConfigurationError(f"protection.key.method must be one of {KEY_METHODS}")
        if self.K < 1 or self.l < 1:
            raise ConfigurationError("protection.key.K and protection.key.l must be positive")


@dataclass
class SignatureConfig:
    text: str = "priv"
    gamma: float = 0.1

    def check(self):
        if self.gamma <= 0:
            raise ConfigurationError("protection.signature.gamma must be positive")


@dataclass
class ProtectionConfig:
    scheme: str = "public"
    key: KeyConfig = field(default_factory=KeyConfig)
    signature: SignatureConfig = field(default_factory=SignatureConfig)
    trigger_size: int = 50
    trigger_seed: int = 2

    def check(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"protection.scheme must be one of {SCHEMES}")
        if self.trigger_size < 0:
            raise ConfigurationError("protection.trigger_size must be non-negative")


@dataclass
class TrainingConfig:
    epochs: int = 20
    batch: int = 16
    trigger: int = 2
    lr: float = 3e-3
    sign_weight: float = 1.0
    patience: int = 5
    clip_norm: float | None = 5.0
    restore_best: bool = True
    seed: int = 0

    def check(self):
        if self.epochs < 1 or self.batch < 1 or self.lr <= 0:
            raise ConfigurationError("training.epochs, training.batch and training.lr must be positive")
        if not 0 <= self.trigger <= self.batch:
            raise ConfigurationError("training.trigger must lie in [0, training.batch]")
        if self.patience < 1:
            raise ConfigurationError("training.patience must be positive")


@dataclass
class AttackConfig:
    seed: int = 1234
    finetune_fraction: float = 0.2
    finetune_lr_scale: float = 0.1
    finetune_steps: int | None = None
    overwrite_steps: int | None = None
    overwrite_signature: str = "evil"
    prune_rates: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6])
    flip_fractions: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.4])
    flip_max_steps: int = 200

    def check(self):
        if any(not 0 <= r <= 1 for r in self.prune_rates + self.flip_fractions):
            raise ConfigurationError("attack rates and fractions must lie in [0, 1]")
        if self.finetune_fraction < 0 or self.finetune_lr_scale <= 0 or self.flip_max_steps < 0:
            raise ConfigurationError("attack budgets must be non-negative")


@dataclass
class VerifyConfig:
    n_counterfeit: int = 50
    counterfeit_seed: int = 777
    min_bit_accuracy: float = 0.99
    p_threshold: float = 1e-6
    min_counterfeit_gap: float = 0.30
    secrecy_threshold: float = 0.1
    gate_bins: int = 50

    def check(self):
        if self.n_counterfeit < 0 or self.gate_bins < 1:
            raise ConfigurationError("verify.n_counterfeit and verify.gate_bins must be non-negative")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    protection: ProtectionConfig = field(default_factory=ProtectionConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    def check(self):
        for f in dataclasses.fields(self):
            getattr(self, f.name).check()
        self.protection.key.check()
        self.protection.signature.check()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = _build(cls, data, "")
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)


_SCALARS = {"int": int, "float": (int, float), "str": str, "bool": bool, "list": list}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigurationError(f"unknown field(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        path = f"{where}.{name}" if where else name
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, path)
        else:
            kwargs[name] = _coerce(value, str(f.type), path)
    return cls(**kwargs)


def _coerce(value, type_name, path):
    if value is None:
        if "None" in type_name:
            return None
        raise ConfigurationError(f"{path} must not be null")
    base = type_name.split("|")[0].strip()
    want = _SCALARS.get(base)
    if want is None:
        return value
    # bool is an int subclass; keep it out of numeric fields
    if isinstance(value, bool) and base != "bool" or not isinstance(value, want):
        raise ConfigurationError(f"{path} must be of type {base}, got {type(value).__name__}")
    return float(value) if base == "float" else value
