"""Keys, ASCII signatures and the hinge sign loss on the key's first hidden state."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numeric import Rng

RANDOM_PATTERNS = "random"
FIXED_KEY = "fixed"
BATCH_KEYS = "batch"
KEY_METHODS = (RANDOM_PATTERNS, FIXED_KEY, BATCH_KEYS)


class CapacityError(ValueError):
    pass


@dataclass
class Key:
    """``K`` key sequences of ``l`` steps and ``d`` features.

    Values are stored rounded to float32 precision so a key survives the
    32-bit checkpoint payload bit for bit.
    """
    sequences: np.ndarray
    method: str = RANDOM_PATTERNS
    token_ids: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        seqs = np.asarray(self.sequences, dtype=np.float32).astype(np.float64)
        if seqs.ndim != 3 or min(seqs.shape) < 1:
            raise ValueError(f"key sequences must be a non-empty [K, l, d] array, got {seqs.shape}")
        if self.method not in KEY_METHODS:
            raise ValueError(f"unknown key method {self.method!r}")
        self.sequences = seqs
        if self.token_ids is not None:
            self.token_ids = np.asarray(self.token_ids, dtype=np.int64)

    @property
    def shape(self):
        return self.sequences.shape

    def metadata(self) -> dict:
        return {
            "method": self.method,
            "shape": list(self.shape),
            "seed": self.seed,
            "token_ids": None if self.token_ids is None else self.token_ids.tolist(),
        }

    @classmethod
    def from_metadata(cls, meta: dict, sequences: np.ndarray) -> "Key":
        tok = meta.get("token_ids")
        return cls(sequences, meta["method"], None if tok is None else np.asarray(tok), meta.get("seed"))

    def __eq__(self, other):
        if not isinstance(other, Key):
            return NotImplemented
        same_tokens = (self.token_ids is None and other.token_ids is None) or (
            self.token_ids is not None and other.token_ids is not None
            and np.array_equal(self.token_ids, other.token_ids))
        return (self.method == other.method and self.seed == other.seed and same_tokens
                and np.array_equal(self.sequences, other.sequences))


def generate_key(method: str, rng: Rng, K: int, l: int, d: int, embedding=None, corpus=None) -> Key:
    """Draw a key.

    * ``random``: entries uniform in [-1, 1], shape ``[K, l, d]``.
    * ``fixed`` / ``batch``: 1 or K sequences taken from ``corpus``. For token
      corpora (integer sequences) the first ``l`` tokens are mapped through
      ``embedding`` ([V, d]); real-valued corpora ([n, T, d]) are sliced.
    """
    if min(K, l, d) < 1:
        raise ValueError("key dimensions must be positive")
    if method == RANDOM_PATTERNS:
        seed = getattr(rng, "seed", None)
        return Key(rng.uniform(-1.0, 1.0, (K, l, d)), RANDOM_PATTERNS, seed=seed)
    if method not in (FIXED_KEY, BATCH_KEYS):
        raise ValueError(f"unknown key method {method!r}")
    if corpus is None or len(corpus) == 0:
        raise ValueError(f"key method {method!r} needs a non-empty corpus")
    count = 1 if method == FIXED_KEY else K
    if count > len(corpus):
        raise ValueError(f"corpus has {len(corpus)} samples, {count} keys requested")
    picks = rng.choice(len(corpus), count)
    seed = getattr(rng, "seed", None)
    first = np.asarray(corpus[int(picks[0])])
    if np.issubdtype(first.dtype, np.integer):
        if embedding is None:
            raise ValueError("token corpora need an embedding table to form key vectors")
        emb = np.asarray(embedding, dtype=np.float64)
        ids = np.stack([_fit_length(_strip_pad(np.asarray(corpus[int(i)])), l) for i in picks])
        return Key(emb[ids], method, token_ids=ids, seed=seed)
    seqs = np.stack([_fit_length(np.asarray(corpus[int(i)], dtype=np.float64), l) for i in picks])
    if seqs.shape[2] != d:
        raise ValueError(f"corpus feature width {seqs.shape[2]} != requested {d}")
    return Key(seqs, method, seed=seed)


def _strip_pad(tokens: np.ndarray) -> np.ndarray:
    # corpora are left-padded with token 0; keys are cut from the real tokens
    real = tokens[tokens != 0]
    return real if real.size else tokens


def _fit_length(seq: np.ndarray, l: int) -> np.ndarray:
    if len(seq) >= l:
        return seq[:l]
    reps = -(-l // len(seq))
    return np.concatenate([seq] * reps)[:l]


def key_space_size(K: int, l: int, V: int) -> int:
    """Number of batch-key combinations, ``(K * l) ** V``."""
    return (K * l) ** V


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------

@dataclass
class Signature:
    text: str
    signs: np.ndarray
    gamma: float = 0.1
    n_units: int | None = None

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.float64)
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.n_units is not None and self.signs.size > self.n_units:
            raise CapacityError(f"{self.signs.size} signature bits exceed {self.n_units} hidden units")

    @property
    def n_bits(self) -> int:
        return int(self.signs.size)

    def to_dict(self) -> dict:
        return {"text": self.text, "gamma": self.gamma, "n_units": self.n_units,
                "signs": [int(s) for s in self.signs]}

    @classmethod
    def from_dict(cls, d: dict) -> "Signature":
        return cls(d["text"], np.asarray(d["signs"], dtype=np.float64), d["gamma"], d.get("n_units"))

    def flipped(self, fraction: float, rng: Rng) -> tuple["Signature", np.ndarray]:
        """Copy with ``round(fraction * n_bits)`` signs inverted at random positions."""
        if not 0.0 <= fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        k = int(np.floor(fraction * self.n_bits + 0.5))
        idx = np.sort(rng.choice(self.n_bits, k))
        signs = self.signs.copy()
        signs[idx] *= -1.0
        return Signature(decode_signs(signs), signs, self.gamma, self.n_units), idx


def encode_signature(text: str, N: int, gamma: float = 0.1) -> Signature:
    """ASCII text -> sign vector, 8 bits per character, MSB first, 1 -> +1, 0 -> -1."""
    try:
        raw = text.encode("ascii")
    except UnicodeEncodeError as exc:
        raise ValueError(f"signature text must be 7-bit ASCII: {exc}") from None
    need = 8 * len(raw)
    if need > N:
        raise CapacityError(f"signature {text!r} needs {need} bits but the model has N={N} hidden units")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8)) if raw else np.zeros(0, dtype=np.uint8)
    return Signature(text, np.where(bits == 1, 1.0, -1.0), gamma, N)


def decode_signs(signs) -> str:
    """Sign vector -> text; positive -> 1, zero or negative -> 0."""
    signs = np.asarray(signs, dtype=np.float64)
    n = (signs.size // 8) * 8
    bits = (signs[:n] > 0).astype(np.uint8)
    return bytes(np.packbits(bits)).decode("latin-1")


def decode_signature(h0, text_len: int, reference: Signature | None = None):
    """Read ``text_len`` characters off the signs of ``h0``.

    Returns ``(text, accuracy)`` where accuracy is the fraction of the
    ``8 * text_len`` positions whose sign agrees with ``reference`` (``None``
    when no reference is given).
    """
    h0 = np.asarray(h0, dtype=np.float64).ravel()
    n = 8 * text_len
    text = decode_signs(h0[:n])
    if reference is None:
        return text, None
    ref = reference.signs[:n]
    got = np.where(h0[:n] > 0, 1.0, -1.0)
    acc = float(np.mean(got == ref)) if n else 1.0
    return text, acc


def sign_accuracy(h0, sig: Signature) -> float:
    return decode_signature(h0, sig.n_bits // 8, sig)[1] if sig.n_bits else 1.0


def sign_loss(h0, sig: Signature) -> tuple[float, np.ndarray]:
    """``sum_i max(gamma - h0_i s_i, 0)`` over the signature's units, and its subgradient."""
    h0 = np.asarray(h0, dtype=np.float64).ravel()
    n = sig.n_bits
    if n > h0.size:
        raise CapacityError(f"{n} signature bits exceed {h0.size} hidden units")
    margin = sig.gamma - h0[:n] * sig.signs
    active = margin > 0
    grad = np.zeros_like(h0)
    grad[:n] = np.where(active, -sig.signs, 0.0)
    return float(np.sum(margin[active])), grad
