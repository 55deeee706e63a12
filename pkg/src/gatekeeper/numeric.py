"""Numeric building blocks: activations, Adam, seeded RNG, gradient oracle.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

_MASK64 = (1 << 64) - 1


def sigmoid(x):
    x = np.clip(x, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(-x))


def tanh(x):
    return np.tanh(x)


# ---------------------------------------------------------------------------
# Random numbers
# ---------------------------------------------------------------------------

def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator seeded through splitmix64.

    The four state words are the first four splitmix64 outputs of ``seed``,
    so a given seed yields the same stream on every platform.
    Floats use the top 53 bits: ``(x >> 11) * 2**-53``.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    @classmethod
    def from_state(cls, state: Iterable[int]) -> "Rng":
        rng = cls.__new__(cls)
        rng.seed = None
        rng._s = [int(v) & _MASK64 for v in state]
        if not any(rng._s):
            raise ValueError("xoshiro256** state must not be all zero")
        return rng

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def spawn(self) -> "Rng":
        """Independent child generator seeded from this stream."""
        return Rng(self.next_u64())

    def random(self, size=None):
        """Uniform floats in [0, 1)."""
        if size is None:
            return (self.next_u64() >> 11) * (1.0 / (1 << 53))
        n = int(np.prod(size))
        nxt = self.next_u64
        raw = np.fromiter((nxt() >> 11 for _ in range(n)), dtype=np.float64, count=n)
        return (raw * (1.0 / (1 << 53))).reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self.random(size)

    def integers(self, n: int, size=None):
        """Integers in [0, n) by 64x64 multiply-shift."""
        if n <= 0:
            raise ValueError("n must be positive")
        if size is None:
            return (self.next_u64() * n) >> 64
        count = int(np.prod(size))
        nxt = self.next_u64
        vals = np.fromiter(((nxt() * n) >> 64 for _ in range(count)), dtype=np.int64, count=count)
        return vals.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``arange(n)``."""
        out = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = (self.next_u64() * (i + 1)) >> 64
            out[i], out[j] = out[j], out[i]
        return out

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)`` in draw order."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        pool = np.arange(n)
        for i in range(k):
            j = i + ((self.next_u64() * (n - i)) >> 64)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()


# ---------------------------------------------------------------------------
# Parameters and Adam
# ---------------------------------------------------------------------------

@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.m.shape != self.v.shape:
            raise ValueError("m and v must have the same shape")

    @classmethod
    def for_shape(cls, shape, **hyper) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), **hyper)


def adam_step(p: Parameter, s: AdamState) -> tuple[Parameter, AdamState]:
    """Apply one bias-corrected Adam update to ``p`` in place."""
    if p.value.shape != s.m.shape or p.grad.shape != s.m.shape:
        raise ValueError(
            f"shape mismatch for {p.name}: value {p.value.shape}, grad {p.grad.shape}, state {s.m.shape}")
    s.step_count += 1
    g = p.grad
    s.m *= s.beta1
    s.m += (1.0 - s.beta1) * g
    s.v *= s.beta2
    s.v += (1.0 - s.beta2) * g * g
    m_hat = s.m / (1.0 - s.beta1 ** s.step_count)
    v_hat = s.v / (1.0 - s.beta2 ** s.step_count)
    p.value -= s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
    return p, s


class Adam:
    """Adam over a list of parameters, with optional global-norm clipping."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        self.params = list(params)
        self.clip_norm = clip_norm
        self.states = {p.name: AdamState.for_shape(p.shape, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
                       for p in self.params}

    @property
    def lr(self) -> float:
        return next(iter(self.states.values())).lr if self.states else 0.0

    @lr.setter
    def lr(self, value: float):
        for s in self.states.values():
            s.lr = value

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params))
            if total > self.clip_norm:
                scale = self.clip_norm / (total + 1e-12)
                for p in self.params:
                    p.grad *= scale
        for p in self.params:
            adam_step(p, self.states[p.name])


# ---------------------------------------------------------------------------
# Losses and the finite-difference oracle
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if batch and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(batch)
    loss = -float(log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= batch
    return loss, grad


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``theta``.

    ``loss_fn`` takes a flat float64 vector. The returned gradient has the
    shape of ``theta``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    flat = theta.ravel().copy()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(loss_fn(flat.copy()))
        flat[i] = orig - h
        f_minus = float(loss_fn(flat.copy()))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite loss at coordinate {i}: f(+h)={f_plus}, f(-h)={f_minus}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(theta.shape)


def relative_error(a, b, floor: float = 1e-12) -> float:
    """``||a - b|| / (||a|| + ||b||)``, the usual gradient-check metric."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
