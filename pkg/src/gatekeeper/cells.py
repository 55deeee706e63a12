"""LSTM and GRU cells with Gatekeeper gating and hand-derived backward steps.

Gate blocks are stacked along the first axis of the weight matrices:

* LSTM (G=4): ``i, f, g, o``
* GRU  (G=3): ``r, z, n``

The Gatekeeper reuses the forget gate of an LSTM and the reset gate of a GRU,
so ``gk_t`` for a key is exactly that gate's activation when the cell is run
on the key stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Rng, sigmoid

GATES = {"lstm": 4, "gru": 3}
# index of the gate block whose weights double as W_ik/W_hk/b_ik/b_hk
KEY_GATE = {"lstm": 1, "gru": 0}


class UnsupportedCellError(ValueError):
    pass


@dataclass
class CellWeights:
    kind: str
    W_ih: np.ndarray
    W_hh: np.ndarray
    b_ih: np.ndarray
    b_hh: np.ndarray

    def __post_init__(self):
        if self.kind not in GATES:
            raise UnsupportedCellError(f"unknown cell kind {self.kind!r}")
        gn = GATES[self.kind] * self.hidden_size
        if self.W_ih.shape[0] != gn or self.W_hh.shape != (gn, self.hidden_size):
            raise ValueError(f"inconsistent {self.kind} weight shapes {self.W_ih.shape}, {self.W_hh.shape}")
        if self.b_ih.shape != (gn,) or self.b_hh.shape != (gn,):
            raise ValueError("bias shapes do not match gate count")

    @property
    def hidden_size(self) -> int:
        return self.W_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.W_ih.shape[1]

    @classmethod
    def zeros(cls, kind: str, input_size: int, hidden_size: int) -> "CellWeights":
        if kind not in GATES:
            raise UnsupportedCellError(f"unknown cell kind {kind!r}")
        gn = GATES[kind] * hidden_size
        return cls(kind, np.zeros((gn, input_size)), np.zeros((gn, hidden_size)), np.zeros(gn), np.zeros(gn))

    @classmethod
    def init(cls, kind: str, input_size: int, hidden_size: int, rng: Rng) -> "CellWeights":
        """Uniform in [-1/sqrt(N), 1/sqrt(N)]; biases zero."""
        w = cls.zeros(kind, input_size, hidden_size)
        bound = 1.0 / np.sqrt(hidden_size)
        w.W_ih[...] = rng.uniform(-bound, bound, w.W_ih.shape)
        w.W_hh[...] = rng.uniform(-bound, bound, w.W_hh.shape)
        return w

    def gate_block(self, idx: int) -> slice:
        n = self.hidden_size
        return slice(idx * n, (idx + 1) * n)

    def key_weights(self):
        """Views ``(W_ik, W_hk, b_ik, b_hk)`` aliasing the reused gate block."""
        if self.kind not in KEY_GATE:
            raise UnsupportedCellError(f"{self.kind} has no gate designated for key gating")
        sl = self.gate_block(KEY_GATE[self.kind])
        return self.W_ih[sl], self.W_hh[sl], self.b_ih[sl], self.b_hh[sl]

    def arrays(self):
        return {"W_ih": self.W_ih, "W_hh": self.W_hh, "b_ih": self.b_ih, "b_hh": self.b_hh}


@dataclass
class StepTrace:
    """Everything a backward step needs; nothing is recomputed."""
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray | None
    gates: tuple            # activations in block order
    h_raw: np.ndarray       # cell output before Gatekeeper scaling
    c_raw: np.ndarray | None
    tanh_c: np.ndarray | None = None
    hh_n: np.ndarray | None = None  # GRU: W_hn h + b_hn
    gk: np.ndarray | None = None


def _check_input(w: CellWeights, x: np.ndarray, h: np.ndarray):
    if x.ndim != 2 or x.shape[1] != w.input_size:
        raise ValueError(f"input width {x.shape[-1]} does not match cell input size {w.input_size}")
    if h.shape != (x.shape[0], w.hidden_size):
        raise ValueError(f"hidden state shape {h.shape} does not match ({x.shape[0]}, {w.hidden_size})")


def plain_step(w: CellWeights, x_t, h, c=None):
    """One ungated LSTM/GRU step. Returns ``(h_new, c_new, trace)``."""
    _check_input(w, x_t, h)
    n = w.hidden_size
    if w.kind == "lstm":
        if c is None:
            c = np.zeros_like(h)
        a = x_t @ w.W_ih.T + w.b_ih + h @ w.W_hh.T + w.b_hh
        i = sigmoid(a[:, :n])
        f = sigmoid(a[:, n:2 * n])
        g = np.tanh(a[:, 2 * n:3 * n])
        o = sigmoid(a[:, 3 * n:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, StepTrace(x_t, h, c, (i, f, g, o), h_new, c_new, tanh_c=tc)

    gi = x_t @ w.W_ih.T + w.b_ih
    gh = h @ w.W_hh.T + w.b_hh
    r = sigmoid(gi[:, :n] + gh[:, :n])
    z = sigmoid(gi[:, n:2 * n] + gh[:, n:2 * n])
    hh_n = gh[:, 2 * n:]
    nn = np.tanh(gi[:, 2 * n:] + r * hh_n)
    h_new = (1.0 - z) * nn + z * h
    return h_new, None, StepTrace(x_t, h, None, (r, z, nn), h_new, None, hh_n=hh_n)


def gatekeeper_activation(w: CellWeights, k_t, h_k_prev):
    """``sigmoid(W_ik k_t + b_ik + W_hk h^k_{t-1} + b_hk)`` for each key row."""
    W_ik, W_hk, b_ik, b_hk = w.key_weights()
    if k_t.shape[-1] != w.input_size:
        raise ValueError(f"key width {k_t.shape[-1]} does not match cell input size {w.input_size}")
    return sigmoid(k_t @ W_ik.T + b_ik + h_k_prev @ W_hk.T + b_hk)


def gated_step(w: CellWeights, x_t, h, c, gk):
    """``plain_step`` followed by elementwise scaling of h (and c) by ``gk``."""
    h_raw, c_raw, tr = plain_step(w, x_t, h, c)
    gk = np.asarray(gk, dtype=np.float64)
    try:
        np.broadcast_shapes(gk.shape, h_raw.shape)
    except ValueError:
        raise ValueError(f"gate shape {gk.shape} is not broadcastable to {h_raw.shape}") from None
    tr.gk = gk
    h_new = gk * h_raw
    c_new = gk * c_raw if c_raw is not None else None
    return h_new, c_new, tr


def step_backward(w: CellWeights, tr: StepTrace, dh, dc, grads: CellWeights, d_keygate=None):
    """Backward through one (possibly gated) step.

    ``dh``/``dc`` are gradients w.r.t. the step's *outputs* (after gating if
    the step was gated). ``d_keygate`` is an extra gradient on the reused
    gate's activation, used when this step belongs to a key stream.
    Gradients are accumulated into ``grads``.

    Returns ``(dx, dh_prev, dc_prev, dgk)``; ``dgk`` is summed over the batch
    when ``gk`` was shared across rows, else it has the gate's shape.
    """
    n = w.hidden_size
    dgk = None
    if tr.gk is not None:
        gk = tr.gk
        raw = dh * tr.h_raw
        if tr.c_raw is not None and dc is not None:
            raw = raw + dc * tr.c_raw
        dgk = _sum_to_shape(raw, gk.shape)
        dh = dh * gk
        dc = dc * gk if dc is not None else None

    if w.kind == "lstm":
        i, f, g, o = tr.gates
        if dc is None:
            dc = np.zeros_like(dh)
        tc = tr.tanh_c
        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        df = dct * tr.c_prev
        if d_keygate is not None:
            df = df + d_keygate
        da = np.concatenate([
            dct * g * i * (1.0 - i),
            df * f * (1.0 - f),
            dct * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        grads.W_ih += da.T @ tr.x
        grads.W_hh += da.T @ tr.h_prev
        db = da.sum(axis=0)
        grads.b_ih += db
        grads.b_hh += db
        dx = da @ w.W_ih
        dh_prev = da @ w.W_hh
        dc_prev = dct * f
        return dx, dh_prev, dc_prev, dgk

    r, z, nn = tr.gates
    dn = dh * (1.0 - z)
    dz = dh * (tr.h_prev - nn)
    dan = dn * (1.0 - nn * nn)
    dr = dan * tr.hh_n
    if d_keygate is not None:
        dr = dr + d_keygate
    dar = dr * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    d_gi = np.concatenate([dar, daz, dan], axis=1)
    d_gh = np.concatenate([dar, daz, dan * r], axis=1)
    grads.W_ih += d_gi.T @ tr.x
    grads.W_hh += d_gh.T @ tr.h_prev
    grads.b_ih += d_gi.sum(axis=0)
    grads.b_hh += d_gh.sum(axis=0)
    dx = d_gi @ w.W_ih
    dh_prev = d_gh @ w.W_hh + dh * z
    return dx, dh_prev, None, dgk


def key_gate_of(tr: StepTrace, kind: str) -> np.ndarray:
    """Activation of the reused gate in a key-stream step, i.e. ``gk_t`` per key."""
    return tr.gates[KEY_GATE[kind]]


def _sum_to_shape(a: np.ndarray, shape) -> np.ndarray:
    if a.shape == tuple(shape):
        return a
    lead = a.ndim - len(shape)
    out = a.sum(axis=tuple(range(lead))) if lead > 0 else a
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and out.shape[i] != 1)
    if axes:
        out = out.sum(axis=axes, keepdims=True)
    return out
