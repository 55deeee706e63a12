"""Sequence classifier built from a (bi)directional Gatekeeper cell.

Inputs are either token ids ``[batch, T]`` (with an embedding table) or real
vectors ``[batch, T, d]``. A key is a ``[K, l, d]`` array of key sequences in
the same feature space as the embedded inputs.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .cells import CellWeights, GATES, gated_step, key_gate_of, plain_step, step_backward
from .numeric import Parameter, Rng


class KeyShapeError(ValueError):
    pass


def key_array(key) -> np.ndarray:
    seqs = getattr(key, "sequences", key)
    seqs = np.asarray(seqs, dtype=np.float64)
    if seqs.ndim == 2:
        seqs = seqs[None]
    if seqs.ndim != 3 or seqs.shape[0] < 1 or seqs.shape[1] < 1:
        raise KeyShapeError(f"key must have shape [K, l, d], got {seqs.shape}")
    return seqs


@dataclass
class DirectionCache:
    reverse: bool
    steps: list = field(default_factory=list)
    key_steps: list = field(default_factory=list)
    n_keys: int = 0


@dataclass
class ForwardCache:
    token_ids: np.ndarray | None
    inputs: np.ndarray
    directions: list
    h_final: np.ndarray
    logits: np.ndarray


class SequenceModel:
    """Embedding (optional) -> Gatekeeper RNN (1 or 2 directions) -> affine head.

    ``gatekeeper_enabled`` is the toggle used by the public training scheme;
    when it is False, or no key is passed, the cell runs unprotected.
    """

    def __init__(self, cell: str = "lstm", input_size: int | None = None, hidden_size: int = 64,
                 num_classes: int = 10, vocab_size: int | None = None, embed_dim: int | None = None,
                 bidirectional: bool = False, seed: int = 0):
        if cell not in GATES:
            raise ValueError(f"unknown cell {cell!r}")
        if vocab_size is not None:
            if embed_dim is None:
                raise ValueError("embed_dim is required with a vocabulary")
            input_size = embed_dim
        elif input_size is None:
            raise ValueError("input_size is required for real-valued inputs")
        self.cell_kind = cell
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        self.num_classes = int(num_classes)
        self.vocab_size = vocab_size
        self.bidirectional = bool(bidirectional)
        self.gatekeeper_enabled = True
        self.seed = seed

        rng = Rng(seed)
        # every weight matrix ~ U[-1/sqrt(N), 1/sqrt(N)], N = hidden units; biases zero
        bound = 1.0 / np.sqrt(self.hidden_size)
        self.params: dict[str, Parameter] = {}
        if vocab_size is not None:
            self._add("embedding.weight", rng.uniform(-bound, bound, (vocab_size, embed_dim)))
        for prefix in self.direction_prefixes:
            w = CellWeights.init(cell, self.input_size, self.hidden_size, rng)
            for name, arr in w.arrays().items():
                self._add(f"{prefix}.{name}", arr)
        feat = self.hidden_size * (2 if self.bidirectional else 1)
        self._add("head.W", rng.uniform(-bound, bound, (self.num_classes, feat)))
        self._add("head.b", np.zeros(self.num_classes))

    def _add(self, name, value):
        self.params[name] = Parameter(name, np.array(value, dtype=np.float64))

    # -- structure ---------------------------------------------------------
    @property
    def direction_prefixes(self):
        return ["rnn.layer0", "rnn.layer0_reverse"] if self.bidirectional else ["rnn.layer0"]

    @property
    def has_embedding(self) -> bool:
        return self.vocab_size is not None

    def cell(self, direction: int = 0) -> CellWeights:
        p = self.direction_prefixes[direction]
        return CellWeights(self.cell_kind, *(self.params[f"{p}.{k}"].value for k in ("W_ih", "W_hh", "b_ih", "b_hh")))

    def cell_grads(self, direction: int = 0) -> CellWeights:
        p = self.direction_prefixes[direction]
        return CellWeights(self.cell_kind, *(self.params[f"{p}.{k}"].grad for k in ("W_ih", "W_hh", "b_ih", "b_hh")))

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def config(self) -> dict:
        return {
            "cell": self.cell_kind, "input_size": self.input_size, "hidden_size": self.hidden_size,
            "num_classes": self.num_classes, "vocab_size": self.vocab_size,
            "embed_dim": self.input_size if self.has_embedding else None,
            "bidirectional": self.bidirectional, "seed": self.seed,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "SequenceModel":
        return cls(cell=cfg["cell"], input_size=cfg["input_size"], hidden_size=cfg["hidden_size"],
                   num_classes=cfg["num_classes"], vocab_size=cfg.get("vocab_size"),
                   embed_dim=cfg.get("embed_dim"), bidirectional=cfg["bidirectional"], seed=cfg.get("seed", 0))

    def state_dict(self) -> dict:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].value[...] = v

    def clone(self) -> "SequenceModel":
        return copy.deepcopy(self)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params.values()])

    def set_flat(self, flat: np.ndarray):
        i = 0
        for p in self.params.values():
            p.value[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def get_flat_grad(self) -> np.ndarray:
        return np.concatenate([p.grad.ravel() for p in self.params.values()])

    # -- forward -----------------------------------------------------------
    def embed(self, x):
        if self.has_embedding:
            ids = np.asarray(x, dtype=np.int64)
            if ids.ndim != 2:
                raise ValueError(f"token input must be [batch, T], got {ids.shape}")
            return ids, self.params["embedding.weight"].value[ids]
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ValueError(f"input must be [batch, T, {self.input_size}], got {x.shape}")
        return None, x

    def forward(self, x, key=None):
        """Return ``(logits, cache)``.

        With a key (and the Gatekeeper enabled) the key's own hidden state
        advances alongside the input; at step t the reused gate evaluated on
        ``(k_t, h^k_{t-1})`` scales the input stream's state. Keys shorter
        than the input are cycled; K > 1 keys are averaged after the sigmoid.
        """
        ids, inputs = self.embed(x)
        keys = None
        if key is not None and self.gatekeeper_enabled:
            keys = key_array(key)
            if keys.shape[2] != self.input_size:
                raise KeyShapeError(f"key feature width {keys.shape[2]} != input width {self.input_size}")
        dirs = []
        finals = []
        for d in range(len(self.direction_prefixes)):
            rev = d == 1
            seq = inputs[:, ::-1] if rev else inputs
            kseq = keys[:, ::-1] if (rev and keys is not None) else keys
            h, cache = self._run_direction(self.cell(d), seq, kseq, rev)
            dirs.append(cache)
            finals.append(h)
        h_final = np.concatenate(finals, axis=1) if len(finals) > 1 else finals[0]
        logits = h_final @ self.params["head.W"].value.T + self.params["head.b"].value
        return logits, ForwardCache(ids, inputs, dirs, h_final, logits)

    def _run_direction(self, w: CellWeights, seq, keys, reverse):
        batch, T, _ = seq.shape
        n = self.hidden_size
        h = np.zeros((batch, n))
        c = np.zeros((batch, n)) if w.kind == "lstm" else None
        cache = DirectionCache(reverse)
        if keys is not None:
            K, l, _ = keys.shape
            cache.n_keys = K
            hk = np.zeros((K, n))
            ck = np.zeros((K, n)) if w.kind == "lstm" else None
        for t in range(T):
            x_t = seq[:, t]
            if keys is None:
                h, c, tr = plain_step(w, x_t, h, c)
            else:
                hk, ck, ktr = plain_step(w, keys[:, t % l], hk, ck)
                cache.key_steps.append(ktr)
                gk = key_gate_of(ktr, w.kind).mean(axis=0)
                h, c, tr = gated_step(w, x_t, h, c, gk)
            cache.steps.append(tr)
        return h, cache

    def __call__(self, x, key=None):
        return self.forward(x, key)[0]

    def predict(self, x, key=None, batch_size: int = 256) -> np.ndarray:
        out = []
        for s in range(0, len(x), batch_size):
            out.append(np.argmax(self.forward(x[s:s + batch_size], key)[0], axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    # -- backward ----------------------------------------------------------
    def backward(self, cache: ForwardCache, grad_logits):
        """Accumulate parameter gradients for ``sum(grad_logits * logits)``."""
        grad_logits = np.asarray(grad_logits, dtype=np.float64)
        if grad_logits.shape != cache.logits.shape:
            raise ValueError(f"grad shape {grad_logits.shape} != logits shape {cache.logits.shape}")
        self.params["head.W"].grad += grad_logits.T @ cache.h_final
        self.params["head.b"].grad += grad_logits.sum(axis=0)
        dh_final = grad_logits @ self.params["head.W"].value
        n = self.hidden_size
        d_inputs = np.zeros_like(cache.inputs) if self.has_embedding else None
        for d, dcache in enumerate(cache.directions):
            w = self.cell(d)
            g = self.cell_grads(d)
            dx_seq = self._backward_direction(w, g, dcache, dh_final[:, d * n:(d + 1) * n])
            if d_inputs is not None:
                d_inputs += dx_seq[:, ::-1] if dcache.reverse else dx_seq
        if d_inputs is not None:
            emb_grad = self.params["embedding.weight"].grad
            np.add.at(emb_grad, cache.token_ids.ravel(), d_inputs.reshape(-1, self.input_size))

    def _backward_direction(self, w, g, dcache: DirectionCache, dh):
        steps = dcache.steps
        T = len(steps)
        dc = np.zeros_like(dh) if w.kind == "lstm" else None
        dx_seq = np.zeros((dh.shape[0], T, w.input_size))
        gated = bool(dcache.key_steps)
        if gated:
            K = dcache.n_keys
            dhk = np.zeros((K, w.hidden_size))
            dck = np.zeros((K, w.hidden_size)) if w.kind == "lstm" else None
        for t in range(T - 1, -1, -1):
            dx, dh, dc, dgk = step_backward(w, steps[t], dh, dc, g)
            dx_seq[:, t] = dx
            if gated:
                d_gate = np.broadcast_to(dgk / K, (K, w.hidden_size))
                _, dhk, dck, _ = step_backward(w, dcache.key_steps[t], dhk, dck, g, d_keygate=d_gate)
        return dx_seq

    # -- signature path ----------------------------------------------------
    def key_first_hidden(self, key, direction: int = 0):
        """Mean over keys of the key stream's hidden state after its first step."""
        keys = key_array(key)
        if keys.shape[2] != self.input_size:
            raise KeyShapeError(f"key feature width {keys.shape[2]} != input width {self.input_size}")
        w = self.cell(direction)
        k0 = keys[:, -1] if direction == 1 else keys[:, 0]
        h0 = np.zeros((keys.shape[0], self.hidden_size))
        c0 = np.zeros_like(h0) if w.kind == "lstm" else None
        h1, _, tr = plain_step(w, k0, h0, c0)
        return h1.mean(axis=0), (direction, tr, keys.shape[0])

    def key_first_hidden_backward(self, cache, grad_h0):
        direction, tr, K = cache
        w = self.cell(direction)
        dh = np.broadcast_to(np.asarray(grad_h0, dtype=np.float64) / K, (K, self.hidden_size)).copy()
        dc = np.zeros_like(dh) if w.kind == "lstm" else None
        step_backward(w, tr, dh, dc, self.cell_grads(direction))

    def gate_trace(self, key, T: int):
        """Gatekeeper activations ``[directions, T, N]`` over a length-T run."""
        keys = key_array(key)
        out = []
        for d in range(len(self.direction_prefixes)):
            w = self.cell(d)
            ks = keys[:, ::-1] if d == 1 else keys
            K, l, _ = ks.shape
            hk = np.zeros((K, self.hidden_size))
            ck = np.zeros_like(hk) if w.kind == "lstm" else None
            gks = []
            for t in range(T):
                hk, ck, tr = plain_step(w, ks[:, t % l], hk, ck)
                gks.append(key_gate_of(tr, w.kind).mean(axis=0))
            out.append(np.stack(gks))
        return np.stack(out)
