"""Datasets: IDX image files as row sequences, TREC-style TSV, synthetic token tasks."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .numeric import Rng

PAD = 0
UNK = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Fixed-length sequences and integer labels.

    ``inputs`` is ``int64 [n, T]`` for token data (left-padded with ``PAD``)
    or ``float64 [n, T, d]`` for real-valued rows. ``index`` records each
    sample's position in the dataset it was carved from, which makes split
    disjointness checkable.
    """
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    vocab: list | None = None
    name: str = ""
    index: np.ndarray | None = None
    label_names: list | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.index is None:
            self.index = np.arange(len(self.labels))

    def __len__(self):
        return len(self.labels)

    @property
    def is_tokens(self) -> bool:
        return np.issubdtype(self.inputs.dtype, np.integer)

    @property
    def seq_len(self) -> int:
        return self.inputs.shape[1]

    @property
    def feature_dim(self) -> int | None:
        return None if self.is_tokens else self.inputs.shape[2]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, self.vocab, self.name,
                       self.index[idx], self.label_names)

    def take(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))


def split_dataset(ds: Dataset, rng: Rng, val: float = 0.1, test: float = 0.2) -> dict:
    """Shuffle once and carve ``train``/``val``/``test``; splits are disjoint."""
    perm = rng.permutation(len(ds))
    n_test = int(round(test * len(ds)))
    n_val = int(round(val * len(ds)))
    return {
        "test": ds.subset(perm[:n_test]),
        "val": ds.subset(perm[n_test:n_test + n_val]),
        "train": ds.subset(perm[n_test + n_val:]),
    }


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def _read_header(buf: bytes, path, magic: int, ndim: int):
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise DataFormatError(f"{path}: header needs {need} bytes, file has {len(buf)}")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise DataFormatError(f"{path}: bad magic 0x{got:08x} at byte offset 0, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, buf[4:need])
    return dims, need


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (n, rows, cols), off = _read_header(buf, path, IDX_IMAGES_MAGIC, 3)
    expected = off + n * rows * cols
    if len(buf) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for {n}x{rows}x{cols} images, got {len(buf)} "
            f"(payload starts at byte offset {off})")
    return np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (n,), off = _read_header(buf, path, IDX_LABELS_MAGIC, 1)
    if len(buf) != off + n:
        raise DataFormatError(f"{path}: expected {off + n} bytes for {n} labels, got {len(buf)} "
                              f"(payload starts at byte offset {off})")
    return np.frombuffer(buf, dtype=np.uint8, offset=off).copy()


def write_idx_images(path, images: np.ndarray):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_idx(images_path, labels_path, limit: int | None = None, num_classes: int = 10) -> Dataset:
    """Images become sequences of rows (one timestep per row), scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataFormatError(f"{images_path} has {len(images)} images but {labels_path} has {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(images.astype(np.float64) / 255.0, labels, num_classes, name="idx_rows")


def write_digits_idx(out_dir, size: int = 28) -> tuple[str, str]:
    """Write scikit-learn's 8x8 handwritten digits, upsampled to ``size``x``size``, as IDX files.

    Offline stand-in for the MNIST files; the result goes through ``load_idx``
    like any other IDX pair.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    digits = load_digits()
    imgs = digits.images / 16.0
    big = np.stack([zoom(im, size / im.shape[0], order=1) for im in imgs])
    big = np.clip(np.rint(big * 255.0), 0, 255).astype(np.uint8)
    os.makedirs(out_dir, exist_ok=True)
    ip = os.path.join(out_dir, "digits-images-idx3-ubyte")
    lp = os.path.join(out_dir, "digits-labels-idx1-ubyte")
    write_idx_images(ip, big)
    write_idx_labels(lp, digits.target)
    return ip, lp


# ---------------------------------------------------------------------------
# Text
# ---------------------------------------------------------------------------

def pad_left(seqs, length: int) -> np.ndarray:
    out = np.full((len(seqs), length), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        s = list(s)[-length:]
        if s:
            out[i, length - len(s):] = s
    return out


def load_trec_tsv(path, vocab: list | None = None, labels: list | None = None, max_len: int = 30) -> Dataset:
    """``label<TAB>text`` lines. Builds a vocabulary unless one is supplied."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected label<TAB>text")
            lab, text = line.split("\t", 1)
            rows.append((lab.strip(), text.lower().split()))
    if labels is None:
        labels = sorted({r[0] for r in rows})
    lab_index = {l: i for i, l in enumerate(labels)}
    if vocab is None:
        vocab = ["<pad>", "<unk>"] + sorted({tok for _, toks in rows for tok in toks})
    tok_index = {t: i for i, t in enumerate(vocab)}
    ids, ys = [], []
    for lab, toks in rows:
        if lab not in lab_index:
            raise DataFormatError(f"{path}: unknown label {lab!r}")
        ids.append([tok_index.get(t, UNK) for t in toks])
        ys.append(lab_index[lab])
    return Dataset(pad_left(ids, max_len), np.array(ys), len(labels), vocab=vocab, name="trec_tsv",
                   label_names=list(labels))


def generate_synthetic_text(rng: Rng, size: int, V: int = 50, C: int = 6, length_range=(8, 12),
                            markers: bool = True) -> Dataset:
    """Random token sequences; class ``c`` is signalled by marker token ``2 + c``.

    Token 0 is padding, 1 is unused (unknown), ``2 .. 2+C-1`` are the class
    markers and the rest are filler. Each sample holds exactly one marker at
    a random position. With ``markers=False`` the labels are drawn but no
    marker is planted, so nothing about the label is learnable.
    """
    lo, hi = length_range
    n_filler = V - 2 - C
    if n_filler < 1:
        raise ValueError(f"vocabulary of {V} leaves no filler tokens for {C} markers")
    labels = rng.integers(C, size)
    seqs = []
    for y in labels:
        length = lo + rng.integers(hi - lo + 1)
        seq = [2 + C + rng.integers(n_filler) for _ in range(length)]
        if markers:
            seq[rng.integers(length)] = 2 + int(y)
        seqs.append(seq)
    vocab = ["<pad>", "<unk>"] + [f"<c{c}>" for c in range(C)] + [f"w{i}" for i in range(n_filler)]
    return Dataset(pad_left(seqs, hi), labels, C, vocab=vocab, name="synthetic_text")
