"""Attribute kernels initialized from word embeddings, depthwise attribute
maps, and max-pooled attribute regression."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor_ops as ops
from .errors import DataError, DimensionError, FormatError


@dataclass
class AttributeEmbeddings:
    E: np.ndarray  # (K, d)
    attribute_ids: list | None = None

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=np.float64)
        if self.E.ndim != 2:
            raise DataError(f"embedding matrix must be 2-D, got {self.E.shape}")
        if not np.all(np.isfinite(self.E)):
            raise DataError("embedding matrix has non-finite entries")
        if self.attribute_ids is None:
            self.attribute_ids = [str(k) for k in range(self.E.shape[0])]

    @property
    def d(self) -> int:
        return self.E.shape[1]


@dataclass
class AttributeKernelBank:
    W_init: np.ndarray  # (d, C*h*w); None for randomly initialized kernels
    kernels: np.ndarray  # (K, C, h, w)

    @property
    def h(self) -> int:
        return self.kernels.shape[2]

    @property
    def w(self) -> int:
        return self.kernels.shape[3]


def average_word_embeddings(word_vectors, attribute_ids=None) -> AttributeEmbeddings:
    """Mean word vector per attribute.

    ``word_vectors`` is a sequence (one entry per attribute) of lists of
    d-dimensional vectors.
    """
    ids = list(attribute_ids) if attribute_ids is not None else [str(k) for k in range(len(word_vectors))]
    rows, d = [], None
    for name, vecs in zip(ids, word_vectors):
        arr = np.asarray(vecs, dtype=np.float64)
        if arr.size == 0:
            raise DataError(f"attribute {name!r} has no word vectors")
        arr = np.atleast_2d(arr)
        if d is None:
            d = arr.shape[1]
        elif arr.shape[1] != d:
            raise DataError(f"attribute {name!r}: word vectors have dimension {arr.shape[1]}, expected {d}")
        rows.append(arr.mean(axis=0))
    return AttributeEmbeddings(np.stack(rows), ids)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_kernels(emb: AttributeEmbeddings, C: int, h: int, w: int, rng: np.random.Generator,
                 broadcast: bool = False) -> AttributeKernelBank:
    """Kernels as row-major reshapes of ``E @ W_init`` into C x h x w.

    With ``broadcast=True`` the initializer maps to a single h x w slice
    that is repeated over every channel.
    """
    n = h * w if broadcast else C * h * w
    s = glorot_bound(emb.d, n)
    W_init = rng.uniform(-s, s, size=(emb.d, n))
    # one vector-matrix product per attribute, so each kernel is exactly E^k W
    flat = np.stack([row @ W_init for row in emb.E])
    K = emb.E.shape[0]
    if broadcast:
        kernels = np.repeat(flat.reshape(K, 1, h, w), C, axis=1)
    else:
        kernels = flat.reshape(K, C, h, w)
    return AttributeKernelBank(W_init=W_init, kernels=kernels)


def init_kernels_random(K: int, C: int, h: int, w: int, rng: np.random.Generator) -> AttributeKernelBank:
    s = glorot_bound(C * h * w, 1)
    return AttributeKernelBank(W_init=None, kernels=rng.uniform(-s, s, size=(K, C, h, w)))


def kernel_grad_to_init(dkernels, emb: AttributeEmbeddings):
    """Chain a kernel gradient back to the initializer weights."""
    K = dkernels.shape[0]
    return emb.E.T @ np.asarray(dkernels).reshape(K, -1)


def attribute_maps(v, kernels):
    """ReLU of the depthwise response of every kernel: (..., K, C, H', W')."""
    return ops.relu(ops.depthwise_conv_valid(v, kernels))


def attribute_regression(v, bank: AttributeKernelBank):
    """Global max (over channels and space) of each attribute map."""
    A = attribute_maps(v, bank.kernels)
    vals, _ = ops.batched_max_argmax(A, 3)
    return vals


def attribute_regression_traced(v, kernels):
    """Forward pass keeping what the backward needs."""
    conv = ops.depthwise_conv_valid(v, kernels)
    A = ops.relu(conv)
    vals, idx = ops.batched_max_argmax(A, 3)
    return vals, (conv, idx)


def attribute_regression_backward(grad, v, kernels, cache, need_input_grad: bool = False):
    """Returns ``(dv, dkernels)``; ``dv`` is None unless requested.

    The max routes each (sample, attribute) gradient to a single window,
    so the kernel gradient is a scatter-add of input patches.
    """
    conv, idx = cache
    v = np.asarray(v, dtype=np.float64)
    kernels = np.asarray(kernels)
    if need_input_grad:
        gA = ops.max_backward(grad, idx, conv.shape, 3)
        return ops.depthwise_conv_valid_backward(ops.relu_backward(gA, conv), v, kernels)
    K, C, h, w = kernels.shape
    Ho, Wo = conv.shape[-2:]
    lead = conv.shape[:-4]
    g = np.asarray(grad, dtype=np.float64).reshape(-1, K)
    flat = np.asarray(idx).reshape(-1, K)
    n = g.shape[0]
    c, rem = np.divmod(flat, Ho * Wo)
    i, j = np.divmod(rem, Wo)
    b = np.broadcast_to(np.arange(n)[:, None], (n, K))
    kk = np.broadcast_to(np.arange(K)[None, :], (n, K))
    active = conv.reshape(n, K, -1)[b, kk, flat] > 0
    win = sliding_window_view(v.reshape((n,) + v.shape[len(lead):]), (h, w), axis=(-2, -1))
    patches = win[b, c, i, j] * (g * active)[..., None, None]
    dk = np.zeros((K, C, h, w))
    np.add.at(dk, (kk.ravel(), c.ravel()), patches.reshape(-1, h, w))
    return None, ops.check_finite(dk, "attribute_regression_backward")


def regression_loss(a_reg, a_true):
    """Squared L2 distance, summed over attributes (per sample for batches)."""
    a_reg = np.asarray(a_reg, dtype=np.float64)
    a_true = np.asarray(a_true, dtype=np.float64)
    if a_reg.shape != a_true.shape:
        raise DimensionError(f"regression_loss: shape mismatch {a_reg.shape} vs {a_true.shape}")
    with np.errstate(over="ignore"):  # overflow surfaces as a non-finite loss upstream
        out = ((a_reg - a_true) ** 2).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def regression_loss_backward(grad, a_reg, a_true):
    return 2.0 * np.asarray(grad, dtype=np.float64)[..., None] * (np.asarray(a_reg) - np.asarray(a_true))


# -- embedding text format ---------------------------------------------------
# one line per attribute: ``attribute_id<TAB>f1 f2 ... fd``

def write_embeddings(path, emb: AttributeEmbeddings):
    lines = [f"{aid}\t" + " ".join(repr(float(x)) for x in row) for aid, row in zip(emb.attribute_ids, emb.E)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_embeddings(path) -> AttributeEmbeddings:
    raw = Path(path).read_bytes()
    ids, rows, offset, d = [], [], 0, None
    for line in raw.split(b"\n"):
        if line.strip():
            if b"\t" not in line:
                raise FormatError("embedding line missing TAB separator", offset=offset)
            aid, vals = line.split(b"\t", 1)
            try:
                row = [float(x) for x in vals.split()]
            except ValueError as exc:
                raise FormatError(f"embedding line has a non-numeric value ({exc})", offset=offset) from None
            if d is None:
                d = len(row)
            if len(row) != d or d == 0:
                raise FormatError(f"embedding line has {len(row)} values, expected {d}", offset=offset)
            ids.append(aid.decode())
            rows.append(row)
        offset += len(line) + 1
    if not rows:
        raise FormatError("embedding file is empty", offset=0)
    return AttributeEmbeddings(np.array(rows), ids)
