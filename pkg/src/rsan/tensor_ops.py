"""Dense tensor kernels with hand-written adjoints.

Tensors are plain numpy arrays. Every forward op accepts optional leading
batch axes, accumulates in float64 with a fixed reduction order, and hands
back the storage dtype of its inputs. Outputs are checked for NaN/Inf.

Adjoints are exposed two ways: as ``<op>_backward`` functions taking the
upstream gradient plus the saved operands, and through :func:`trace` /
:func:`backward`, which keep the saved operands on a :class:`Node`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateVectorError, DimensionError, DomainError, NonFiniteError, UsageError

ACC = np.float64


def _storage_dtype(*arrays) -> np.dtype:
    dt = np.result_type(*arrays)
    return dt if dt in (np.float32, np.float64) else np.dtype(np.float64)


def check_finite(x, name: str = "tensor"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name}: non-finite values in output", term=name)
    return x


def _spatial(v, op):
    v = np.asarray(v)
    if v.ndim < 3:
        raise DimensionError(f"{op}: expected (..., C, H, W), got shape {v.shape}")
    return v


# -- region_linear ---------------------------------------------------------

def region_linear(v, P):
    """Apply ``P`` (C x K) independently at every spatial region of ``v``.

    ``out[..., k, i, j] = sum_c v[..., c, i, j] * P[c, k]``, summed in
    channel order so results match a naive loop bit for bit.
    """
    v = _spatial(v, "region_linear")
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != v.shape[-3]:
        raise DimensionError(
            f"region_linear: channel mismatch, v{tuple(v.shape)} vs P{tuple(P.shape)}"
        )
    dt = _storage_dtype(v, P)
    v64 = v.astype(ACC, copy=False)
    P64 = P.astype(ACC, copy=False)
    out = np.zeros(v.shape[:-3] + (P.shape[1],) + v.shape[-2:], dtype=ACC)
    for c in range(P.shape[0]):
        out += v64[..., c, None, :, :] * P64[c, :, None, None]
    return check_finite(out.astype(dt, copy=False), "region_linear")


def region_linear_backward(grad, v, P):
    g = np.asarray(grad, dtype=ACC)
    v64 = np.asarray(v, dtype=ACC)
    P64 = np.asarray(P, dtype=ACC)
    dv = np.einsum("...khw,ck->...chw", g, P64)
    lead = "".join(chr(ord("a") + i) for i in range(v64.ndim - 3))
    dP = np.einsum(f"{lead}chw,{lead}khw->ck", v64, g)
    return check_finite(dv, "region_linear_backward"), check_finite(dP, "region_linear_backward")


# -- global_avg_pool -------------------------------------------------------

def global_avg_pool(v):
    v = _spatial(v, "global_avg_pool")
    if v.shape[-1] * v.shape[-2] < 1:
        raise DimensionError(f"global_avg_pool: empty spatial extent in shape {v.shape}")
    dt = _storage_dtype(v)
    out = v.astype(ACC, copy=False).sum(axis=(-2, -1)) / (v.shape[-2] * v.shape[-1])
    return check_finite(out.astype(dt, copy=False), "global_avg_pool")


def global_avg_pool_backward(grad, shape):
    g = np.asarray(grad, dtype=ACC)
    H, W = shape[-2], shape[-1]
    return np.broadcast_to(g[..., None, None] / (H * W), shape).copy()


# -- depthwise_conv_valid --------------------------------------------------

def depthwise_conv_valid(v, k):
    """Per-channel valid cross-correlation, stride 1, no padding.

    ``k`` is either one kernel (C, h, w) or a bank (K, C, h, w); the bank
    axis is inserted before the channel axis of the output. Computed as one
    batched matmul per channel over the h*w window entries.
    """
    v = _spatial(v, "depthwise_conv_valid")
    k = np.asarray(k)
    if k.ndim not in (3, 4) or k.shape[-3] != v.shape[-3]:
        raise DimensionError(
            f"depthwise_conv_valid: kernel {tuple(k.shape)} incompatible with input {tuple(v.shape)}"
        )
    C, H, W = v.shape[-3:]
    h, w = k.shape[-2:]
    if h > H or w > W:
        raise DimensionError(f"depthwise_conv_valid: kernel {h}x{w} larger than input {H}x{W}")
    dt = _storage_dtype(v, k)
    Ho, Wo = H - h + 1, W - w + 1
    lead = v.shape[:-3]
    n = int(np.prod(lead, dtype=np.int64))
    bank = k.astype(ACC, copy=False).reshape(-1, C, h * w)
    nk = bank.shape[0]
    win = sliding_window_view(v.astype(ACC, copy=False).reshape(n, C, H, W), (h, w), axis=(-2, -1))
    win = np.ascontiguousarray(win.transpose(1, 0, 2, 3, 4, 5)).reshape(C, n * Ho * Wo, h * w)
    out = np.matmul(win, bank.transpose(1, 2, 0))  # (C, n*Ho*Wo, nk)
    out = np.ascontiguousarray(out.reshape(C, n, Ho, Wo, nk).transpose(1, 4, 0, 2, 3))
    out = out.reshape(lead + ((nk,) if k.ndim == 4 else ()) + (C, Ho, Wo))
    return check_finite(out.astype(dt, copy=False), "depthwise_conv_valid")


def depthwise_conv_valid_backward(grad, v, k):
    g = np.asarray(grad, dtype=ACC)
    v64 = np.asarray(v, dtype=ACC)
    k64 = np.asarray(k, dtype=ACC)
    h, w = k64.shape[-2:]
    Ho, Wo = g.shape[-2:]
    bank = k64.ndim == 4
    dv = np.zeros_like(v64)
    dk = np.zeros_like(k64)
    n_lead = v64.ndim - 3
    lead_axes = tuple(range(n_lead))
    for p in range(h):
        for q in range(w):
            if bank:
                dv[..., p:p + Ho, q:q + Wo] += np.einsum("...kchw,kc->...chw", g, k64[..., p, q])
                win = v64[..., None, :, p:p + Ho, q:q + Wo]
                dk[..., p, q] = (g * win).sum(axis=lead_axes + (-2, -1))
            else:
                dv[..., p:p + Ho, q:q + Wo] += g * k64[:, p, q, None, None]
                dk[:, p, q] = (g * v64[..., p:p + Ho, q:q + Wo]).sum(axis=lead_axes + (-2, -1))
    return check_finite(dv, "depthwise_conv_backward"), check_finite(dk, "depthwise_conv_backward")


# -- max / argmax ----------------------------------------------------------

def global_max_argmax(t, n_axes: int | None = None):
    """Max over the trailing ``n_axes`` axes (all axes by default).

    Returns ``(value, index)`` where index is the first maximizing position
    in row-major order, as a tuple of ints.
    """
    t = np.asarray(t)
    n_axes = t.ndim if n_axes is None else n_axes
    if t.size == 0:
        raise DomainError("global_max_argmax: empty tensor")
    if n_axes != t.ndim:
        raise DimensionError("global_max_argmax: use batched_max_argmax for leading axes")
    flat = int(np.argmax(t.reshape(-1)))
    idx = tuple(int(i) for i in np.unravel_index(flat, t.shape))
    return t.reshape(-1)[flat].item(), idx


def batched_max_argmax(t, n_axes: int):
    """Max over the trailing ``n_axes`` axes for every leading index.

    Returns ``(values, flat_idx)``; ``flat_idx`` indexes the flattened
    trailing block and is the row-major-first argmax.
    """
    t = np.asarray(t)
    trailing = t.shape[t.ndim - n_axes:]
    if t.size == 0 or int(np.prod(trailing)) == 0:
        raise DomainError("batched_max_argmax: empty tensor")
    flat = t.reshape(t.shape[: t.ndim - n_axes] + (-1,))
    idx = np.argmax(flat, axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return vals, idx


def max_backward(grad, flat_idx, shape, n_axes: int):
    """Route ``grad`` to the winning position only."""
    shape = tuple(shape)
    lead = shape[: len(shape) - n_axes]
    out = np.zeros(lead + (int(np.prod(shape[len(shape) - n_axes:])),), dtype=ACC)
    np.put_along_axis(out, np.asarray(flat_idx)[..., None], np.asarray(grad, dtype=ACC)[..., None], axis=-1)
    return out.reshape(shape)


# -- relu ------------------------------------------------------------------

def relu(x):
    x = np.asarray(x)
    return check_finite(np.maximum(x, 0), "relu")


def relu_backward(grad, x):
    return np.where(np.asarray(x) > 0, grad, 0.0)


# -- cosine ----------------------------------------------------------------

def cosine(u, w) -> float:
    u = np.asarray(u, dtype=ACC)
    w = np.asarray(w, dtype=ACC)
    if u.shape != w.shape or u.ndim != 1:
        raise DimensionError(f"cosine: shape mismatch {u.shape} vs {w.shape}")
    nu, nw = np.linalg.norm(u), np.linalg.norm(w)
    if nu == 0 or nw == 0:
        raise DegenerateVectorError("cosine: zero-norm operand")
    return float(check_finite(np.dot(u, w) / (nu * nw), "cosine"))


def cosine_backward(grad, u, w):
    u = np.asarray(u, dtype=ACC)
    w = np.asarray(w, dtype=ACC)
    nu, nw = np.linalg.norm(u), np.linalg.norm(w)
    c = np.dot(u, w) / (nu * nw)
    du = grad * (w / (nu * nw) - c * u / nu**2)
    dw = grad * (u / (nu * nw) - c * w / nw**2)
    return du, dw


def cosine_matrix(A, T):
    """Cosine between every row of ``A`` (B x K) and every row of ``T`` (Y x K)."""
    A = np.asarray(A, dtype=ACC)
    T = np.asarray(T, dtype=ACC)
    if A.shape[-1] != T.shape[-1]:
        raise DimensionError(f"cosine_matrix: width mismatch {A.shape} vs {T.shape}")
    na = np.linalg.norm(A, axis=-1)
    nt = np.linalg.norm(T, axis=-1)
    if np.any(na == 0) or np.any(nt == 0):
        raise DegenerateVectorError("cosine_matrix: zero-norm row")
    return check_finite((A @ T.T) / (na[:, None] * nt[None, :]), "cosine_matrix")


def cosine_matrix_backward(grad, A, T):
    """Gradient w.r.t. ``A`` only; ``T`` is treated as a constant table."""
    A = np.asarray(A, dtype=ACC)
    T = np.asarray(T, dtype=ACC)
    na = np.linalg.norm(A, axis=-1)
    Tn = T / np.linalg.norm(T, axis=-1, keepdims=True)
    cos = (A @ Tn.T) / na[:, None]
    g = np.asarray(grad, dtype=ACC)
    return (g @ Tn) / na[:, None] - (g * cos).sum(axis=1)[:, None] * A / na[:, None] ** 2


# -- softmax cross-entropy -------------------------------------------------

def log_softmax(z):
    z = np.asarray(z, dtype=ACC)
    s = z - z.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, targets):
    """Per-row cross-entropy, max-subtracted."""
    lp = log_softmax(logits)
    targets = np.asarray(targets)
    return check_finite(-np.take_along_axis(lp, targets[:, None], axis=1)[:, 0], "cross_entropy")


def softmax_cross_entropy_backward(grad, logits, targets):
    p = np.exp(log_softmax(logits))
    p[np.arange(len(targets)), targets] -= 1.0
    return np.asarray(grad, dtype=ACC)[:, None] * p


# -- recorded adjoints -----------------------------------------------------

@dataclass
class Node:
    """Saved operands of one forward call, consumed by :func:`backward`."""

    op: str
    saved: tuple
    meta: dict | None = None


_FORWARD: dict[str, Callable] = {
    "region_linear": region_linear,
    "global_avg_pool": global_avg_pool,
    "depthwise_conv_valid": depthwise_conv_valid,
    "relu": relu,
    "cosine": cosine,
    "cosine_matrix": cosine_matrix,
}


def trace(op: str, *args):
    """Run a forward op and return ``(out, node)`` for a later backward."""
    if op == "max":
        t, n_axes = args
        vals, idx = batched_max_argmax(t, n_axes)
        return vals, Node("max", (idx, np.shape(t), n_axes))
    if op not in _FORWARD:
        raise UsageError(f"trace: unknown op {op!r}")
    out = _FORWARD[op](*args)
    saved = (np.shape(args[0]),) if op == "global_avg_pool" else args
    return out, Node(op, saved)


def backward(node, grad):
    """Adjoint of a traced op; returns one gradient per differentiable input."""
    if not isinstance(node, Node) or node.saved is None:
        raise UsageError("backward: no recorded forward pass for this adjoint")
    rule = {
        "region_linear": region_linear_backward,
        "global_avg_pool": global_avg_pool_backward,
        "depthwise_conv_valid": depthwise_conv_valid_backward,
        "relu": relu_backward,
        "cosine": cosine_backward,
        "cosine_matrix": cosine_matrix_backward,
        "max": max_backward,
    }.get(node.op)
    if rule is None:
        raise UsageError(f"backward: no adjoint registered for op {node.op!r}")
    return rule(grad, *node.saved)
