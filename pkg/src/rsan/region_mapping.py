"""Region-based mapping: attribute saliency maps, concentrate loss, and the
global-average-pooling baseline used for ablations."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_ops as ops
from .errors import ContractViolation, DimensionError


@dataclass
class SaliencyResult:
    M: np.ndarray  # (..., K, H, W)
    peaks: np.ndarray  # (..., K, 2) integer (i, j)
    a_hat: np.ndarray  # (..., K)


def saliency(v, P) -> SaliencyResult:
    """Project each region onto the attributes and take per-attribute peaks."""
    M = ops.region_linear(v, P)
    vals, flat = ops.batched_max_argmax(M, 2)
    W = M.shape[-1]
    peaks = np.stack([flat // W, flat % W], axis=-1)
    return SaliencyResult(M=M, peaks=peaks, a_hat=vals)


def predict_semantic(v, P):
    return saliency(v, P).a_hat


def baseline_predict(v, V):
    """Global average pooling followed by a linear map.

    The pooled vector goes through ``region_linear`` as a 1x1 map so the
    reduction order matches the region path exactly.
    """
    g = ops.global_avg_pool(v)
    return ops.region_linear(g[..., None, None], V)[..., 0, 0]


def _distance_sq(H, W, peaks):
    ii = np.arange(H, dtype=np.float64)[:, None]
    jj = np.arange(W, dtype=np.float64)[None, :]
    pi = peaks[..., 0, None, None].astype(np.float64)
    pj = peaks[..., 1, None, None].astype(np.float64)
    return (ii - pi) ** 2 + (jj - pj) ** 2


def _check_peaks(M, peaks):
    peaks = np.asarray(peaks)
    if peaks.shape != M.shape[:-2] + (2,):
        raise DimensionError(f"concentrate_loss: peaks shape {peaks.shape} does not fit M {M.shape}")
    _, flat = ops.batched_max_argmax(M, 2)
    W = M.shape[-1]
    if not (np.array_equal(flat // W, peaks[..., 0]) and np.array_equal(flat % W, peaks[..., 1])):
        raise ContractViolation("concentrate_loss: peaks are not the row-major-first argmax of M")
    return peaks


def concentrate_loss(M, peaks):
    """Distance-weighted saliency mass around each attribute's peak.

    Summed over attributes and regions with no normalization. Leading batch
    axes are kept, so a (B, K, H, W) map gives B losses.
    """
    M = np.asarray(M)
    peaks = _check_peaks(M, peaks)
    D = _distance_sq(M.shape[-2], M.shape[-1], peaks)
    loss = (M.astype(np.float64) * D).sum(axis=(-3, -2, -1))
    return ops.check_finite(loss, "concentrate_loss")


def concentrate_loss_backward(grad, M, peaks):
    """Gradient w.r.t. M with the peak coordinates held fixed."""
    D = _distance_sq(M.shape[-2], M.shape[-1], np.asarray(peaks))
    return np.asarray(grad, dtype=np.float64)[..., None, None, None] * D


def relative_concentrate_loss(M, peaks):
    """Concentrate loss on ``relu(M) / peak`` per attribute.

    Bounded in ``[0, sum of squared distances]`` and invariant to the scale
    of M. Attributes whose peak is not positive contribute 0.
    """
    M = np.asarray(M, dtype=np.float64)
    peaks = _check_peaks(M, peaks)
    D = _distance_sq(M.shape[-2], M.shape[-1], peaks)
    top = M.max(axis=(-2, -1))
    num = (np.maximum(M, 0) * D).sum(axis=(-2, -1))
    per = np.divide(num, top, out=np.zeros_like(num), where=top > 0)
    return ops.check_finite(per.sum(axis=-1), "relative_concentrate_loss")


def relative_concentrate_loss_backward(grad, M, peaks):
    M = np.asarray(M, dtype=np.float64)
    peaks = np.asarray(peaks)
    D = _distance_sq(M.shape[-2], M.shape[-1], peaks)
    top = M.max(axis=(-2, -1))
    pos = top > 0
    safe = np.where(pos, top, 1.0)
    g = np.asarray(grad, dtype=np.float64)[..., None] * pos
    num = (np.maximum(M, 0) * D).sum(axis=(-2, -1))
    out = (g / safe)[..., None, None] * D * (M > 0)
    W = M.shape[-1]
    flat = peaks[..., 0] * W + peaks[..., 1]
    d_top = -g * num / safe**2
    out += ops.max_backward(d_top, flat, M.shape, 2)
    return out


# -- saliency export -------------------------------------------------------

def minmax_normalize(m):
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def write_saliency_csv(path, m):
    m = np.asarray(m, dtype=np.float64)
    lines = [",".join(repr(float(x)) for x in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def write_pgm(path, m, comment: str | None = None):
    """8-bit binary PGM (P5) of the min-max normalized map."""
    m = np.asarray(m)
    pix = np.round(minmax_normalize(m) * 255).astype(np.uint8)
    H, W = pix.shape
    header = b"P5\n"
    if comment:
        header += b"# " + comment.encode("ascii") + b"\n"
    header += f"{W} {H}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    W, H = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + W * H], dtype=np.uint8).reshape(H, W)
