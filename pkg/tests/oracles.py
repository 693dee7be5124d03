"""Independent loop / direct-formula oracles shared by the tests.

Nothing here imports the package's numeric code, so the oracles stay
independent of the paths they check.
"""

import math

import numpy as np


def region_linear_loop(v, P):
    C, H, W = v.shape
    K = P.shape[1]
    out = np.zeros((K, H, W))
    for k in range(K):
        for i in range(H):
            for j in range(W):
                s = 0.0
                for c in range(C):
                    s += v[c, i, j] * P[c, k]
                out[k, i, j] = s
    return out


def avg_pool_loop(v):
    C, H, W = v.shape
    out = np.zeros(C)
    for c in range(C):
        s = 0.0
        for i in range(H):
            for j in range(W):
                s += v[c, i, j]
        out[c] = s / (H * W)
    return out


def conv_loop(v, k):
    C, H, W = v.shape
    _, h, w = k.shape
    out = np.zeros((C, H - h + 1, W - w + 1))
    for c in range(C):
        for i in range(H - h + 1):
            for j in range(W - w + 1):
                s = 0.0
                for p in range(h):
                    for q in range(w):
                        s += v[c, i + p, j + q] * k[c, p, q]
                out[c, i, j] = s
    return out


def max_scan(t):
    """Linear scan in row-major order; first maximum wins."""
    best, best_idx = -math.inf, None
    for idx in np.ndindex(*t.shape):
        if t[idx] > best:
            best, best_idx = t[idx], idx
    return best, best_idx


def concentrate_loop(M, peaks):
    K, H, W = M.shape
    total = 0.0
    for k in range(K):
        pi, pj = peaks[k]
        for i in range(H):
            for j in range(W):
                total += M[k, i, j] * ((i - pi) ** 2 + (j - pj) ** 2)
    return total


def cos_direct(u, w):
    dot = sum(float(a) * float(b) for a, b in zip(u, w))
    nu = math.sqrt(sum(float(a) ** 2 for a in u))
    nw = math.sqrt(sum(float(b) ** 2 for b in w))
    return dot / (nu * nw)


def cls_loss_direct(a_hat, y_row, seen_rows, tau):
    """Softmax cross-entropy straight from the formula, in mpmath."""
    import mpmath

    mpmath.mp.dps = 40
    logits = [mpmath.mpf(cos_direct(a_hat, r)) / tau for r in seen_rows]
    num = mpmath.e ** logits[y_row]
    den = mpmath.fsum(mpmath.e**z for z in logits)
    return float(-mpmath.log(num / den))


def reg_loss_loop(a, b):
    s = 0.0
    for x, y in zip(a, b):
        s += (float(x) - float(y)) ** 2
    return s


def per_class_counts(pred, truth, classes):
    accs = []
    for c in classes:
        n = hit = 0
        for p, t in zip(pred, truth):
            if t == c:
                n += 1
                hit += p == c
        if n:
            accs.append(hit / n)
    return sum(accs) / len(accs) if accs else 0.0


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))
