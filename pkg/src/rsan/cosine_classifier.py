"""Cosine-embedding classification over class semantic descriptions, ZSL and
calibrated-stacking GZSL decisions, and per-class metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_ops as ops
from .errors import ConfigurationError, DataError, DegenerateVectorError, UsageError


@dataclass
class SemanticTable:
    """Class attribute vectors a(y) with a seen/unseen split.

    Rows are indexed by position; ``class_ids`` gives each row a stable id
    and ties in any argmax break toward the lowest id.
    """

    attributes: np.ndarray
    seen_mask: np.ndarray
    class_ids: np.ndarray = None

    def __post_init__(self):
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        self.seen_mask = np.asarray(self.seen_mask, dtype=bool)
        if self.class_ids is None:
            self.class_ids = np.arange(len(self.attributes))
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if self.attributes.ndim != 2:
            raise DataError(f"attribute table must be 2-D, got {self.attributes.shape}")
        n = len(self.attributes)
        if self.seen_mask.shape != (n,) or self.class_ids.shape != (n,):
            raise DataError("seen_mask and class_ids must have one entry per class")
        if len(np.unique(self.class_ids)) != n:
            raise DataError("class ids must be unique")
        if np.any(np.linalg.norm(self.attributes, axis=1) == 0):
            raise DegenerateVectorError("semantic table has a zero-norm row")
        # rows sorted by id make first-index argmax equal to lowest-id tie-break
        if np.any(np.diff(self.class_ids) < 0):
            order = np.argsort(self.class_ids, kind="stable")
            self.attributes = self.attributes[order]
            self.seen_mask = self.seen_mask[order]
            self.class_ids = self.class_ids[order]

    @property
    def K(self) -> int:
        return self.attributes.shape[1]

    @property
    def seen_ids(self):
        return self.class_ids[self.seen_mask]

    @property
    def unseen_ids(self):
        return self.class_ids[~self.seen_mask]

    def rows(self, ids):
        return np.searchsorted(self.class_ids, np.asarray(ids))

    def is_seen(self, ids):
        return self.seen_mask[self.rows(ids)]


@dataclass
class ClassifierConfig:
    tau_s: float = 0.04
    sigma_scale: float = 20.0
    gamma: float = 0.7

    def __post_init__(self):
        if not self.tau_s > 0:
            raise ConfigurationError(f"tau_s must be positive, got {self.tau_s}")
        if not self.sigma_scale > 0:
            raise ConfigurationError(f"sigma_scale must be positive, got {self.sigma_scale}")
        if self.gamma < 0:
            raise ConfigurationError(f"gamma must be nonnegative, got {self.gamma}")


def _seen_targets(y, table):
    seen = table.seen_ids
    y = np.atleast_1d(np.asarray(y))
    if len(seen) == 0:
        raise UsageError("classification_loss: table has no seen classes")
    pos = np.searchsorted(seen, y)
    pos = np.minimum(pos, len(seen) - 1)
    if np.any(seen[pos] != y):
        raise UsageError(f"classification_loss: label(s) {y[seen[pos] != y].tolist()} are not seen classes")
    return pos


def classification_loss(a_hat, y, table: SemanticTable, cfg: ClassifierConfig):
    """Temperature-scaled softmax over cosine logits, seen classes only.

    Accepts a single K-vector with a scalar label, or a (B, K) batch with B
    labels, in which case per-sample losses are returned.
    """
    single = np.ndim(a_hat) == 1
    A = np.atleast_2d(a_hat)
    targets = _seen_targets(y, table)
    logits = ops.cosine_matrix(A, table.attributes[table.seen_mask]) / cfg.tau_s
    loss = ops.softmax_cross_entropy(logits, targets)
    return float(loss[0]) if single else loss


def classification_loss_backward(grad, a_hat, y, table, cfg):
    A = np.atleast_2d(np.asarray(a_hat, dtype=np.float64))
    targets = _seen_targets(y, table)
    T = table.attributes[table.seen_mask]
    logits = ops.cosine_matrix(A, T) / cfg.tau_s
    g_logits = ops.softmax_cross_entropy_backward(np.atleast_1d(grad), logits, targets)
    dA = ops.cosine_matrix_backward(g_logits / cfg.tau_s, A, T)
    return dA[0] if np.ndim(a_hat) == 1 else dA


def dot_classification_loss(a_hat, y, table):
    """Plain dot-product logits; the ablation counterpart of cosine embedding."""
    A = np.atleast_2d(np.asarray(a_hat, dtype=np.float64))
    targets = _seen_targets(y, table)
    logits = A @ table.attributes[table.seen_mask].T
    return ops.softmax_cross_entropy(logits, targets)


def dot_classification_loss_backward(grad, a_hat, y, table):
    A = np.atleast_2d(np.asarray(a_hat, dtype=np.float64))
    targets = _seen_targets(y, table)
    T = table.attributes[table.seen_mask]
    g_logits = ops.softmax_cross_entropy_backward(np.atleast_1d(grad), A @ T.T, targets)
    return g_logits @ T


def similarity(a_hat, table: SemanticTable, kind: str = "cosine"):
    """Score matrix (B x |Y|) between predictions and every table row."""
    A = np.atleast_2d(a_hat)
    if kind == "cosine":
        return ops.cosine_matrix(A, table.attributes)
    if kind == "dot":
        return np.asarray(A, dtype=np.float64) @ table.attributes.T
    raise ConfigurationError(f"unknown similarity {kind!r}")


def zsl_predict(a_hat, table: SemanticTable, kind: str = "cosine"):
    """Best-matching unseen class (lowest id on ties)."""
    if not np.any(~table.seen_mask):
        raise ConfigurationError("zsl_predict: table has no unseen classes")
    S = similarity(a_hat, table, kind)[:, ~table.seen_mask]
    pred = table.unseen_ids[np.argmax(S, axis=1)]
    return int(pred[0]) if np.ndim(a_hat) == 1 else pred


def gzsl_scores(a_hat, table: SemanticTable, cfg: ClassifierConfig, kind: str = "cosine"):
    return cfg.sigma_scale * similarity(a_hat, table, kind) - cfg.gamma * table.seen_mask


def gzsl_predict(a_hat, table: SemanticTable, cfg: ClassifierConfig, kind: str = "cosine"):
    """Calibrated stacking: seen-class scores are lowered by ``gamma``."""
    pred = table.class_ids[np.argmax(gzsl_scores(a_hat, table, cfg, kind), axis=1)]
    return int(pred[0]) if np.ndim(a_hat) == 1 else pred


def seen_restricted_predict(a_hat, table: SemanticTable, kind: str = "cosine"):
    S = similarity(a_hat, table, kind)[:, table.seen_mask]
    return table.seen_ids[np.argmax(S, axis=1)]


# -- metrics ---------------------------------------------------------------

def per_class_accuracy(predictions, truths, classes):
    """Mean over ``classes`` of per-class accuracy; classes with no samples
    are skipped. Returns 0.0 when none of the classes has samples."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    accs = []
    for c in classes:
        sel = truths == c
        if sel.any():
            accs.append(np.mean(predictions[sel] == c))
    return float(np.mean(accs)) if accs else 0.0


def harmonic_mean(S, U):
    return 0.0 if S + U == 0 else 2 * S * U / (S + U)


@dataclass
class GZSLMetrics:
    S: float
    U: float
    H: float
    T1: float


def gzsl_metrics(predictions, truths, table: SemanticTable) -> GZSLMetrics:
    """Macro-averaged seen (S), unseen (U), harmonic mean (H), and T1 over
    every class present in ``truths``."""
    truths = np.asarray(truths)
    known = set(table.class_ids.tolist())
    bad = sorted(set(truths.tolist()) - known)
    if bad:
        raise DataError(f"gzsl_metrics: truth classes {bad} not in table")
    S = per_class_accuracy(predictions, truths, table.seen_ids)
    U = per_class_accuracy(predictions, truths, table.unseen_ids)
    T1 = per_class_accuracy(predictions, truths, np.unique(truths))
    return GZSLMetrics(S=S, U=U, H=harmonic_mean(S, U), T1=T1)


@dataclass
class MetricsRecord:
    dataset: str
    split: str
    T1: float
    S: float
    U: float
    H: float
    gamma: float
    tau_s: float
    seed: int
    config_hash: str = ""
    fields: tuple = field(default=("dataset", "split", "T1", "S", "U", "H", "gamma", "tau_s", "seed", "config_hash"),
                          repr=False)

    def row(self):
        return [getattr(self, f) for f in self.fields]


def append_metrics(path, record: MetricsRecord):
    """Append one CSV line; writes the header first if the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(record.fields)
        w.writerow(record.row())
