"""Episodic SGD training of the joint objective."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import cosine_classifier as cc
from .errors import ConfigurationError, NonFiniteError
from .model import Flags, LossTerms, RSANModel, batch_mean, init_model, joint_loss
from .synthetic_bench import Dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lambda1: float = 0.1
    lambda2: float = 1.0
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-5
    lr_decay_factor: float = 0.5
    lr_decay_epochs: int = 10
    epochs: int = 20
    batches_per_epoch: int = 300
    episode_M: int = 16
    episode_N: int = 2
    seed: int = 0
    tau_s: float = 0.04
    sigma_scale: float = 20.0
    gamma: float = 0.7
    concentrate_mode: str = "raw"
    kernel_size: int = 3
    kernel_broadcast: bool = False
    dtype: str = "float64"
    use_region_mapping: bool = True
    use_concentrate: bool = True
    use_cosine_embedding: bool = True
    use_regression: bool = True
    use_semantic_init: bool = True

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigurationError("lambda1 and lambda2 must be nonnegative")
        if not self.lr >= 0:
            raise ConfigurationError("lr must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be nonnegative")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigurationError("lr_decay_factor must lie in (0, 1]")
        for name in ("lr_decay_epochs", "epochs", "batches_per_epoch", "episode_M", "episode_N", "kernel_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.concentrate_mode not in ("raw", "relative"):
            raise ConfigurationError(f"concentrate_mode must be raw or relative, got {self.concentrate_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        self.flags.validate()

    @property
    def flags(self) -> Flags:
        return Flags(**{f.name: getattr(self, f.name) for f in dataclasses.fields(Flags)})

    def classifier(self, gamma: float | None = None) -> cc.ClassifierConfig:
        return cc.ClassifierConfig(self.tau_s, self.sigma_scale, self.gamma if gamma is None else gamma)

    def lr_at(self, epoch: int) -> float:
        """Step schedule, epochs counted from 0."""
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_epochs)


@dataclass
class EpisodeBatch:
    indices: np.ndarray  # dataset rows, class-major
    labels: np.ndarray
    classes: np.ndarray


def class_index(labels, rows, classes) -> dict:
    """Map each class to the dataset rows (from ``rows``) that carry it."""
    labels = np.asarray(labels)
    rows = np.asarray(rows)
    return {int(c): rows[labels[rows] == c] for c in classes}


def sample_episode(index: dict, M: int, N: int, rng: np.random.Generator) -> EpisodeBatch:
    """M distinct classes, N samples each. Classes with fewer than N samples
    are sampled with replacement."""
    classes = np.array(sorted(index))
    if len(classes) < M:
        raise ConfigurationError(f"episode needs {M} classes but only {len(classes)} seen classes exist")
    picked = np.sort(rng.choice(classes, size=M, replace=False))
    idx, labels = [], []
    for c in picked:
        rows = index[int(c)]
        if len(rows) == 0:
            raise ConfigurationError(f"class {c} has no training samples")
        idx.append(rng.choice(rows, size=N, replace=len(rows) < N))
        labels.append(np.full(N, c))
    return EpisodeBatch(np.concatenate(idx), np.concatenate(labels), picked)


class SGD:
    """Momentum SGD with decoupled weight decay:
    ``p <- p * (1 - lr * wd) - lr * buf`` where ``buf <- mu * buf + grad``."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict = {}

    def step(self, params: dict, grads: dict, lr: float):
        for name, g in grads.items():
            p = params[name]
            buf = self.buffers.get(name)
            buf = g.astype(p.dtype) if buf is None else self.momentum * buf + g
            self.buffers[name] = buf
            params[name] = (p * (1 - lr * self.weight_decay) - lr * buf).astype(p.dtype, copy=False)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    l_cls: float
    l_con: float
    l_reg: float
    val_T1: float


@dataclass
class TrainResult:
    model: RSANModel  # best-validation parameters
    final: RSANModel
    history: list = field(default_factory=list)
    best_epoch: int = -1
    rng_state: dict | None = None


def seen_val_T1(model: RSANModel, ds: Dataset) -> float:
    """Per-class accuracy on the seen-class validation split, scored among seen classes."""
    rows = ds.indices("val", seen=True)
    if len(rows) == 0:
        return float("nan")
    a = model.predict_semantic(ds.features[rows].astype(np.float64))
    pred = cc.seen_restricted_predict(a, ds.table, model.score_kind)
    return cc.per_class_accuracy(pred, ds.labels[rows], ds.table.seen_ids)


def write_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "l_cls", "l_con", "l_reg", "val_T1"])
        for r in history:
            w.writerow([r.epoch, repr(r.lr), repr(r.l_cls), repr(r.l_con), repr(r.l_reg), repr(r.val_T1)])


class TrainingAborted(NonFiniteError):
    def __init__(self, message, term, result: TrainResult):
        super().__init__(message, term)
        self.result = result


def train(config: TrainConfig, ds: Dataset, model: RSANModel | None = None, on_best=None) -> TrainResult:
    """Run ``epochs * batches_per_epoch`` episodic SGD steps.

    ``on_best(model, epoch)`` fires whenever validation T1 reaches a new best
    (ties go to the later epoch), e.g. to write a checkpoint.
    """
    dtype = np.dtype(config.dtype)
    if model is None:
        C, _, _ = ds.shape
        model = init_model(C, ds.table.K, config.flags, config.seed, config.kernel_size,
                           ds.embeddings, config.kernel_broadcast, dtype)
    model = model.copy()
    train_rows = ds.indices("train", seen=True)
    index = class_index(ds.labels, train_rows, ds.table.seen_ids)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    opt = SGD(config.momentum, config.weight_decay)
    result = TrainResult(model=model.copy(), final=model)
    best = -np.inf

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        sums = []
        for _ in range(config.batches_per_epoch):
            ep = sample_episode(index, config.episode_M, config.episode_N, rng)
            X = ds.features[ep.indices].astype(dtype)
            try:
                terms, grads = joint_loss(X, ep.labels, model, ds.table, config.lambda1, config.lambda2, config.tau_s,
                                          concentrate_mode=config.concentrate_mode)
            except NonFiniteError as exc:
                result.rng_state = rng.bit_generator.state
                raise TrainingAborted(f"epoch {epoch}: {exc}", exc.term, result) from exc
            opt.step(model.params, grads, lr)
            sums.append(terms)
        val = seen_val_T1(model, ds)
        rec = EpochRecord(epoch, lr, batch_mean([t.l_cls for t in sums]), batch_mean([t.l_con for t in sums]),
                          batch_mean([t.l_reg for t in sums]), val)
        result.history.append(rec)
        log.info("epoch %d lr=%g l_cls=%.4f l_con=%.4f l_reg=%.4f val_T1=%.4f", epoch, lr, rec.l_cls,
                 rec.l_con, rec.l_reg, val)
        if not (val < best):
            best = val
            result.model = model.copy()
            result.best_epoch = epoch
            if on_best is not None:
                on_best(result.model, epoch)
    result.final = model
    result.rng_state = rng.bit_generator.state
    return result


def config_from_dict(d: dict) -> TrainConfig:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigurationError(f"unknown train keys: {unknown}")
    return TrainConfig(**d)


__all__ = [
    "TrainConfig", "EpisodeBatch", "sample_episode", "SGD", "train", "TrainResult", "EpochRecord",
    "LossTerms", "joint_loss", "write_log", "config_from_dict", "TrainingAborted",
]
