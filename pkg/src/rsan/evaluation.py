"""ZSL / GZSL evaluation of a trained model on a dataset's test split."""

from __future__ import annotations

import numpy as np

from . import cosine_classifier as cc
from .model import RSANModel
from .synthetic_bench import Dataset, localization_score


def _test(ds: Dataset, seen=None):
    rows = ds.indices("test", seen=seen)
    return rows, ds.features[rows].astype(np.float64)


def evaluate_zsl(model: RSANModel, ds: Dataset) -> float:
    """Per-class top-1 accuracy on unseen test samples among unseen classes."""
    rows, X = _test(ds, seen=False)
    pred = cc.zsl_predict(model.predict_semantic(X), ds.table, model.score_kind)
    return cc.per_class_accuracy(pred, ds.labels[rows], ds.table.unseen_ids)


def gzsl_predictions(model: RSANModel, ds: Dataset, cfg: cc.ClassifierConfig):
    rows, X = _test(ds)
    pred = cc.gzsl_predict(model.predict_semantic(X), ds.table, cfg, model.score_kind)
    return pred, ds.labels[rows]


def evaluate_gzsl(model: RSANModel, ds: Dataset, cfg: cc.ClassifierConfig) -> cc.GZSLMetrics:
    pred, truth = gzsl_predictions(model, ds, cfg)
    return cc.gzsl_metrics(pred, truth, ds.table)


def gamma_sweep(model: RSANModel, ds: Dataset, cfg: cc.ClassifierConfig, gammas):
    """(gamma, metrics, number of seen-class predictions) for each gamma.

    The semantic predictions are computed once and reused."""
    rows, X = _test(ds)
    a = model.predict_semantic(X)
    truth = ds.labels[rows]
    out = []
    for g in gammas:
        c = cc.ClassifierConfig(cfg.tau_s, cfg.sigma_scale, float(g))
        pred = cc.gzsl_predict(a, ds.table, c, model.score_kind)
        out.append((float(g), cc.gzsl_metrics(pred, truth, ds.table), int(ds.table.is_seen(pred).sum())))
    return out


def evaluate_localization(model: RSANModel, ds: Dataset, split="test") -> float:
    rows = ds.indices(split)
    sal = model.saliency(ds.features[rows].astype(np.float64))
    return localization_score(sal.peaks, ds.plants[rows])
