"""The RSAN head: parameters, forward pass, and the joint loss with gradients.

Feature maps are inputs, so the two branches share no parameters: the
region/baseline projection only sees classification and concentrate
gradients, the attribute kernels only see the regression gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import attribute_constraint as ac
from . import cosine_classifier as cc
from . import region_mapping as rm
from . import tensor_ops as ops
from .errors import ConfigurationError, NonFiniteError


@dataclass
class Flags:
    use_region_mapping: bool = True
    use_concentrate: bool = True
    use_cosine_embedding: bool = True
    use_regression: bool = True
    use_semantic_init: bool = True

    def validate(self):
        if self.use_concentrate and not self.use_region_mapping:
            raise ConfigurationError("use_concentrate requires use_region_mapping")
        if self.use_semantic_init and not self.use_regression:
            raise ConfigurationError("use_semantic_init requires use_regression")


@dataclass
class RSANModel:
    params: dict  # name -> array; subset of {"P", "V", "kernels"}
    flags: Flags = field(default_factory=Flags)
    W_init: np.ndarray | None = None

    @property
    def score_kind(self) -> str:
        return "cosine" if self.flags.use_cosine_embedding else "dot"

    def copy(self) -> "RSANModel":
        return RSANModel(
            {k: v.copy() for k, v in self.params.items()},
            Flags(**vars(self.flags)),
            None if self.W_init is None else self.W_init.copy(),
        )

    def predict_semantic(self, X):
        """Predicted attribute vector per sample (region max or pooled linear)."""
        if self.flags.use_region_mapping:
            return rm.predict_semantic(X, self.params["P"])
        return rm.baseline_predict(X, self.params["V"])

    def saliency(self, X):
        if not self.flags.use_region_mapping:
            raise ConfigurationError("saliency maps need the region-mapping branch")
        return rm.saliency(X, self.params["P"])

    def regress(self, X):
        return ac.attribute_regression(X, ac.AttributeKernelBank(self.W_init, self.params["kernels"]))


def init_model(C: int, K: int, flags: Flags, seed: int, kernel_size: int = 3,
               embeddings: ac.AttributeEmbeddings | None = None, kernel_broadcast: bool = False,
               dtype=np.float64) -> RSANModel:
    """Fresh parameters. Each parameter group draws from its own seeded
    stream so toggling one branch never changes another's initialization."""
    flags.validate()
    proj_ss, kern_ss = np.random.SeedSequence(seed).spawn(2)
    s = ac.glorot_bound(C, K)
    proj = np.random.default_rng(proj_ss).uniform(-s, s, size=(C, K))
    params = {"P" if flags.use_region_mapping else "V": proj.astype(dtype)}
    W_init = None
    if flags.use_regression:
        rng = np.random.default_rng(kern_ss)
        if flags.use_semantic_init:
            if embeddings is None:
                raise ConfigurationError("semantic kernel initialization needs attribute embeddings")
            if embeddings.E.shape[0] != K:
                raise ConfigurationError(f"embeddings have {embeddings.E.shape[0]} attributes, expected {K}")
            bank = ac.init_kernels(embeddings, C, kernel_size, kernel_size, rng, broadcast=kernel_broadcast)
        else:
            bank = ac.init_kernels_random(K, C, kernel_size, kernel_size, rng)
        params["kernels"] = bank.kernels.astype(dtype)
        W_init = bank.W_init
    return RSANModel(params, flags, W_init)


@dataclass
class LossTerms:
    total: float
    l_cls: float
    l_con: float
    l_reg: float


def batch_mean(x) -> float:
    return math.fsum(np.asarray(x, dtype=np.float64).ravel().tolist()) / np.size(x)


def _finite(value, term):
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite {term} loss ({value})", term=term)
    return value


CONCENTRATE = {
    "raw": (rm.concentrate_loss, rm.concentrate_loss_backward),
    "relative": (rm.relative_concentrate_loss, rm.relative_concentrate_loss_backward),
}


def joint_loss(X, y, model: RSANModel, table: cc.SemanticTable, lambda1: float, lambda2: float,
               tau_s: float, with_grad: bool = True, concentrate_mode: str = "raw"):
    """Batch-mean classification + lambda1 * concentrate + lambda2 * regression.

    Returns ``(LossTerms, grads)``; disabled terms are exactly 0 and produce
    no gradient entry.
    """
    f = model.flags
    B = len(y)
    grads = {}
    clf = cc.ClassifierConfig(tau_s=tau_s)
    g_mean = np.full(B, 1.0 / B)

    if f.use_region_mapping:
        P = model.params["P"]
        sal = rm.saliency(X, P)
        a_hat = sal.a_hat
    else:
        V = model.params["V"]
        g = ops.global_avg_pool(X)
        a_hat = rm.baseline_predict(X, V)

    if f.use_cosine_embedding:
        per = cc.classification_loss(a_hat, y, table, clf)
    else:
        per = cc.dot_classification_loss(a_hat, y, table)
    l_cls = _finite(batch_mean(per), "l_cls")

    l_con = 0.0
    if f.use_concentrate:
        con_fwd, con_bwd = CONCENTRATE[concentrate_mode]
        l_con = _finite(batch_mean(con_fwd(sal.M, sal.peaks)), "l_con")

    l_reg = 0.0
    if f.use_regression:
        kernels = model.params["kernels"]
        a_reg, cache = ac.attribute_regression_traced(X, kernels)
        a_true = table.attributes[table.rows(y)]
        l_reg = _finite(batch_mean(ac.regression_loss(a_reg, a_true)), "l_reg")

    total = _finite(l_cls + lambda1 * l_con + lambda2 * l_reg, "total")
    terms = LossTerms(total, l_cls, l_con, l_reg)
    if not with_grad:
        return terms, grads

    if f.use_cosine_embedding:
        dA = cc.classification_loss_backward(g_mean, a_hat, y, table, clf)
    else:
        dA = cc.dot_classification_loss_backward(g_mean, a_hat, y, table)
    if f.use_region_mapping:
        W = sal.M.shape[-1]
        flat = sal.peaks[..., 0] * W + sal.peaks[..., 1]
        dM = ops.max_backward(dA, flat, sal.M.shape, 2)
        if f.use_concentrate and lambda1 != 0:
            dM = dM + lambda1 * con_bwd(g_mean, sal.M, sal.peaks)
        grads["P"] = ops.region_linear_backward(dM, X, P)[1]
    else:
        grads["V"] = ops.region_linear_backward(dA[..., None, None], g[..., None, None], V)[1]
    if f.use_regression:
        dreg = lambda2 * ac.regression_loss_backward(g_mean, a_reg, a_true)
        grads["kernels"] = ac.attribute_regression_backward(dreg, X, kernels, cache)[1]
    for k, v in grads.items():
        ops.check_finite(v, f"grad[{k}]")
    return terms, grads
