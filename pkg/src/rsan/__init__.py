"""Region-aligned zero-shot recognition head on precomputed feature maps.

Submodules: ``tensor_ops`` (numeric kernels and adjoints), ``region_mapping``,
``cosine_classifier``, ``attribute_constraint``, ``model`` (joint loss),
``trainer``, ``evaluation``, ``synthetic_bench``, ``checkpoint``, ``config``
and ``cli``.
"""

from .cosine_classifier import ClassifierConfig, SemanticTable
from .errors import RSANError
from .model import Flags, RSANModel, init_model, joint_loss
from .synthetic_bench import BenchSpec, generate
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BenchSpec", "ClassifierConfig", "Flags", "RSANError", "RSANModel", "SemanticTable", "TrainConfig",
    "generate", "init_model", "joint_loss", "train",
]
