"""Planted-attribute benchmark.

Each class has a nonnegative attribute vector a(y). A sample of class y is
a C x H x W map of half-normal noise (scale ``noise_sigma``) in which every
active attribute k adds ``a(y)[k] * signature[k]`` at one random region.
Signatures and noise are nonnegative, as post-ReLU encoder features are.
Unseen classes mix the attribute patterns of seen classes, so transfer is
possible by construction.

The background is pure noise by default. A positive ``clutter_strength``
puts weak copies of random signatures on regions that hold no plant, a
harder variant where distractor parts share the features of real ones.
"""

from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attribute_constraint import AttributeEmbeddings
from .cosine_classifier import SemanticTable
from .errors import ConfigurationError, FormatError

TRAIN, VAL, TEST = 0, 1, 2
SPLITS = {"train": TRAIN, "val": VAL, "test": TEST}


@dataclass
class BenchSpec:
    C: int = 32
    H: int = 14
    W: int = 14
    K: int = 16
    num_seen: int = 12
    num_unseen: int = 4
    samples_per_class: int = 30
    noise_sigma: float = 0.05
    d: int = 16
    seed: int = 0
    orthogonal: bool = True
    min_active: int = 3
    max_active: int = 5
    strength_low: float = 0.5
    strength_high: float = 1.0
    clutter_density: float = 0.5
    clutter_strength: float = 0.0
    embedding_noise: float = 0.05
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    max_class_cosine: float = 0.95

    def __post_init__(self):
        for name in ("C", "H", "W", "K", "num_seen", "samples_per_class", "d", "min_active"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.num_unseen < 0 or self.noise_sigma < 0 or self.clutter_strength < 0:
            raise ConfigurationError("num_unseen, noise_sigma and clutter_strength must be nonnegative")
        if not 0 <= self.clutter_density <= 1:
            raise ConfigurationError("clutter_density must lie in [0, 1]")
        if self.max_active > self.K or self.min_active > self.max_active:
            raise ConfigurationError("need min_active <= max_active <= K")
        if self.orthogonal and self.C < self.K:
            raise ConfigurationError(
                f"cannot draw {self.K} orthogonal signatures in {self.C} channels; set orthogonal=false"
            )
        if not 0 < self.strength_low <= self.strength_high:
            raise ConfigurationError("need 0 < strength_low <= strength_high")


@dataclass
class Dataset:
    features: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,)
    split: np.ndarray  # (N,) TRAIN/VAL/TEST
    table: SemanticTable
    plants: np.ndarray | None = None  # (N, K, 2), -1 where inactive
    embeddings: AttributeEmbeddings | None = None
    signatures: np.ndarray | None = None  # (K, C)
    spec: BenchSpec | None = field(default=None, repr=False)

    def indices(self, split: str | int, seen: bool | None = None):
        code = SPLITS.get(split, split)
        sel = self.split == code
        if seen is not None:
            sel &= self.table.is_seen(self.labels) == seen
        return np.flatnonzero(sel)

    @property
    def shape(self):
        return self.features.shape[1:]


# -- generation ------------------------------------------------------------

def _signatures(spec: BenchSpec, rng):
    """Nonnegative unit signatures, like post-ReLU encoder channels.

    Orthogonal mode partitions the channels at random into K disjoint
    supports with random positive weights (nonnegative orthonormal rows).
    Otherwise each signature is a sparse nonnegative unit vector and
    near-parallel pairs are rejected.
    """
    if spec.orthogonal:
        sig = np.zeros((spec.K, spec.C))
        for k, support in enumerate(np.array_split(rng.permutation(spec.C), spec.K)):
            wgt = rng.uniform(0.5, 1.0, size=len(support))
            sig[k, support] = wgt / np.linalg.norm(wgt)
        return sig
    nnz = max(2, spec.C // 4)
    limit = 0.9
    sig = []
    for _ in range(100_000):
        s = np.zeros(spec.C)
        s[rng.choice(spec.C, size=min(nnz, spec.C), replace=False)] = rng.uniform(0.5, 1.0, size=min(nnz, spec.C))
        s /= np.linalg.norm(s)
        if all(s @ t < limit for t in sig):
            sig.append(s)
            if len(sig) == spec.K:
                return np.array(sig)
    raise ConfigurationError(f"could not place {spec.K} separated signatures in {spec.C} dims")


def _class_attributes(spec: BenchSpec, rng):
    K = spec.K
    for _ in range(10_000):
        seen = np.zeros((spec.num_seen, K))
        for c in range(spec.num_seen):
            n = rng.integers(spec.min_active, spec.max_active + 1)
            act = rng.choice(K, size=n, replace=False)
            seen[c, act] = rng.uniform(spec.strength_low, spec.strength_high, size=n)
        if spec.num_seen * spec.min_active >= K and np.any(seen.max(axis=0) == 0):
            continue
        unseen = np.zeros((spec.num_unseen, K))
        for u in range(spec.num_unseen):
            parents = rng.choice(spec.num_seen, size=2, replace=False)
            wgt = rng.uniform(0.35, 0.65)
            mix = wgt * seen[parents[0]] + (1 - wgt) * seen[parents[1]]
            unseen[u] = mix * (spec.strength_high / mix.max())
        table = np.vstack([seen, unseen])
        unit = table / np.linalg.norm(table, axis=1, keepdims=True)
        cos = unit @ unit.T
        np.fill_diagonal(cos, -1)
        if cos.max() < spec.max_class_cosine:
            return table
    raise ConfigurationError("could not draw class attribute vectors under max_class_cosine")


def _sample(spec: BenchSpec, a, signatures, rng):
    C, H, W, K = spec.C, spec.H, spec.W, spec.K
    v = np.abs(spec.noise_sigma * rng.standard_normal((C, H, W)))
    plants = np.full((K, 2), -1, dtype=np.int64)
    occupied = np.zeros((H, W), dtype=bool)
    for k in np.flatnonzero(a > 0):
        i, j = rng.integers(H), rng.integers(W)
        v[:, i, j] += a[k] * signatures[k]
        plants[k] = (i, j)
        occupied[i, j] = True
    if spec.clutter_strength > 0 and spec.clutter_density > 0:
        hit = (rng.random((H, W)) < spec.clutter_density) & ~occupied
        which = rng.integers(K, size=(H, W))
        amp = spec.clutter_strength * rng.uniform(0.5, 1.0, size=(H, W))
        for i, j in zip(*np.nonzero(hit)):
            v[:, i, j] += amp[i, j] * signatures[which[i, j]]
    return v, plants


def _embeddings(spec: BenchSpec, signatures, rng):
    R = rng.standard_normal((spec.C, spec.d)) / np.sqrt(spec.d)
    E = signatures @ R + spec.embedding_noise * rng.standard_normal((spec.K, spec.d))
    return AttributeEmbeddings(E, [f"attr{k:02d}" for k in range(spec.K)])


def generate(spec: BenchSpec) -> Dataset:
    """Build train/val/test splits for seen classes and test-only unseen classes.

    The same spec always produces the same bytes: every sample draws from
    its own stream keyed by (seed, sample index).
    """
    root = np.random.SeedSequence(spec.seed)
    sig_ss, cls_ss, emb_ss = root.spawn(3)
    signatures = _signatures(spec, np.random.default_rng(sig_ss))
    attrs = _class_attributes(spec, np.random.default_rng(cls_ss))
    n_cls = spec.num_seen + spec.num_unseen
    seen_mask = np.arange(n_cls) < spec.num_seen
    table = SemanticTable(attrs, seen_mask)

    n = spec.samples_per_class
    n_val = int(round(n * spec.val_fraction))
    n_test = int(round(n * spec.test_fraction))
    if n - n_val - n_test < 1:
        raise ConfigurationError("samples_per_class too small for the requested val/test fractions")
    seen_split = np.array([TRAIN] * (n - n_val - n_test) + [VAL] * n_val + [TEST] * n_test)

    feats, labels, splits, plants = [], [], [], []
    for y in range(n_cls):
        for s in range(n):
            idx = y * n + s
            rng = np.random.default_rng([spec.seed, 0x5A3B, idx])
            v, pl = _sample(spec, attrs[y], signatures, rng)
            feats.append(v)
            plants.append(pl)
            labels.append(y)
            splits.append(seen_split[s] if seen_mask[y] else TEST)
    return Dataset(
        features=np.array(feats, dtype=np.float32),
        labels=np.array(labels, dtype=np.int64),
        split=np.array(splits, dtype=np.uint8),
        table=table,
        plants=np.array(plants, dtype=np.int64),
        embeddings=_embeddings(spec, signatures, np.random.default_rng(emb_ss)),
        signatures=signatures,
        spec=spec,
    )


# -- evaluation helpers ----------------------------------------------------

def localization_score(peaks, plants) -> float:
    """Fraction of active attributes whose saliency peak is within Chebyshev
    distance 1 of its planted region. Inactive attributes carry plant -1."""
    peaks = np.asarray(peaks)
    plants = np.asarray(plants)
    active = plants[..., 0] >= 0
    if not active.any():
        return 0.0
    cheb = np.abs(peaks - plants).max(axis=-1)
    return float(np.mean(cheb[active] <= 1))


def similar_class_map(table: SemanticTable, n: int = 2) -> dict:
    """Each unseen class mapped to its ``n`` nearest seen classes by attribute cosine."""
    unit = table.attributes / np.linalg.norm(table.attributes, axis=1, keepdims=True)
    seen_rows = np.flatnonzero(table.seen_mask)
    out = {}
    for r in np.flatnonzero(~table.seen_mask):
        cos = unit[seen_rows] @ unit[r]
        order = np.argsort(-cos, kind="stable")[:n]
        out[int(table.class_ids[r])] = [int(table.class_ids[seen_rows[o]]) for o in order]
    return out


def confusion_breakdown(predictions, truths, similar: dict) -> dict:
    """Per unseen class: share predicted as itself, as each listed similar
    seen class, and as anything else."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    table = {}
    for c, sims in similar.items():
        p = predictions[truths == c]
        if len(p) == 0:
            continue
        row = {"self": float(np.mean(p == c))}
        for s in sims:
            row[s] = float(np.mean(p == s))
        row["other"] = float(np.mean(~np.isin(p, [c, *sims])))
        table[c] = row
    return table


# -- RSANFEAT file format --------------------------------------------------
# little-endian:
#   8s magic "RSANFEAT" | u32 version
#   u32 classes, samples, C, H, W, K
#   f32 features[N*C*H*W] | i32 labels[N] | u8 split[N]
#   f64 attribute table K x |Y| | i32 class_ids[|Y|] | u8 seen_mask[|Y|]
#   u8 has_plants | (i16 plants[N*K*2] if has_plants)

MAGIC = b"RSANFEAT"
VERSION = 1


def dataset_bytes(ds: Dataset) -> bytes:
    N, C, H, W = ds.features.shape
    Y, K = ds.table.attributes.shape
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<7I", VERSION, Y, N, C, H, W, K))
    buf.write(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
    buf.write(np.asarray(ds.labels, dtype="<i4").tobytes())
    buf.write(np.asarray(ds.split, dtype="u1").tobytes())
    buf.write(np.ascontiguousarray(ds.table.attributes.T, dtype="<f8").tobytes())
    buf.write(np.asarray(ds.table.class_ids, dtype="<i4").tobytes())
    buf.write(np.asarray(ds.table.seen_mask, dtype="u1").tobytes())
    if ds.plants is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        buf.write(np.asarray(ds.plants, dtype="<i2").tobytes())
    return buf.getvalue()


def write_dataset(path, ds: Dataset):
    Path(path).write_bytes(dataset_bytes(ds))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}: need {n} bytes, have {len(self.data) - self.pos}",
                              offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, count, what):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt)


def read_dataset(path) -> Dataset:
    r = _Reader(Path(path).read_bytes())
    magic = r.data[:8]
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0, expected=MAGIC.decode())
    r.pos = 8
    version, Y, N, C, H, W, K = struct.unpack("<7I", r.take(28, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}", offset=8, expected=str(VERSION))
    feats = r.array("<f4", N * C * H * W, "features").reshape(N, C, H, W).astype(np.float32)
    labels = r.array("<i4", N, "labels").astype(np.int64)
    split = r.array("u1", N, "split").copy()
    attrs = r.array("<f8", K * Y, "attribute table").reshape(K, Y).T.copy()
    ids = r.array("<i4", Y, "class ids").astype(np.int64)
    seen = r.array("u1", Y, "seen mask").astype(bool)
    flag = r.take(1, "plant flag")[0]
    plants = None
    if flag == 1:
        plants = r.array("<i2", N * K * 2, "plants").reshape(N, K, 2).astype(np.int64)
    elif flag != 0:
        raise FormatError(f"bad plant flag {flag}", offset=r.pos - 1, expected="0 or 1")
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after dataset payload", offset=r.pos)
    return Dataset(feats, labels, split, SemanticTable(attrs, seen, ids), plants)


def spec_from_dict(d: dict) -> BenchSpec:
    names = {f.name for f in dataclasses.fields(BenchSpec)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigurationError(f"unknown bench keys: {unknown}")
    return BenchSpec(**d)
