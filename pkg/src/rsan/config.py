"""Plain-text ``section.key = value`` run configs.

Lines are ``section.key = value``; blank lines and ``#`` comments are
ignored. Every key must belong to a known section and field, so a typo is
an error rather than a silent default.

Sections:

* ``bench``: any :class:`~rsan.synthetic_bench.BenchSpec` field
* ``train``: any :class:`~rsan.trainer.TrainConfig` field
* ``paths``: dataset, embeddings, checkpoint, results
* ``eval``: mode (zsl|gzsl), gamma, sigma_scale, name
* ``sweep``: axis (kernel_size|episode_shape|gamma), values, seeds
* ``ablate``: seeds
* ``visualize``: samples, attributes
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from pathlib import Path

from .errors import ConfigurationError
from .synthetic_bench import BenchSpec
from .trainer import TrainConfig

EXTRA = {
    "paths": {"dataset": str, "embeddings": str, "checkpoint": str, "results": str},
    "eval": {"mode": str, "gamma": float, "sigma_scale": float, "name": str},
    "sweep": {"axis": str, "values": str, "seeds": str},
    "ablate": {"seeds": str},
    "visualize": {"samples": str, "attributes": str},
}


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


SCHEMA = {"bench": _field_types(BenchSpec), "train": _field_types(TrainConfig), **EXTRA}


def _coerce(raw: str, typ, key):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str) -> dict:
    """Returns ``{section: {key: typed value}}``."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected section.key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigurationError(f"line {lineno}: key {key!r} has no section")
        section, name = key.split(".", 1)
        if section not in SCHEMA:
            raise ConfigurationError(f"line {lineno}: unknown section {section!r}")
        if name not in SCHEMA[section]:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if name in out.get(section, {}):
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out.setdefault(section, {})[name] = _coerce(value, SCHEMA[section][name], key)
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


def dump_config(cfg: dict) -> str:
    lines = []
    for section in sorted(cfg):
        for name in sorted(cfg[section]):
            value = cfg[section][name]
            lines.append(f"{section}.{name} = {json.dumps(value) if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def bench_spec(cfg: dict, seed: int | None = None) -> BenchSpec:
    kw = dict(cfg.get("bench", {}))
    if seed is not None:
        kw["seed"] = seed
    return BenchSpec(**kw)


def train_config(cfg: dict, seed: int | None = None, **overrides) -> TrainConfig:
    kw = dict(cfg.get("train", {}))
    if seed is not None:
        kw["seed"] = seed
    kw.update(overrides)
    return TrainConfig(**kw)


def int_list(text: str | None, default=()):
    if not text:
        return list(default)
    return [int(x) for x in text.replace(" ", "").split(",") if x]
