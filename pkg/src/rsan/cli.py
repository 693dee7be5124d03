"""``rsan`` command line: generate, train, eval, ablate, sweep, visualize.

Every command reads a ``section.key = value`` config (see :mod:`rsan.config`),
writes its outputs under ``--out`` and drops a ``config.echo`` file there
holding the effective config, its hash, and the seed. Failures print one JSON
line to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import attribute_constraint as ac
from . import checkpoint as ck
from . import config as cfgmod
from . import cosine_classifier as cc
from . import evaluation as ev
from . import region_mapping as rm
from . import synthetic_bench as sb
from .errors import ConfigurationError, FormatError, RSANError
from .model import Flags
from .trainer import TrainConfig, train, write_log

log = logging.getLogger("rsan")

ABLATION_ROWS = [
    ("Baseline", {}),
    ("+RM", {"use_region_mapping": True}),
    ("+L_Con", {"use_concentrate": True}),
    ("+CE", {"use_cosine_embedding": True}),
    ("+L_Reg", {"use_regression": True}),
    ("+semantic init", {"use_semantic_init": True}),
]
FLAG_NAMES = [f.name for f in dataclasses.fields(Flags)]
DEFAULT_GAMMAS = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 40.0)


class Run:
    """Effective config of one invocation plus its output directory."""

    def __init__(self, cfg: dict, seed: int | None, out: Path, command: str):
        self.cfg = cfg
        if seed is not None:
            cfg.setdefault("bench", {})["seed"] = seed
            cfg.setdefault("train", {})["seed"] = seed
        self.seed = cfg.get("train", {}).get("seed", cfg.get("bench", {}).get("seed", 0))
        self.out = out
        self.command = command
        self.hash = cfgmod.config_hash(cfg)

    def section(self, name) -> dict:
        return self.cfg.get(name, {})

    def path(self, key, required=True):
        p = self.section("paths").get(key)
        if p is None and required:
            raise ConfigurationError(f"config needs paths.{key} for '{self.command}'")
        return None if p is None else Path(p)

    def echo(self):
        self.out.mkdir(parents=True, exist_ok=True)
        text = f"# command: {self.command}\n# seed: {self.seed}\n# config_hash: {self.hash}\n"
        (self.out / "config.echo").write_text(text + cfgmod.dump_config(self.cfg))

    def train_config(self, **overrides) -> TrainConfig:
        return cfgmod.train_config(self.cfg, **overrides)


# -- shared helpers ----------------------------------------------------------

def _dataset(run: Run, seed: int | None = None) -> sb.Dataset:
    """The dataset named in ``paths.dataset``, or a fresh benchmark draw."""
    path = run.path("dataset", required=False)
    if path is None:
        return sb.generate(cfgmod.bench_spec(run.cfg, seed))
    ds = sb.read_dataset(path)
    emb = run.path("embeddings", required=False)
    if emb is not None:
        ds.embeddings = ac.read_embeddings(emb)
    return ds


def _train(run: Run, ds: sb.Dataset, tc: TrainConfig):
    if tc.use_semantic_init and ds.embeddings is None:
        raise ConfigurationError("semantic initialization needs paths.embeddings when loading a dataset file")
    return train(tc, ds)


def _echo_dict(run: Run, tc: TrainConfig) -> dict:
    return {"train": dataclasses.asdict(tc), "bench": run.section("bench"), "seed": tc.seed,
            "config_hash": run.hash}


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# -- commands ----------------------------------------------------------------

def cmd_generate(run: Run):
    ds = sb.generate(cfgmod.bench_spec(run.cfg))
    run.echo()
    sb.write_dataset(run.out / "dataset.rsanfeat", ds)
    ac.write_embeddings(run.out / "embeddings.txt", ds.embeddings)
    return {"dataset": str(run.out / "dataset.rsanfeat"), "samples": int(len(ds.labels))}


def cmd_train(run: Run):
    ds = _dataset(run)
    tc = run.train_config()
    run.echo()
    res = _train(run, ds, tc)
    ck.save_checkpoint(run.out / "model.rsanckpt", res.model, _echo_dict(run, tc), res.rng_state)
    write_log(run.out / "train_log.csv", res.history)
    return {"checkpoint": str(run.out / "model.rsanckpt"), "best_epoch": res.best_epoch,
            "val_T1": res.history[res.best_epoch].val_T1}


def _classifier(run: Run, echo: dict) -> cc.ClassifierConfig:
    tr = echo.get("train", {})
    e = run.section("eval")
    return cc.ClassifierConfig(
        tau_s=tr.get("tau_s", TrainConfig.tau_s),
        sigma_scale=e.get("sigma_scale", tr.get("sigma_scale", TrainConfig.sigma_scale)),
        gamma=e.get("gamma", tr.get("gamma", TrainConfig.gamma)),
    )


def cmd_eval(run: Run):
    model, echo, _ = ck.load_checkpoint(run.path("checkpoint"))
    ds = _dataset(run)
    mode = run.section("eval").get("mode", "zsl")
    clf = _classifier(run, echo)
    if mode == "zsl":
        T1 = ev.evaluate_zsl(model, ds)
        m = cc.GZSLMetrics(S=float("nan"), U=T1, H=float("nan"), T1=T1)
    elif mode == "gzsl":
        m = ev.evaluate_gzsl(model, ds, clf)
    else:
        raise ConfigurationError(f"eval.mode must be zsl or gzsl, got {mode!r}")
    run.echo()
    rec = cc.MetricsRecord(run.section("eval").get("name", "synthetic"), mode, m.T1, m.S, m.U, m.H,
                           clf.gamma, clf.tau_s, int(echo.get("seed", run.seed)), config_hash=run.hash)
    results = run.path("results", required=False) or run.out / "metrics.csv"
    cc.append_metrics(results, rec)
    return dataclasses.asdict(m)


def ablation_configs(base: TrainConfig):
    """The six ablation rows; each switches on exactly one more flag."""
    flags = {name: False for name in FLAG_NAMES}
    out = []
    for label, change in ABLATION_ROWS:
        flags = {**flags, **change}
        out.append((label, dataclasses.replace(base, **flags)))
    return out


def cmd_ablate(run: Run):
    seeds = cfgmod.int_list(run.section("ablate").get("seeds"), default=[run.seed])
    rows = ablation_configs(run.train_config())
    run.echo()
    clf_gamma = run.section("eval").get("gamma")
    table = []
    for label, tc in rows:
        T1s, Hs = [], []
        for s in seeds:
            ds = _dataset(run, seed=s)
            res = _train(run, ds, dataclasses.replace(tc, seed=s))
            T1s.append(ev.evaluate_zsl(res.model, ds))
            Hs.append(ev.evaluate_gzsl(res.model, ds, tc.classifier(clf_gamma)).H)
            log.info("%s seed=%d T1=%.4f", label, s, T1s[-1])
        flags = [int(getattr(tc, f)) for f in FLAG_NAMES]
        table.append([label, *flags, _fmt(np.mean(T1s)), _fmt(np.mean(Hs)),
                      " ".join(_fmt(t) for t in T1s), " ".join(map(str, seeds)), run.hash])
    _write_csv(run.out / "ablation.csv",
               ["row", *FLAG_NAMES, "T1_mean", "H_mean", "T1_per_seed", "seeds", "config_hash"], table)
    return {r[0]: float(r[len(FLAG_NAMES) + 1]) for r in table}


def _sweep_points(run: Run, axis: str, num_seen: int):
    values = run.section("sweep").get("values")
    if axis == "kernel_size":
        return [{"kernel_size": k} for k in cfgmod.int_list(values, default=[1, 3, 5, 7])]
    if axis == "episode_shape":
        pts = []
        for M in (8, 12, 16):
            for N in (2, 3, 4):
                pts.append({"episode_M": min(M, num_seen), "episode_N": N, "requested_M": M})
        return pts
    raise ConfigurationError(f"sweep.axis must be kernel_size, episode_shape or gamma, got {axis!r}")


def cmd_sweep(run: Run):
    axis = run.section("sweep").get("axis", "kernel_size")
    seeds = cfgmod.int_list(run.section("sweep").get("seeds"), default=[run.seed])
    base = run.train_config()
    run.echo()
    rows = []
    if axis == "gamma":
        raw = run.section("sweep").get("values")
        gammas = [float(g) for g in raw.split(",")] if raw else list(DEFAULT_GAMMAS)
        for s in seeds:
            ds = _dataset(run, seed=s)
            res = _train(run, ds, dataclasses.replace(base, seed=s))
            for g, m, n_seen in ev.gamma_sweep(res.model, ds, base.classifier(), gammas):
                rows.append([s, g, _fmt(m.S), _fmt(m.U), _fmt(m.H), _fmt(m.T1), n_seen, run.hash])
        _write_csv(run.out / "sweep_gamma.csv", ["seed", "gamma", "S", "U", "H", "T1", "seen_predictions",
                                                 "config_hash"], rows)
        return {"rows": len(rows)}
    for s in seeds:
        ds = _dataset(run, seed=s)
        for pt in _sweep_points(run, axis, len(ds.table.seen_ids)):
            requested = pt.pop("requested_M", None)
            tc = dataclasses.replace(base, seed=s, **pt)
            res = _train(run, ds, tc)
            T1 = ev.evaluate_zsl(res.model, ds)
            H = ev.evaluate_gzsl(res.model, ds, tc.classifier()).H
            key = [pt["kernel_size"]] if axis == "kernel_size" else [requested, pt["episode_M"], pt["episode_N"]]
            rows.append([s, *key, _fmt(T1), _fmt(H), run.hash])
    header = ["kernel_size"] if axis == "kernel_size" else ["M", "M_used", "N"]
    _write_csv(run.out / f"sweep_{axis}.csv", ["seed", *header, "T1", "H", "config_hash"], rows)
    return {"rows": len(rows)}


def cmd_visualize(run: Run):
    model, _, _ = ck.load_checkpoint(run.path("checkpoint"))
    ds = _dataset(run)
    samples = cfgmod.int_list(run.section("visualize").get("samples"), default=[0])
    attrs = cfgmod.int_list(run.section("visualize").get("attributes"), default=range(ds.table.K))
    for s in samples:
        if not 0 <= s < len(ds.labels):
            raise ConfigurationError(f"sample id {s} out of range (dataset has {len(ds.labels)})")
    for k in attrs:
        if not 0 <= k < ds.table.K:
            raise ConfigurationError(f"attribute id {k} out of range (K={ds.table.K})")
    run.echo()
    written = 0
    for s in samples:
        sal = model.saliency(ds.features[s].astype(np.float64))
        for k in attrs:
            stem = run.out / f"saliency_s{s}_a{k}"
            rm.write_saliency_csv(stem.with_suffix(".csv"), sal.M[k])
            rm.write_pgm(stem.with_suffix(".pgm"), sal.M[k],
                         comment=f"sample={s} attribute={k} seed={run.seed} config_hash={run.hash}")
            written += 1
    return {"maps": written}


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "visualize": cmd_visualize,
}


def _error_line(exc: BaseException) -> str:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, FormatError):
        rec["offset"] = exc.offset
        rec["expected"] = exc.expected
    return json.dumps(rec, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsan", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="section.key = value config file")
    p.add_argument("--seed", type=int, default=None, help="overrides bench.seed and train.seed")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run = Run(cfgmod.load_config(args.config), args.seed, Path(args.out), args.command)
        summary = COMMANDS[args.command](run)
    except (RSANError, OSError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2
    print(json.dumps({"command": args.command, "seed": run.seed, "config_hash": run.hash, **summary},
                     sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
