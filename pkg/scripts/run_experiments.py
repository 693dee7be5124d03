"""Run the benchmark experiments through the ``rsan`` CLI.

Each experiment is the committed ``configs/benchmark.cfg`` plus a few
override lines; the composed config is written next to the outputs so every
run can be repeated with ``rsan <command> --config <that file>``.

    python3 scripts/run_experiments.py                  # everything (~25 min on one core)
    python3 scripts/run_experiments.py --only ablation  # one experiment
    python3 scripts/run_experiments.py --quick          # 2-epoch smoke run
"""

import argparse
import sys
from pathlib import Path

from rsan import cli

ROOT = Path(__file__).resolve().parents[1]
BASE = (ROOT / "configs" / "benchmark.cfg").read_text()

GEN = "paths.dataset = {o}/gen/dataset.rsanfeat\npaths.embeddings = {o}/gen/embeddings.txt\n"
CKPT = GEN + "paths.checkpoint = {o}/train/model.rsanckpt\npaths.results = {o}/metrics.csv\n"

# (name, [(command, subdir, override lines)])
EXPERIMENTS = {
    "benchmark": [
        ("generate", "gen", ""),
        ("train", "train", CKPT),
        ("eval", "eval_zsl", CKPT + "eval.mode = zsl\neval.name = benchmark\n"),
        ("eval", "eval_gzsl", CKPT + "eval.mode = gzsl\neval.name = benchmark\n"),
        ("visualize", "saliency", CKPT + "visualize.samples = 0,1,2\n"),
    ],
    "ablation": [("ablate", ".", "bench.noise_sigma = 0.2\nablate.seeds = 0,1,2,3,4\n")],
    "gamma": [("sweep", ".", "sweep.axis = gamma\nsweep.seeds = 0,1,2,3,4\n")],
    "kernel": [("sweep", ".", "sweep.axis = kernel_size\nsweep.values = 1,3,5,7\n")],
    "episode": [("sweep", ".", "sweep.axis = episode_shape\n")],
}

QUICK = "train.epochs = 2\ntrain.batches_per_epoch = 5\n"


def compose(*texts):
    """Concatenate config texts; a later ``key = value`` replaces an earlier one."""
    merged = {}
    for text in texts:
        for line in text.splitlines():
            if "=" in line and not line.lstrip().startswith("#"):
                merged[line.split("=", 1)[0].strip()] = line.strip()
    return "\n".join(merged.values()) + "\n"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="out/experiments")
    p.add_argument("--only", nargs="+", choices=sorted(EXPERIMENTS), default=list(EXPERIMENTS))
    p.add_argument("--quick", action="store_true", help="2 epochs x 5 batches, for smoke testing")
    args = p.parse_args(argv)

    for name in args.only:
        root = Path(args.out) / name
        for command, sub, extra in EXPERIMENTS[name]:
            out = root / sub
            out.mkdir(parents=True, exist_ok=True)
            text = compose(BASE, extra.format(o=root), QUICK if args.quick else "")
            if args.quick:
                text = text.replace("0,1,2,3,4", "0,1")
            cfg = out / f"{command}.cfg"
            cfg.write_text(text)
            print(f"[{name}] rsan {command} --config {cfg} --out {out}", flush=True)
            if cli.main([command, "--config", str(cfg), "--out", str(out)]) != 0:
                return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
