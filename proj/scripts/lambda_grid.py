#!/usr/bin/env python3
"""Sweep the loss-term weights (train.lambda1..5) over a small grid.

For each grid point: simulate one dataset (shared across points), train, then
evaluate, and report Recall at the first configured K. Everything runs through
the uma2 binary so the sweep sees exactly what a user would.

Usage:
  scripts/lambda_grid.py --bin build/uma2 --out /tmp/grid \
      --lambda1 0.5,1,2 --lambda2 1 --lambda3 0.1,1 [--config base.cfg] [--seed 7]

Values are comma-separated per lambda; unlisted lambdas stay at their config
default. Results land in <out>/grid_results.tsv, worst-to-best on stdout.
"""

import argparse
import itertools
import json
import pathlib
import subprocess
import sys


def run(cmd):
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.stderr.write(proc.stdout + proc.stderr)
        raise SystemExit(f"command failed ({proc.returncode}): {' '.join(cmd)}")
    return proc.stdout


def parse_values(text):
    return [float(v) for v in text.split(",") if v.strip()]


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--bin", default="build/uma2", help="path to the uma2 binary")
    ap.add_argument("--config", default=None, help="base config file")
    ap.add_argument("--out", required=True, help="working directory for the sweep")
    ap.add_argument("--seed", type=int, default=1)
    for i in range(1, 6):
        ap.add_argument(f"--lambda{i}", default=None,
                        help=f"comma-separated values for train.lambda{i}")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base_flags = ["--seed", str(args.seed)]
    if args.config:
        base_flags += ["--config", args.config]

    data_dir = out / "data"
    if not (data_dir / "train.log").exists():
        run([args.bin, "simulate", *base_flags, "--out", str(data_dir), "--quiet"])

    axes = []
    for i in range(1, 6):
        raw = getattr(args, f"lambda{i}")
        if raw is not None:
            axes.append((f"lambda{i}", parse_values(raw)))
    if not axes:
        raise SystemExit("nothing to sweep: pass at least one --lambdaN list")

    rows = []
    for combo in itertools.product(*(values for _, values in axes)):
        point = dict(zip((name for name, _ in axes), combo))
        tag = "_".join(f"{k}{v:g}" for k, v in point.items())
        run_dir = out / f"run_{tag}"

        # Lambdas are plain config keys, so a derived config file carries them.
        cfg_path = run_dir / "point.cfg"
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(cfg_path, "w") as f:
            if args.config:
                f.write(pathlib.Path(args.config).read_text())
            for key, value in point.items():
                f.write(f"train.{key} = {value:g}\n")
        point_flags = ["--seed", str(args.seed), "--config", str(cfg_path)]

        run([args.bin, "train", *point_flags, "--out", str(run_dir),
             "--data", str(data_dir), "--quiet"])
        eval_dir = run_dir / "eval"
        run([args.bin, "evaluate", *point_flags, "--out", str(eval_dir),
             "--data", str(data_dir),
             "--checkpoint", str(run_dir / "best.ckpt"), "--quiet"])

        with open(eval_dir / "metrics.jsonl") as f:
            first_k = json.loads(f.readline())
        rows.append((point, first_k["k"], first_k["recall"], first_k["hitrate"]))
        print(f"{tag}: recall@{first_k['k']} = {first_k['recall']:.4f}", flush=True)

    rows.sort(key=lambda r: r[2])
    tsv = out / "grid_results.tsv"
    with open(tsv, "w") as f:
        f.write("point\tk\trecall\thitrate\n")
        for point, k, recall, hitrate in rows:
            name = ",".join(f"{key}={value:g}" for key, value in point.items())
            f.write(f"{name}\t{k}\t{recall:.6f}\t{hitrate:.6f}\n")

    print(f"\n{len(rows)} points, worst to best:")
    for point, k, recall, hitrate in rows:
        name = ", ".join(f"{key}={value:g}" for key, value in point.items())
        print(f"  recall@{k} {recall:.4f}  hitrate {hitrate:.4f}  ({name})")
    print(f"\nfull table: {tsv}")


if __name__ == "__main__":
    main()
