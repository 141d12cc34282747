#!/usr/bin/env python3
"""End-to-end smoke run: generate data, train, sample, evaluate.

Everything lands under --workdir (default runs/smoke). Flags mirror the
desk-scale defaults; pass --steps to shorten training further.
"""
import argparse
import dataclasses
import os
import subprocess
import sys


def sh(*args):
    print("+", " ".join(args), flush=True)
    subprocess.run(args, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/smoke")
    ap.add_argument("--train-pairs", type=int, default=300)
    ap.add_argument("--test-pairs", type=int, default=90)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    from garb import config as config_mod

    data = os.path.join(args.workdir, "data")
    run_dir = os.path.join(args.workdir, "run")
    sh(sys.executable, "-m", "garb.cli", "gen-data",
       "--train", str(args.train_pairs), "--test", str(args.test_pairs),
       "--size", "64", "--seed", str(args.seed), "--out", data)

    cfg = config_mod.default_config()
    cfg = dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, root=data,
                                 n_train=args.train_pairs,
                                 n_test=args.test_pairs),
        train=dataclasses.replace(cfg.train, total_steps=args.steps,
                                  warmup_steps=max(1, args.steps // 10)),
        out_dir=run_dir,
    )
    os.makedirs(args.workdir, exist_ok=True)
    cfg_path = os.path.join(args.workdir, "config.json")
    config_mod.save_config(cfg, cfg_path)

    sh(sys.executable, "-m", "garb.cli", "train", "--config", cfg_path)
    ckpt = os.path.join(run_dir, "checkpoint")
    ref = os.path.join(data, "images", "test_00000_ref.png")
    sh(sys.executable, "-m", "garb.cli", "sample", "--checkpoint", ckpt,
       "--image", ref, "--class", "upper_body", "--steps", "20",
       "--guidance", "1.5", "--out", os.path.join(args.workdir, "samples"))
    sh(sys.executable, "-m", "garb.cli", "eval", "--checkpoint", ckpt,
       "--manifest", os.path.join(data, "manifest_test.tsv"),
       "--out", os.path.join(args.workdir, "eval"))


if __name__ == "__main__":
    main()
