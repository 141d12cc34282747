#!/usr/bin/env python3
"""Guidance-scale x inference-steps sweep over a trained checkpoint.

Emits sweep.csv (rows `s,n,dists,fid`) and an optional curve figure.
"""
import argparse
import subprocess
import sys


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--manifest", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--scales", default="1.0,1.5,2.0,2.5,3.0")
    ap.add_argument("--steps", default="5,10,20,50")
    ap.add_argument("--plot", default=None,
                    help="Optional output path for the DISTS/FID figure.")
    args = ap.parse_args()

    cmd = [sys.executable, "-m", "garb.cli", "sweep",
           "--checkpoint", args.checkpoint, "--manifest", args.manifest,
           "--out", args.out, "--scales", args.scales, "--steps", args.steps]
    if args.plot:
        cmd += ["--plot", args.plot]
    print("+", " ".join(cmd), flush=True)
    subprocess.run(cmd, check=True)


if __name__ == "__main__":
    main()
