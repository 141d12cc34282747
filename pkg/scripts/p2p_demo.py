#!/usr/bin/env python3
"""Person-to-person transfer demo: build a pairing file from a test manifest
and run the p2p pipeline (garment try-off on the owner, toy try-on onto the
source person). Pass --ground-truth to bypass diffusion (oracle path).
"""
import argparse
import os
import subprocess
import sys


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--manifest", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ground-truth", action="store_true")
    args = ap.parse_args()

    from garb import flatshop

    manifest = flatshop.read_manifest(args.manifest, "test")
    pairing = flatshop.make_p2p_pairs(manifest, args.seed)
    os.makedirs(args.out, exist_ok=True)
    pairs_path = os.path.join(args.out, "pairs.tsv")
    flatshop.write_pairing_file(pairing, pairs_path)

    cmd = [sys.executable, "-m", "garb.cli", "p2p",
           "--checkpoint", args.checkpoint, "--pairs", pairs_path,
           "--manifest", args.manifest, "--out", args.out,
           "--seed", str(args.seed)]
    if args.ground_truth:
        cmd.append("--ground-truth")
    print("+", " ".join(cmd), flush=True)
    subprocess.run(cmd, check=True)


if __name__ == "__main__":
    main()
