"""Solve the single intersection exactly, train a DQN on it and compare the two.

    python3 scripts/single_intersection.py [--out runs/single] [--seed 0]
"""
import argparse
import sys
from pathlib import Path

from trafficdqn.harness.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "single.yaml"

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/single")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    common = ["--config", str(CONFIG), "--seed", str(args.seed)]
    steps = [
        ["solve", *common, "--out", f"{args.out}/oracle"],
        ["train", *common, "--out", f"{args.out}/train"],
        ["compare", *common, "--out", f"{args.out}/compare",
         "--checkpoint", f"{args.out}/train/checkpoint.json", "--oracle", f"{args.out}/oracle/oracle.json"],
        ["eval", *common, "--out", f"{args.out}/eval", "--checkpoint", f"{args.out}/train/checkpoint.json"],
    ]
    for argv in steps:
        print("$ trafficdqn", " ".join(argv), flush=True)
        if main(argv) != 0:
            sys.exit(1)
