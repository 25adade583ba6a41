"""Train a DQN on the 4x1 artery, evaluate it against baselines and count green waves.

    python3 scripts/linear_artery.py [--out runs/linear] [--seed 0]
"""
import argparse
import sys
from pathlib import Path

from trafficdqn.harness.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "linear.yaml"

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/linear")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    common = ["--config", str(CONFIG), "--seed", str(args.seed)]
    ckpt = f"{args.out}/train/checkpoint.json"
    steps = [
        ["train", *common, "--out", f"{args.out}/train"],
        ["eval", *common, "--out", f"{args.out}/eval", "--checkpoint", ckpt],
        ["greenwave", *common, "--out", f"{args.out}/greenwave", "--checkpoint", ckpt],
        ["render", f"{args.out}/eval/trajectory.jsonl", "--start", "100", "--stop", "106"],
    ]
    for argv in steps:
        print("$ trafficdqn", " ".join(argv), flush=True)
        if main(argv) != 0:
            sys.exit(1)
