"""Rounds to a target accuracy across local epochs and batch sizes.

    python3 scripts/sweep_epochs_batch.py --target 0.95
"""

import argparse
import csv

from drlfl import harness

BASE = """
[run]
seed = {seed}
[fl]
C = 0.1
lr = {lr}
max_rounds = {rounds}
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--values", default="5:10,1:10,1:50,5:50,1:inf", help="E:B pairs")
    ap.add_argument("--target", type=float, default=0.95)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--rounds", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/sweep_EB")
    args = ap.parse_args()

    text = BASE.format(seed=args.seed, lr=args.lr, rounds=args.rounds)
    path = harness.sweep(text, "E,B", args.values, args.target, args.out)
    print(f"{'E:B':>8}  rounds  final_acc")
    for row in csv.DictReader(open(path)):
        print(f"{row['value']:>8}  {row['rounds_to_target']:>6}  {float(row['final_acc']):.4f}")


if __name__ == "__main__":
    main()
