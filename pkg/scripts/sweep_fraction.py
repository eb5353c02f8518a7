"""Rounds to a target accuracy across client fractions C, IID or label-sharded clients.

    python3 scripts/sweep_fraction.py --scheme noniid_shards --target 0.9
"""

import argparse
import csv

from drlfl import harness

BASE = """
[run]
seed = {seed}
[data]
samples_per_class = 700
test_size = 1000
[partition]
scheme = {scheme}
num_clients = 100
shard_count = 200
shard_size = 30
shards_per_client = 2
[fl]
B = {B}
E = 1
lr = {lr}
max_rounds = {rounds}
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--values", default="0.0,0.1,0.2,0.5,1.0")
    ap.add_argument("--scheme", choices=("iid", "noniid_shards"), default="iid")
    ap.add_argument("--B", default="10")
    ap.add_argument("--target", type=float, default=0.95)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--rounds", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default="runs/sweep_C")
    args = ap.parse_args()

    text = BASE.format(seed=args.seed, scheme=args.scheme, B=args.B, lr=args.lr, rounds=args.rounds)
    path = harness.sweep(text, "C", args.values, args.target, args.out, args.workers)
    print(f"{'C':>5}  rounds  final_acc")
    for row in csv.DictReader(open(path)):
        print(f"{row['value']:>5}  {row['rounds_to_target']:>6}  {float(row['final_acc']):.4f}")


if __name__ == "__main__":
    main()
