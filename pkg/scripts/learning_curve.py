"""Run one config and print accuracy and 10-round smoothed loss every few rounds.

    python3 scripts/learning_curve.py configs/synthetic_iid.ini --out runs/curve
"""

import argparse
from pathlib import Path

import numpy as np

from drlfl import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("runs/curve"))
    ap.add_argument("--every", type=int, default=10)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    out = harness.run(args.config, args.out, args.workers)
    harness.emit_plot_series(out)
    rows = harness.read_metrics(out)
    loss = np.array([float(r["test_loss"]) for r in rows])
    smooth = np.convolve(loss, np.ones(10) / 10, mode="valid")
    print("round  test_acc  smoothed_loss")
    for i, r in enumerate(rows):
        if (i + 1) % args.every == 0 and i >= 9:
            print(f"{r['round']:>5}  {float(r['test_acc']):8.4f}  {smooth[i - 9]:13.5f}")
    print(f"series written to {out}")


if __name__ == "__main__":
    main()
