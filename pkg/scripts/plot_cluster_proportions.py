#!/usr/bin/env python3
"""Plot per-cluster sampling proportions from a coarse run directory."""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run", help="coarse run directory (with cluster_proportions.csv)")
    parser.add_argument("--out", default=None, help="output image (default: <run>/proportions.png)")
    args = parser.parse_args()

    run = Path(args.run)
    with open(run / "cluster_proportions.csv") as fh:
        rows = list(csv.DictReader(fh))
    clusters = [c for c in rows[0] if c.startswith("cluster_")]
    xs = [int(r["eval_index"]) for r in rows]

    fig, ax = plt.subplots(figsize=(7, 4))
    for cluster in clusters:
        ax.plot(xs, [float(r[cluster]) for r in rows], label=cluster)
    ax.set_xlabel("evaluated network number")
    ax.set_ylabel("cluster proportion")
    ax.legend(fontsize=7, ncol=2)
    ax.set_title("sampling proportion per cluster")
    fig.tight_layout()

    out = Path(args.out) if args.out else run / "proportions.png"
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
