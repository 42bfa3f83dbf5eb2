#!/usr/bin/env python3
"""Plot per-layer path similarity from a path-sim run directory.

Reads ``path.csv`` (columns lambda, layer, quantity, value), averages the
values into equal-width bins of relative depth and writes ``path.png``.
"""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PANELS = [
    ("accent_natural", "accent vs natural (same class)"),
    ("natural_natural", "natural vs natural"),
    ("accent_seed", "accent vs seed"),
    ("delta", "accent-natural minus natural-natural"),
]


def read_rows(path: Path):
    layers = []
    values = defaultdict(dict)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["layer"] not in layers:
                layers.append(row["layer"])
            if row["value"] in ("", "nan", "null"):
                continue
            values[(row["lambda"], row["quantity"])][row["layer"]] = float(row["value"])
    return layers, values


def binned(layers, series, bins):
    depth = {name: (i + 0.5) / len(layers) for i, name in enumerate(layers)}
    sums = defaultdict(float)
    counts = defaultdict(int)
    for name, v in series.items():
        b = min(int(depth[name] * bins), bins - 1)
        sums[b] += v
        counts[b] += 1
    xs = sorted(counts)
    return [(b + 0.5) / bins for b in xs], [sums[b] / counts[b] for b in xs]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--bins", type=int, default=10)
    parser.add_argument("--out", type=Path)
    args = parser.parse_args()

    csv_path = args.run_dir / "path.csv"
    if not csv_path.exists():
        print(f"no path.csv in {args.run_dir}", file=sys.stderr)
        return 1
    layers, values = read_rows(csv_path)
    lambdas = sorted({lam for lam, _ in values}, key=float)

    fig, axes = plt.subplots(1, len(PANELS), figsize=(4 * len(PANELS), 3.4), sharex=True)
    for ax, (quantity, title) in zip(axes, PANELS):
        for lam in lambdas:
            series = values.get((lam, quantity))
            if not series:
                continue
            xs, ys = binned(layers, series, args.bins)
            ax.plot(xs, ys, marker="o", label=f"lambda={lam}")
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("relative depth")
        ax.set_xlim(0, 1)
    axes[0].set_ylabel("Pearson correlation")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    out = args.out or args.run_dir / "path.png"
    fig.savefig(out, dpi=120)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
