#!/usr/bin/env python3
"""Plot the CSV artifacts a scenario run leaves behind.

Usage:
    python3 scripts/plot_results.py out/van_der_pol [--save]

Reads whatever it finds in the output directory (rmse_*.csv, sweep.csv,
profile.csv, raster_*.csv) and draws one figure per artifact kind. With
--save, PNGs land next to the CSVs instead of opening windows.
"""

import argparse
import glob
import os
import sys

import matplotlib

parser = argparse.ArgumentParser()
parser.add_argument("outdir", help="scenario output directory")
parser.add_argument("--save", action="store_true", help="write PNGs instead of showing")
args = parser.parse_args()

if args.save:
    matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def load_csv(path):
    with open(path) as f:
        rows = [line.strip().split(",") for line in f if line.strip() and not line.startswith("#")]
    return rows[0], rows[1:]


def finish(fig, name):
    if args.save:
        target = os.path.join(args.outdir, name)
        fig.savefig(target, dpi=130, bbox_inches="tight")
        print("wrote", target)


rmse_files = sorted(glob.glob(os.path.join(args.outdir, "rmse_*.csv")))
if rmse_files:
    header, _ = load_csv(rmse_files[0])
    n_states = len(header) - 1
    fig, axes = plt.subplots(1, n_states, figsize=(5 * n_states, 3.5), squeeze=False)
    for path in rmse_files:
        name = os.path.basename(path)[len("rmse_"):-len(".csv")]
        _, rows = load_csv(path)
        data = np.array(rows, dtype=float)
        for i in range(n_states):
            axes[0][i].semilogy(data[:, 0], data[:, i + 1], label=name)
    for i in range(n_states):
        axes[0][i].set_xlabel("t [s]")
        axes[0][i].set_ylabel(f"RMSE x{i + 1}")
        axes[0][i].legend(fontsize=8)
    fig.tight_layout()
    finish(fig, "rmse.png")

sweep = os.path.join(args.outdir, "sweep.csv")
if os.path.exists(sweep):
    _, rows = load_csv(sweep)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    filters = sorted({r[0] for r in rows})
    for f in filters:
        pts = [(int(r[1]), float(r[2])) for r in rows if r[0] == f]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f)
    ax.set_xlabel("neuron count N")
    ax.set_ylabel("combined window RMSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    finish(fig, "sweep.png")

profile = os.path.join(args.outdir, "profile.csv")
if os.path.exists(profile):
    _, rows = load_csv(profile)
    rows = [r for r in rows if r[0] != "filter"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    filters = sorted({r[0] for r in rows})
    for f in filters:
        pts = [(int(r[1]), float(r[3])) for r in rows if r[0] == f]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=f)
    ax.set_xlabel("neuron count N")
    ax.set_ylabel("mean step time [ms]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    finish(fig, "profile.png")

for path in sorted(glob.glob(os.path.join(args.outdir, "raster_*.csv"))):
    name = os.path.basename(path)[len("raster_"):-len(".csv")]
    _, rows = load_csv(path)
    rows = [r for r in rows if r[0] != "step"]
    if not rows:
        continue
    steps = np.array([int(r[0]) for r in rows])
    neurons = np.array([int(r[1]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.scatter(steps, neurons, s=1, marker="|", color="goldenrod")
    ax.set_facecolor("black")
    ax.set_xlabel("step")
    ax.set_ylabel("neuron")
    ax.set_title(f"spike raster: {name}")
    fig.tight_layout()
    finish(fig, f"raster_{name}.png")

if not args.save:
    plt.show()
if not rmse_files and not os.path.exists(sweep) and not os.path.exists(profile):
    print("no plottable artifacts found in", args.outdir, file=sys.stderr)
    sys.exit(1)
