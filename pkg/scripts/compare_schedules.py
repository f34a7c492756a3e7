"""Objective versus block-update cost for FB, cyclic and hierarchical schedules.

Writes the per-variant traces, the merged comparison CSV and, when matplotlib
is available, a log-scale plot of ``psi - min psi``.

    python3 scripts/compare_schedules.py --config configs/compare_schedules.json --out out/compare
"""

import argparse
import json
import os

import numpy as np

from flexbcpg.imaging import ExperimentConfig, matched_cost_compare, write_comparison


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "..", "configs",
                                                    "compare_schedules.json"))
    p.add_argument("--out", default="out/compare")
    p.add_argument("--side", type=int, help="override the image side")
    args = p.parse_args()

    with open(args.config) as fh:
        raw = json.load(fh)
    variants = raw.pop("variants")
    if args.side:
        raw["side"] = args.side
    base = ExperimentConfig.from_dict({**raw, "out_dir": args.out})
    cmp = matched_cost_compare([base.replace(**v) for v in variants])
    write_comparison(cmp, args.out)

    floor = min(float(np.min(c)) for c in cmp["curves"].values())
    for k, c in cmp["curves"].items():
        print(f"{k:<16} psi at {int(cmp['cost'][-1])} units: {c[-1]:.8f}")

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping the plot")
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, c in cmp["curves"].items():
        ax.semilogy(cmp["cost"], c - floor + 1e-12, label=k)
    ax.set_xlabel("block updates")
    ax.set_ylabel("psi - min psi")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(args.out, "comparison.png"), dpi=120)


if __name__ == "__main__":
    main()
