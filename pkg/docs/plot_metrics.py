"""Plot the metrics emitted by a training run (or several, for comparison).

Usage:
    python docs/plot_metrics.py runs/rank0 [runs/flat0 ...] --out plots/

Reads metrics.csv and eval_pg.csv from each run directory and writes two
PNGs: evaluation reward over training episodes, and the satisfied-user
fraction versus the per-window service threshold (best pass per run).
Requires matplotlib, which is intentionally not a package dependency.
"""

import argparse
import csv
from pathlib import Path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dirs", nargs="+", type=Path)
    parser.add_argument("--out", type=Path, default=Path("plots"))
    args = parser.parse_args()

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    args.out.mkdir(parents=True, exist_ok=True)

    fig_r, ax_r = plt.subplots(figsize=(7, 4))
    fig_pg, ax_pg = plt.subplots(figsize=(7, 4))

    for run in args.run_dirs:
        label = run.name
        evals = [r for r in read_rows(run / "metrics.csv") if r["kind"] == "eval"]
        ax_r.plot([int(r["episode"]) for r in evals],
                  [float(r["reward"]) for r in evals], marker="o", label=label)

        pg_rows = read_rows(run / "eval_pg.csv")
        if pg_rows:
            best_pass = max({r["pass"] for r in pg_rows},
                            key=lambda p: sum(float(r["pg"]) for r in pg_rows
                                              if r["pass"] == p))
            best = [r for r in pg_rows if r["pass"] == best_pass]
            ax_pg.plot([int(r["threshold"]) for r in best],
                       [float(r["pg"]) for r in best], marker="s", label=label)

    ax_r.set_xlabel("training episode")
    ax_r.set_ylabel("evaluation reward")
    ax_r.legend()
    ax_r.grid(alpha=0.3)
    fig_r.tight_layout()
    fig_r.savefig(args.out / "eval_reward.png", dpi=150)

    ax_pg.set_xlabel("served-steps threshold per window")
    ax_pg.set_ylabel("satisfied-user fraction")
    ax_pg.legend()
    ax_pg.grid(alpha=0.3)
    fig_pg.tight_layout()
    fig_pg.savefig(args.out / "satisfaction.png", dpi=150)
    print(f"wrote {args.out}/eval_reward.png and {args.out}/satisfaction.png")


if __name__ == "__main__":
    main()
