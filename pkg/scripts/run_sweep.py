"""Gamma x lambda sweep on cart-pole, reporting cost after 20 iterations.

    python3 scripts/run_sweep.py --out runs/sweep --workers 4
"""

import argparse
from pathlib import Path

from gaepg.config import load_config
from gaepg.harness import format_grid, sweep

ROOT = Path(__file__).resolve().parent.parent


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "cartpole.cfg"))
    p.add_argument("--gammas", type=float, nargs="+", default=[0.9, 0.96, 0.99, 1.0])
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.5, 0.92, 0.98, 1.0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/sweep")
    args = p.parse_args()
    cfg = load_config(args.config)
    cfg.run.iterations = args.iterations
    result = sweep(cfg, args.gammas, args.lambdas, args.seeds, out_dir=args.out, workers=args.workers)
    print(f"cost after {args.iterations} iterations, mean over seeds {args.seeds}")
    print(format_grid(result))
    g, lam = result.best_cell()
    print(f"best cell: gamma={g:g} lambda={lam:g}")
    if result.errors:
        print(f"{sum(len(v) for v in result.errors.values())} runs failed; see log")


if __name__ == "__main__":
    main()
