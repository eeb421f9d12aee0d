"""Train cart-pole at the reference setting over several seeds.

Writes one learning curve per seed and prints how many iterations each seed
needed to reach a mean episode length of 900.

    python3 scripts/run_cartpole.py --seeds 0 1 2 3 4 --out runs/cartpole
"""

import argparse
from pathlib import Path

import numpy as np

from gaepg.config import load_config, set_key
from gaepg.harness import train, write_curve

ROOT = Path(__file__).resolve().parent.parent


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "cartpole.cfg"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="config overrides")
    p.add_argument("--out", default="runs/cartpole")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        cfg = load_config(args.config)
        for kv in args.set:
            key, _, value = kv.partition("=")
            set_key(cfg, key, value)
        cfg.run.seed = seed
        result = train(cfg)
        write_curve(out / f"seed{seed}.csv", result.records)
        lengths = np.array([r.mean_ep_len for r in result.records])
        hit = np.flatnonzero(lengths >= 900)
        first = f"iteration {hit[0] + 1}" if hit.size else "never"
        print(f"seed {seed}: length 900 reached at {first}; best {lengths.max():.0f}, final {lengths[-1]:.0f}")


if __name__ == "__main__":
    main()
