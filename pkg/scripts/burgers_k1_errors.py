"""Burgers ROM errors (m = 4, p = 1, k = 1) for both projections, against reference values."""
import argparse
import time

import numpy as np

from nlbal.cli import TableConfig, error_table

REFERENCE = [0.0714831, 0.0036861, 0.0026888, 0.0024333, 0.0024095]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dt", type=float, default=1e-3)
    parser.add_argument("--epsilon", type=float, default=0.05)
    args = parser.parse_args()
    print("r  reference   " + "  ".join(f"{p:>13s}" for p in ("moore_penrose", "oblique")))
    cols = {}
    for projection in ("moore_penrose", "oblique"):
        start = time.perf_counter()
        cfg = TableConfig(epsilon=args.epsilon, dt=args.dt, projection=projection)
        _, res = error_table(cfg)
        cols[projection] = [res[(r, 1)][0] for r in cfg.orders]
        print(f"# {projection}: {time.perf_counter() - start:.1f}s")
    for r, ref in enumerate(REFERENCE, start=1):
        vals = "  ".join(f"{cols[p][r - 1]:13.7f}" for p in cols)
        print(f"{r}  {ref:.7f}   {vals}")
    for p, col in cols.items():
        print(f"# {p}: relative deviation {np.round(np.array(col) / REFERENCE - 1, 2)}")


if __name__ == "__main__":
    main()
