"""Singular value functions of the Burgers model (n = 16, p = 4) to CSV, plus order gaps.

Only the quadratic (Riccati) energies are available here, so the sampled
functions are constant; pass ``--energy`` with higher-degree coefficients to
get state-dependent curves.
"""
import argparse
import csv

import numpy as np

from nlbal.balancing import compute_svf, compute_transformation, sample_svf
from nlbal.burgers import BurgersConfig, burgers_system
from nlbal.energy import EnergyCoeffs, HinfConfig, load_energy, solve_hinf_gramians
from nlbal.reduction import suggest_order


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--energy", help="JSON file with v and w of degree >= 4")
    parser.add_argument("--range", type=float, default=0.2)
    parser.add_argument("--samples", type=int, default=201)
    parser.add_argument("--out", default="svf.csv")
    args = parser.parse_args()

    if args.energy:
        v, w = load_energy(args.energy, "v"), load_energy(args.energy, "w")
    else:
        sys = burgers_system(BurgersConfig(n=16, epsilon=0.05, m=4, p=4))
        V2, W2 = solve_hinf_gramians(sys.A, sys.B, sys.C, HinfConfig(gamma=3.0))
        v, w = EnergyCoeffs.quadratic_only(V2), EnergyCoeffs.quadratic_only(W2)
    S = compute_svf(w, compute_transformation(v, w, 3), 2).head(8)
    grid, vals = sample_svf(S, args.range, args.samples)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z"] + [f"xi_{i + 1}" for i in range(S.n)])
        writer.writerows(np.column_stack([grid, vals]).tolist())
    print(f"wrote {args.out}")
    for r, gap in suggest_order(S, args.range, args.samples, coordinate="z"):
        print(f"r = {r}: max sigma_r / max sigma_r+1 = {gap:.2f}")


if __name__ == "__main__":
    main()
