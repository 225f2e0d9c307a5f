"""Two-state polynomial example: linear balancing, a one-state ROM and its output error."""
import numpy as np

from nlbal.balancing import compute_transformation
from nlbal.burgers import example_2d_system
from nlbal.energy import EnergyCoeffs, HinfConfig, solve_hinf_gramians
from nlbal.reduction import build_rom, truncated_transformation
from nlbal.simulate import SimConfig, integrate, relative_output_error


def main():
    sys = example_2d_system()
    cfg = SimConfig(0.0, 10.0, 1e-3)
    u = lambda t: np.array([0.2 * np.sin(t)])  # noqa: E731
    fom = integrate(sys.rhs, np.zeros(2), u, cfg, sys.output)
    for gamma in (None, 3.0):
        hinf = HinfConfig(open_loop=True) if gamma is None else HinfConfig(gamma=gamma)
        V2, W2 = solve_hinf_gramians(sys.A, sys.B, sys.C, hinf)
        v, w = EnergyCoeffs.quadratic_only(V2), EnergyCoeffs.quadratic_only(W2)
        xi = compute_transformation(v, w, 1).xi
        rom = build_rom(sys, truncated_transformation(v, w, 1, 1))
        red = integrate(rom.rhs, np.zeros(1), u, cfg, rom.output)
        label = "open loop" if gamma is None else f"gamma = {gamma:g}"
        print(f"{label}: xi(0) = {np.round(xi, 5)}, r = 1 output error {relative_output_error(fom, red)[0]:.4f}")


if __name__ == "__main__":
    main()
