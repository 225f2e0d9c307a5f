"""Command-line entry point: ``nlbal <command> ...``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from .balancing import (
    Transformation,
    compute_svf,
    compute_transformation,
    sample_svf,
    save_json,
)
from .burgers import BurgersConfig, burgers_system, example_2d_system
from .energy import EnergyCoeffs, HinfConfig, energy_to_json, load_energy, solve_hinf_gramians
from .reduction import PolySystem, RomArtifact, build_rom, load_system, truncated_transformation
from .simulate import SimConfig, Trajectory, integrate, atan_sine_input, relative_output_error, zero_input

logger = logging.getLogger("nlbal")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class UsageError(ValueError):
    pass


# --- provenance ----------------------------------------------------------------------------


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, inputs: list) -> Path:
    """Record one run in the single ``manifest.json`` of ``out``'s directory.

    Runs are keyed by output file name, so rerunning a command replaces its entry.
    """
    path = out.parent / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"runs": {}}
    manifest["runs"][out.name] = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "version": _version(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data))


# --- Burgers error tables ------------------------------------------------------------------


@dataclass
class TableConfig:
    """Error table over ROM orders ``r`` and transformation degrees ``k``.

    ``energy`` points to a JSON file holding ``v`` and ``w`` of degree >= 3;
    without it only ``k = 1`` (ARE energies) can be computed.
    """

    n: int = 16
    epsilon: float = 0.05
    m: int = 4
    p: int = 1
    gamma: float = 3.0
    output_scale: str = "integral"
    orders: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    degrees: list = field(default_factory=lambda: [1])
    energy: str | None = None
    projection: str = "moore_penrose"
    t1: float = 10.0
    dt: float = 1e-3
    workers: int = 1

    def __post_init__(self):
        if not self.degrees:
            raise UsageError("degree list is empty")
        if not self.orders:
            raise UsageError("order list is empty")
        if any(k < 1 for k in self.degrees) or any(r < 1 for r in self.orders):
            raise UsageError("orders and degrees must be positive")

    @classmethod
    def from_json(cls, data: dict) -> "TableConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise UsageError(f"unknown table config keys: {sorted(unknown)}")
        return cls(**data)


def error_table(cfg: TableConfig):
    """Relative output errors; returns ``(degrees, {(r, k): e})`` with ``e`` of length ``p``."""
    system = burgers_system(BurgersConfig(cfg.n, cfg.epsilon, cfg.m, cfg.p, cfg.output_scale))
    V2, W2 = solve_hinf_gramians(system.A, system.B, system.C, HinfConfig(cfg.gamma))
    degrees = sorted(set(cfg.degrees))
    if cfg.energy is None:
        if degrees != [1]:
            logger.warning("no energy file supplied: emitting the k = 1 column only")
        degrees = [1]
        v, w = EnergyCoeffs.quadratic_only(V2), EnergyCoeffs.quadratic_only(W2)
    else:
        v, w = load_energy(cfg.energy, "v"), load_energy(cfg.energy, "w")
        if v.n != system.n:
            raise UsageError("energy file dimension does not match the Burgers system")
        if max(degrees) > 1 and v.degree < 3:
            raise UsageError(f"missing energy files for requested k = {max(degrees)}: need degree >= 3 coefficients")

    sim = SimConfig(0.0, cfg.t1, cfg.dt)
    u = atan_sine_input(cfg.m)
    fom = integrate(system.rhs, np.zeros(system.n), u, sim, system.output)

    def cell(rk):
        r, k = rk
        rom = build_rom(system, truncated_transformation(v, w, k, r), projection=cfg.projection)
        red = integrate(rom.rhs, np.zeros(r), u, sim, rom.output)
        return rk, relative_output_error(fom, red)

    cells = [(r, k) for r in cfg.orders for k in degrees]
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = dict(pool.map(cell, cells))
    return degrees, results


def write_table_csv(path: Path, orders, degrees, results, p: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "output"] + [f"k={k}" for k in degrees])
        for r in orders:
            for i in range(p):
                writer.writerow([r, f"e{i + 1}"] + [f"{results[(r, k)][i]:.7g}" for k in degrees])


# --- commands ------------------------------------------------------------------------------


def _hinf(args) -> HinfConfig:
    if args.open_loop:
        return HinfConfig(open_loop=True)
    if args.gamma is None:
        raise UsageError("pass --gamma or --open-loop")
    return HinfConfig(gamma=args.gamma)


def cmd_are(args) -> int:
    system = load_system(args.system)
    cfg = _hinf(args)
    V2, W2 = solve_hinf_gramians(system.A, system.B, system.C, cfg)
    v, w = EnergyCoeffs.quadratic_only(V2), EnergyCoeffs.quadratic_only(W2)
    out = Path(args.out)
    _write_json(out, energy_to_json(v, w))
    write_manifest(out, "are", {"gamma": cfg.gamma, "open_loop": cfg.open_loop, "eta": cfg.eta}, [args.system])
    print(f"eta = {cfg.eta:.6g}; wrote {out}")
    return EXIT_OK


def cmd_balance(args) -> int:
    v = load_energy(args.v, "v")
    w = load_energy(args.w or args.v, "w")
    if v.n != w.n:
        raise UsageError("past and future energies have different dimensions")
    if args.reduce is None:
        trafo = compute_transformation(v, w, args.degree)
    else:
        trafo = truncated_transformation(v, w, args.degree, args.reduce)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_json(trafo, out)
    write_manifest(out, "balance", {"degree": args.degree, "reduce": args.reduce}, [args.v, args.w])
    print("Xi = " + " ".join(f"{x:.10g}" for x in trafo.xi))
    return EXIT_OK


def cmd_svf(args) -> int:
    w = load_energy(args.w, "w")
    trafo = Transformation.from_json(json.loads(Path(args.trafo).read_text()))
    S = compute_svf(w, trafo, args.ell)
    grid, vals = sample_svf(S, args.range, args.samples, args.coordinate)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z"] + [f"xi_{i + 1}" for i in range(S.n)])
        for z, row in zip(grid, vals):
            writer.writerow([repr(float(z))] + [repr(float(x)) for x in row])
    cfg = {"ell": args.ell, "range": args.range, "samples": args.samples, "coordinate": args.coordinate}
    write_manifest(out, "svf", cfg, [args.w, args.trafo, args.v])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_rom(args) -> int:
    system = load_system(args.system)
    trafo = Transformation.from_json(json.loads(Path(args.trafo).read_text()))
    rom = build_rom(system, trafo, args.strategy, r=args.r, projection=args.projection)
    out = Path(args.out)
    _write_json(out, rom.to_json())
    cfg = {"strategy": args.strategy, "r": rom.r, "projection": args.projection}
    write_manifest(out, "rom", cfg, [args.system, args.trafo])
    print(f"r = {rom.r}; wrote {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if (args.rom is None) == (args.system is None):
        raise UsageError("pass exactly one of --rom and --system")
    if args.rom is not None:
        model = RomArtifact.from_json(json.loads(Path(args.rom).read_text()))
        m, x0 = model.system.m, np.zeros(model.r)
    else:
        model = load_system(args.system)
        m, x0 = model.m, np.zeros(model.n)
    u = atan_sine_input(m) if args.input == "atan_sine" else zero_input(m)
    cfg = SimConfig(0.0, args.t1, args.dt)
    traj = integrate(model.rhs, x0, u, cfg, model.output)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out)
    config = {"t1": args.t1, "dt": args.dt, "input": args.input}
    write_manifest(out, "simulate", config, [args.rom, args.system])
    if args.reference is not None:
        e = relative_output_error(Trajectory.from_csv(args.reference), traj)
        print("e = " + " ".join(f"{x:.7g}" for x in e))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_table(args) -> int:
    cfg_path = Path(args.config) if args.config else None
    data = json.loads(cfg_path.read_text()) if cfg_path else {}
    if args.degrees is not None:
        data["degrees"] = args.degrees
    cfg = TableConfig.from_json(data)
    degrees, results = error_table(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table_csv(out, cfg.orders, degrees, results, cfg.p)
    write_manifest(out, "table", dataclasses.asdict(cfg), [cfg_path, cfg.energy])
    print(out.read_text(), end="")
    return EXIT_OK


def cmd_burgers(args) -> int:
    cfg = BurgersConfig(args.n, args.epsilon, args.m, args.p, args.output_scale)
    out = Path(args.out)
    _write_json(out, burgers_system(cfg).to_json())
    write_manifest(out, "burgers", dataclasses.asdict(cfg), [])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_example2d(args) -> int:
    out = Path(args.out)
    _write_json(out, example_2d_system().to_json())
    write_manifest(out, "example2d", {}, [])
    print(f"wrote {out}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlbal", description="Polynomial nonlinear balanced truncation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("are", help="quadratic energies from the H-infinity Riccati equations")
    p.add_argument("--system", required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--open-loop", action="store_true", help="eta = 0 (Lyapunov equations)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_are)

    p = sub.add_parser("balance", help="polynomial balancing transformation")
    p.add_argument("--v", required=True, help="past energy file")
    p.add_argument("--w", help="future energy file (defaults to --v)")
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--reduce", type=int, help="truncated transformation of this order")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("svf", help="sample singular value functions to CSV")
    p.add_argument("--v", help="past energy file (recorded only)")
    p.add_argument("--w", required=True)
    p.add_argument("--trafo", required=True)
    p.add_argument("--ell", type=int, required=True)
    p.add_argument("--range", type=float, required=True)
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--coordinate", choices=["z", "zbar"], default="z")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_svf)

    p = sub.add_parser("rom", help="assemble a reduced model")
    p.add_argument("--system", required=True)
    p.add_argument("--trafo", required=True)
    p.add_argument("--strategy", choices=["balance_and_reduce", "balance_then_reduce"],
                   default="balance_and_reduce")
    p.add_argument("--r", type=int, help="order for balance_then_reduce")
    p.add_argument("--projection", choices=["moore_penrose", "oblique"], default="moore_penrose")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rom)

    p = sub.add_parser("simulate", help="RK4 simulation of a full or reduced model")
    p.add_argument("--rom")
    p.add_argument("--system")
    p.add_argument("--t1", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--input", choices=["atan_sine", "zero"], default="atan_sine")
    p.add_argument("--reference", help="trajectory CSV to compare outputs against")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("table", help="Burgers ROM error table (rows r, columns k)")
    p.add_argument("--config", help="JSON table config")
    p.add_argument("--degrees", type=int, nargs="*", help="override the degree list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("burgers", help="export the discretized Burgers system")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--output-scale", choices=["integral", "average"], default="integral")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_burgers)

    p = sub.add_parser("example2d", help="export the two-state polynomial example")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_example2d)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ArithmeticError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
