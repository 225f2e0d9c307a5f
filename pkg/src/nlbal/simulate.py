"""Fixed-step time integration, input signals and output error metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid


class BlowUpError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SimConfig:
    t0: float = 0.0
    t1: float = 10.0
    dt: float = 1e-3
    method: str = "rk4"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t1 < self.t0:
            raise ValueError("t1 must not precede t0")
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}")
        steps = (self.t1 - self.t0) / self.dt
        if abs(steps - round(steps)) > 4 * np.finfo(float).eps * max(1.0, steps):
            raise ValueError("(t1 - t0) / dt must be an integer")

    @property
    def steps(self) -> int:
        return int(round((self.t1 - self.t0) / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray

    def to_csv(self, path) -> None:
        nx, ny = self.states.shape[1], self.outputs.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(nx)] + [f"y{i + 1}" for i in range(ny)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in np.column_stack([self.times, self.states, self.outputs]):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path) as fh:
            header = next(csv.reader(fh))
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        xs = [i for i, name in enumerate(header) if name.startswith("x")]
        ys = [i for i, name in enumerate(header) if name.startswith("y")]
        return cls(data[:, 0], data[:, xs], data[:, ys])


def integrate(rhs: Callable, x0, u: Callable, cfg: SimConfig, output: Callable | None = None) -> Trajectory:
    """Classical RK4 for ``x' = rhs(t, x, u(t))``.

    ``output(x)`` is recorded at every grid point (the state itself if omitted).
    """
    x = np.array(x0, dtype=float)
    times = cfg.times
    h = cfg.dt
    states = np.empty((times.size, x.size))
    states[0] = x
    for i, t in enumerate(times[:-1]):
        k1 = rhs(t, x, u(t))
        k2 = rhs(t + h / 2, x + h / 2 * k1, u(t + h / 2))
        k3 = rhs(t + h / 2, x + h / 2 * k2, u(t + h / 2))
        k4 = rhs(t + h, x + h * k3, u(t + h))
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(f"blow-up at t={times[i + 1]:.6g}")
        states[i + 1] = x
    if output is None:
        outputs = states.copy()
    else:
        outputs = np.array([np.atleast_1d(output(s)) for s in states])
    return Trajectory(times, states, outputs)


def atan_sine_input(m: int) -> Callable:
    """``u_1(t) = 0.002 atan(t) + 0.001 sin(t)``, other channels zero."""
    if m < 1:
        raise ValueError("m must be >= 1")

    def u(t):
        out = np.zeros(m)
        out[0] = 0.002 * math.atan(t) + 0.001 * math.sin(t)
        return out

    return u


def zero_input(m: int) -> Callable:
    zeros = np.zeros(m)
    return lambda t: zeros


def relative_output_error(full: Trajectory, reduced: Trajectory) -> np.ndarray:
    """Per-output relative L2-in-time error (trapezoid rule on the shared grid)."""
    if full.times.shape != reduced.times.shape or not np.allclose(full.times, reduced.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories must share the time grid")
    if full.outputs.shape != reduced.outputs.shape:
        raise ValueError("output dimensions differ")
    t = full.times
    num = trapezoid((full.outputs - reduced.outputs) ** 2, t, axis=0)
    den = trapezoid(full.outputs**2, t, axis=0)
    for i, d in enumerate(den):
        if d == 0:
            raise ValueError(f"output {i + 1} identically zero")
    return np.sqrt(num / den)
