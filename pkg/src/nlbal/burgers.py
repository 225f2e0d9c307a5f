"""Linear finite elements for the controlled Burgers equation on [0, 1].

``w_t = eps w_xx - (w^2)_x / 2 + sum_j chi_j(x) u_j`` with zero Dirichlet data,
outputs ``y_i = int_{Omega_i} w dx`` over ``p`` equal subintervals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kronpoly import symmetrize_map
from .reduction import PolySystem


@dataclass(frozen=True)
class BurgersConfig:
    n: int = 16
    epsilon: float = 0.05
    m: int = 4
    p: int = 1
    output_scale: str = "integral"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (1 <= self.m <= self.n and 1 <= self.p <= self.n):
            raise ValueError("need 1 <= m, p <= n")
        if self.output_scale not in ("integral", "average"):
            raise ValueError("output_scale must be 'integral' or 'average'")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)


@dataclass
class DiscreteSystem:
    """Finite-element matrices (``E_fe`` etc.) and the identity-mass system."""

    E_fe: np.ndarray
    A_fe: np.ndarray
    N2_fe: np.ndarray
    B_fe: np.ndarray
    C_fe: np.ndarray
    E_sqrt: np.ndarray
    system: PolySystem

    @property
    def A(self):
        return self.system.A

    @property
    def N2(self):
        return self.system.N2

    @property
    def B(self):
        return self.system.B

    @property
    def C(self):
        return self.system.C


def _tridiag(n, lower, diag, upper):
    return np.diag(np.full(n, diag)) + np.diag(np.full(n - 1, lower), -1) + np.diag(np.full(n - 1, upper), 1)


def hat_integral(i: int, h: float, lo: float, hi: float) -> float:
    """``int_lo^hi phi_i`` for the hat function centred at ``i h``."""
    xc = i * h
    total = 0.0
    for a, b in ((xc - h, xc), (xc, xc + h)):
        s, e = max(a, lo), min(b, hi)
        if e > s:
            phi = lambda x: max(0.0, 1.0 - abs(x - xc) / h)
            total += 0.5 * (e - s) * (phi(s) + phi(e))
    return total


def convection_tensor(n: int, h: float) -> np.ndarray:
    """``N[i, (j, k)] = -int phi_i phi_j phi_k'`` over the interior hats.

    Column ``(j, k)`` sits at ``j * n + k``, matching ``np.kron(w, w)``.
    """
    N = np.zeros((n, n, n))
    mass = np.array([[h / 3, h / 6], [h / 6, h / 3]])
    slope = np.array([-1.0 / h, 1.0 / h])
    # element e spans nodes e and e + 1 (0 and n + 1 are the boundary nodes)
    for e in range(n + 1):
        nodes = (e - 1, e)
        for a, i in enumerate(nodes):
            if not 0 <= i < n:
                continue
            for b, j in enumerate(nodes):
                if not 0 <= j < n:
                    continue
                for c, k in enumerate(nodes):
                    if not 0 <= k < n:
                        continue
                    # phi_i phi_j is quadratic; its element integral is the local mass entry
                    N[i, j, k] -= mass[a, b] * slope[c]
    return N.reshape(n, n * n)


def assemble(cfg: BurgersConfig) -> DiscreteSystem:
    n, h, eps = cfg.n, cfg.h, cfg.epsilon
    E = h / 6 * _tridiag(n, 1.0, 4.0, 1.0)
    A = -eps / h * _tridiag(n, -1.0, 2.0, -1.0)
    N2 = convection_tensor(n, h)
    nodes = np.arange(1, n + 1)
    B = np.array([[hat_integral(i, h, j / cfg.m, (j + 1) / cfg.m) for j in range(cfg.m)] for i in nodes])
    C = np.array([[hat_integral(j, h, i / cfg.p, (i + 1) / cfg.p) for j in nodes] for i in range(cfg.p)])
    if cfg.output_scale == "average":
        C = C * cfg.p

    w, U = np.linalg.eigh(E)
    S = (U * np.sqrt(w)) @ U.T
    Si = (U / np.sqrt(w)) @ U.T
    A_id = Si @ A @ Si
    N2_id = symmetrize_map(Si @ N2 @ np.kron(Si, Si), n, 2)
    system = PolySystem(A=0.5 * (A_id + A_id.T), B=Si @ B, C=C @ Si, N2=N2_id)
    return DiscreteSystem(E, A, N2, B, C, S, system)


def burgers_system(cfg: BurgersConfig) -> PolySystem:
    return assemble(cfg).system


def example_2d_system() -> PolySystem:
    """``x' = [-x1 + x2 - x2^2, -x2] + [1, 1] u``, ``y = x1 + x2``."""
    A = np.array([[-1.0, 1.0], [0.0, -1.0]])
    N2 = np.zeros((2, 4))
    N2[0, 3] = -1.0
    return PolySystem(A=A, B=np.array([[1.0], [1.0]]), C=np.array([[1.0, 1.0]]), N2=N2)
