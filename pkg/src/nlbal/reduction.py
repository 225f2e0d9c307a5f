"""Balance-and-reduce transformations and reduced-order models on the balanced manifold."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .balancing import (
    SvfCoeffs,
    Transformation,
    ValidityRegionError,
    _sample_component,
    higher_degree_coeffs,
    io_scale_inverse,
    linear_balancing,
    verify_unvec_orientation,
)
from .energy import EnergyCoeffs
from .kronpoly import (
    eval_poly_jacobian,
    eval_poly_map,
    is_symmetric,
    restrict_columns,
    symmetrize_map,
    unvec,
    vec,
)

ReducedTransformation = Transformation

BALANCE_THEN_REDUCE_MAX_N = 64
RANK_RTOL = 1e-10


class RankLossError(ArithmeticError):
    """The manifold Jacobian lost rank: the state left the chart."""


def truncated_transformation(v: EnergyCoeffs, w: EnergyCoeffs, k: int, r: int) -> Transformation:
    """Truncated balancing transformation ``T_{j,r}`` (``n x r**j``) of degree ``k``.

    Only quantities of reduced width ``r**j`` are formed.
    """
    if k < 1:
        raise ValueError("transformation degree must be >= 1")
    if v.n != w.n:
        raise ValueError("past and future energies have different dimensions")
    verify_unvec_orientation()
    T1r, pinv, xi = linear_balancing(v.quadratic, w.quadratic, r)
    return Transformation(higher_degree_coeffs(T1r, v, k), xi, pinv)


def restrict_transformation(trafo: Transformation, r: int) -> Transformation:
    """Column restriction ``T_j Psi_r^[j]`` of a full transformation.

    This is the embedding ``zr -> Phi([zr, 0])`` used by balance-then-reduce.
    """
    n = trafo.n
    T = [restrict_columns(Tj, n, j, r) for j, Tj in enumerate(trafo.T, start=1)]
    return Transformation(T, trafo.xi[:r].copy(), trafo.T1_pinv[:r].copy())


def check_diagonalization(trafo: Transformation, V2, W2) -> float:
    """``|| T1r^+ V2^-1 W2 T1r - Xi_r^2 ||_F``."""
    try:
        VW = np.linalg.solve(np.asarray(V2, dtype=float), np.asarray(W2, dtype=float))
    except np.linalg.LinAlgError:
        raise ValueError("V2 is singular") from None
    D = trafo.T1_pinv @ VW @ trafo.T[0]
    return float(np.linalg.norm(D - np.diag(trafo.xi**2)))


# --- systems -------------------------------------------------------------------------------


@dataclass
class PolySystem:
    """Control-affine system ``x' = f(x) + g(x) u``, ``y = h(x)``.

    The quadratic-drift form ``f(x) = A x + N2 (x ⊗ x)``, ``g = B``,
    ``h(x) = C x`` is the fast path; generic callables ``f``, ``g``, ``h``
    override it when supplied.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    N2: np.ndarray | None = None
    f: Callable | None = None
    g: Callable | None = None
    h: Callable | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
        if self.N2 is None:
            self.N2 = np.zeros((n, n * n))
        self.N2 = np.asarray(self.N2, dtype=float)
        if self.N2.shape != (n, n * n):
            raise ValueError(f"N2 must be {n} x {n * n}")
        if not is_symmetric(self.N2, n, 2, tol=1e-12):
            self.N2 = symmetrize_map(self.N2, n, 2)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def quadratic(self) -> bool:
        return self.f is None and self.g is None and self.h is None

    def drift(self, x):
        if self.f is not None:
            return np.asarray(self.f(x), dtype=float)
        return self.A @ x + self.N2 @ np.kron(x, x)

    def input_matrix(self, x):
        if self.g is not None:
            return np.asarray(self.g(x), dtype=float).reshape(self.n, -1)
        return self.B

    def output(self, x):
        if self.h is not None:
            return np.asarray(self.h(x), dtype=float)
        return self.C @ x

    def rhs(self, t, x, u):
        return self.drift(x) + self.input_matrix(x) @ np.atleast_1d(u)

    def to_json(self) -> dict:
        if not self.quadratic:
            raise ValueError("only quadratic-drift systems are serializable")
        return {
            "n": self.n, "m": self.m, "p": self.p,
            "A": vec(self.A).tolist(), "N2": vec(self.N2).tolist(),
            "B": vec(self.B).tolist(), "C": vec(self.C).tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "PolySystem":
        n, m, p = int(data["n"]), int(data["m"]), int(data["p"])
        N2 = data.get("N2")
        return cls(
            A=unvec(np.asarray(data["A"], dtype=float), n, n),
            B=unvec(np.asarray(data["B"], dtype=float), n, m),
            C=unvec(np.asarray(data["C"], dtype=float), p, n),
            N2=None if N2 is None else unvec(np.asarray(N2, dtype=float), n, n * n),
        )


def load_system(path) -> PolySystem:
    return PolySystem.from_json(json.loads(Path(path).read_text()))


# --- reduced-order models ------------------------------------------------------------------


def lstsq_qr(J, b):
    """Least-squares solve ``J^+ b`` by pivoted thin QR, rejecting rank loss."""
    Q, R, piv = sla.qr(J, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[-1] <= RANK_RTOL * d[0]:
        raise RankLossError("Jacobian rank loss; state left manifold chart")
    y = sla.solve_triangular(R, Q.T @ b)
    out = np.empty_like(y)
    out[piv] = y
    return out


@dataclass
class RomArtifact:
    """Reduced model ``zr' = f_r(zr) + g_r(zr) u``, ``y_r = h_r(zr)``.

    ``strategy="balance_and_reduce"`` projects with the Moore-Penrose inverse of
    the reduced manifold Jacobian.  ``"balance_then_reduce"`` embeds ``zr`` as
    ``[zr, 0]`` in the full transformation and keeps the first ``r`` rows of the
    inverse full Jacobian; it is a reference for small ``n``.

    With ``scaled=True`` the state is the input-output balanced ``zbar_r`` and
    ``svf`` provides the scaling ``z_i = zbar_i / sqrt(sigma_i(zbar_i))``.

    ``projection="moore_penrose"`` applies the pseudoinverse of ``J_r``;
    ``"oblique"`` uses the fixed test basis ``W = T1r_pinv`` and the left
    inverse ``(W J_r)^-1 W``, which reduces to ``T1r_pinv`` for a linear
    transformation.  Both agree when ``r = n``.
    """

    system: PolySystem
    trafo: Transformation
    r: int
    strategy: str = "balance_and_reduce"
    scaled: bool = False
    svf: SvfCoeffs | None = None
    projection: str = "moore_penrose"
    AT: list = field(default_factory=list)
    CT: list = field(default_factory=list)
    _full_map: object = None
    _red_map: object = None
    _const_left: object = None

    def __post_init__(self):
        tr = self.trafo
        if self.strategy == "balance_and_reduce":
            red = tr
        elif self.strategy == "balance_then_reduce":
            if not tr.is_full:
                raise ValueError("balance_then_reduce needs the full (r = n) transformation")
            if tr.n > BALANCE_THEN_REDUCE_MAX_N:
                raise ValueError(f"balance_then_reduce is limited to n <= {BALANCE_THEN_REDUCE_MAX_N}")
            red = restrict_transformation(tr, self.r)
            self._full_map = tr.polymap()
        else:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if red.r != self.r:
            raise ValueError(f"transformation has reduced order {red.r}, requested {self.r}")
        if self.projection not in ("moore_penrose", "oblique"):
            raise ValueError(f"unknown projection {self.projection!r}")
        if self.scaled and self.svf is None:
            raise ValueError("scaled ROM needs singular value function coefficients")
        self._red = red
        self._red_map = red.polymap()
        if self.system.quadratic:
            self.AT = [self.system.A @ Tj for Tj in red.T]
            self.CT = [self.system.C @ Tj for Tj in red.T]
        if self.strategy == "balance_and_reduce" and red.degree == 1 and not self.scaled:
            # constant Jacobian: the left inverse is precomputed once
            T1 = red.T[0]
            self._const_left = red.T1_pinv if self.projection == "oblique" else lstsq_qr(T1, np.eye(T1.shape[0]))

    # coordinates

    def _unscale(self, zr):
        if not self.scaled:
            return zr, np.ones(self.r)
        S = self.svf.head(self.r)
        z = io_scale_inverse(S, zr)
        xi = S(z)
        dzbar_dz = np.sqrt(xi) + z * S.derivative(z) / (2 * np.sqrt(xi))
        if np.any(dzbar_dz <= 0):
            raise ValidityRegionError("scaling is not invertible here")
        return z, 1.0 / dzbar_dz

    def embed(self, zr) -> np.ndarray:
        """``Phi_r(zr)``: the full state represented by the reduced state."""
        z, _ = self._unscale(np.asarray(zr, dtype=float))
        return eval_poly_map(self._red_map, z)

    def jacobian(self, zr) -> np.ndarray:
        z, chain = self._unscale(np.asarray(zr, dtype=float))
        return eval_poly_jacobian(self._red_map, z) * chain

    def _lifted_drift(self, z, x):
        sys = self.system
        if not sys.quadratic:
            return sys.drift(x)
        lin = self.AT[0] @ z
        zk = z
        for ATj in self.AT[1:]:
            zk = np.kron(zk, z)
            lin = lin + ATj @ zk
        return lin + sys.N2 @ np.kron(x, x)

    def rhs(self, t, zr, u) -> np.ndarray:
        zr = np.asarray(zr, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        z, chain = self._unscale(zr)
        x = eval_poly_map(self._red_map, z)
        b = self._lifted_drift(z, x) + self.system.input_matrix(x) @ u
        if self.strategy == "balance_then_reduce":
            zfull = np.zeros(self.trafo.n)
            zfull[: self.r] = z
            J = eval_poly_jacobian(self._full_map, zfull)
            try:
                return np.linalg.solve(J, b)[: self.r] / chain
            except np.linalg.LinAlgError:
                raise RankLossError("Jacobian rank loss; state left manifold chart") from None
        if self._const_left is not None:
            return self._const_left @ b
        J = eval_poly_jacobian(self._red_map, z) * chain
        if self.projection == "oblique":
            W = self._red.T1_pinv
            try:
                return np.linalg.solve(W @ J, W @ b)
            except np.linalg.LinAlgError:
                raise RankLossError("Jacobian rank loss; state left manifold chart") from None
        return lstsq_qr(J, b)

    def output(self, zr) -> np.ndarray:
        z, _ = self._unscale(np.asarray(zr, dtype=float))
        if self.system.quadratic:
            y = self.CT[0] @ z
            zk = z
            for CTj in self.CT[1:]:
                zk = np.kron(zk, z)
                y = y + CTj @ zk
            return y
        return self.system.output(eval_poly_map(self._red_map, z))

    def to_json(self) -> dict:
        data = {
            "r": self.r,
            "strategy": self.strategy,
            "scaled": self.scaled,
            "projection": self.projection,
            "system": self.system.to_json(),
            "trafo": self.trafo.to_json(),
            "AT": {str(j): vec(M).tolist() for j, M in enumerate(self.AT, start=1)},
            "CT": {str(j): vec(M).tolist() for j, M in enumerate(self.CT, start=1)},
        }
        if self.svf is not None:
            data["svf"] = self.svf.to_json()
        return data

    @classmethod
    def from_json(cls, data: dict) -> "RomArtifact":
        svf = SvfCoeffs.from_json(data["svf"]) if "svf" in data else None
        return cls(
            system=PolySystem.from_json(data["system"]),
            trafo=Transformation.from_json(data["trafo"]),
            r=int(data["r"]),
            strategy=data.get("strategy", "balance_and_reduce"),
            scaled=bool(data.get("scaled", False)),
            svf=svf,
            projection=data.get("projection", "moore_penrose"),
        )


def build_rom(system: PolySystem, trafo: Transformation, strategy: str = "balance_and_reduce",
              r: int | None = None, scaled: bool = False, svf: SvfCoeffs | None = None,
              projection: str = "moore_penrose") -> RomArtifact:
    """Assemble the reduced model.

    For ``balance_and_reduce`` ``trafo`` is the truncated transformation and
    ``r`` defaults to its width; ``balance_then_reduce`` takes the full
    transformation and needs ``r``.
    """
    if system.n != trafo.n:
        raise ValueError("system and transformation dimensions differ")
    if r is None:
        r = trafo.r
    return RomArtifact(system, trafo, int(r), strategy, scaled, svf, projection)


def linear_rom_matrices(system: PolySystem, trafo: Transformation, left=None):
    """Projected linear triple ``(P A T1r, P B, C T1r)``.

    ``left`` defaults to the Moore-Penrose inverse of ``T1r``; pass
    ``trafo.T1_pinv`` for the oblique (balancing) projection.
    """
    T1 = trafo.T[0]
    P = np.linalg.pinv(T1) if left is None else left
    return P @ system.A @ T1, P @ system.B, system.C @ T1


# --- order selection and initial conditions -----------------------------------------------


def suggest_order(S: SvfCoeffs, a: float, samples: int, coordinate: str = "zbar"):
    """Gap ratios ``max sigma_r / max sigma_{r+1}`` over ``[-a, a]``.

    Returns a list of ``(r, ratio)`` sorted by decreasing ratio.
    """
    peaks = np.array([_sample_component(S, i, a, samples, coordinate)[1].max() for i in range(S.n)])
    gaps = [(r, float(peaks[r - 1] / peaks[r])) for r in range(1, S.n)]
    return sorted(gaps, key=lambda item: -item[1])


def gap_ratios(S: SvfCoeffs, a: float, samples: int, coordinate: str = "zbar") -> np.ndarray:
    """Gap ratio for r = 1 .. n-1, in order of r."""
    return np.array([ratio for _, ratio in sorted(suggest_order(S, a, samples, coordinate))])


def rom_initial_condition(trafo: Transformation, x0, *, tol: float = 1e-13, maxiter: int = 50):
    """Gauss-Newton fit of ``Phi_r(zr) ~ x0``; returns ``(zr, residual_norm)``."""
    x0 = np.asarray(x0, dtype=float)
    if not np.any(x0):
        return np.zeros(trafo.r), 0.0
    phi = trafo.polymap()
    z = lstsq_qr(trafo.T[0], x0)
    for _ in range(maxiter):
        res = eval_poly_map(phi, z) - x0
        J = eval_poly_jacobian(phi, z)
        step = lstsq_qr(J, res)
        z = z - step
        if np.linalg.norm(step) <= tol * max(1.0, np.linalg.norm(z)):
            break
    else:
        raise ArithmeticError("Gauss-Newton did not converge for the ROM initial condition")
    return z, float(np.linalg.norm(eval_poly_map(phi, z) - x0))


__all__ = [
    "ReducedTransformation", "RankLossError", "truncated_transformation", "restrict_transformation",
    "check_diagonalization", "PolySystem", "load_system", "RomArtifact", "build_rom",
    "linear_rom_matrices", "suggest_order", "gap_ratios", "rom_initial_condition",
]
