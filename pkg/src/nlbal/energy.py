"""Polynomial energy-function coefficients and the quadratic (Riccati) base case."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .kronpoly import eval_poly_scalar, symmetrize_vector, symmetry_defect

logger = logging.getLogger(__name__)

SYMMETRY_AUTOFIX_TOL = 1e-12
ROUNDOFF_TOL = 1e-15


class EnergyValidationError(ValueError):
    pass


class RiccatiError(ArithmeticError):
    pass


@dataclass
class EnergyCoeffs:
    """Energy function ``1/2 sum_{k=2}^d v_k^T x^[k]`` with symmetric coefficients.

    ``v`` maps degree ``k`` to a flat vector of length ``n**k``.
    """

    n: int
    v: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.v = {int(k): np.asarray(val, dtype=float).ravel() for k, val in self.v.items()}
        if 2 not in self.v:
            raise EnergyValidationError("energy needs a quadratic (degree 2) term")
        for k, val in self.v.items():
            if k < 2:
                raise EnergyValidationError(f"degree {k} terms are not allowed (energy starts at degree 2)")
            if val.size != self.n**k:
                raise EnergyValidationError(f"v{k} has length {val.size}, expected {self.n}**{k}")

    @property
    def degree(self) -> int:
        return max(self.v)

    @property
    def quadratic(self) -> np.ndarray:
        return self.v[2].reshape(self.n, self.n, order="F")

    def coeff(self, k: int) -> np.ndarray | None:
        return self.v.get(k)

    def __call__(self, x) -> float:
        return eval_poly_scalar(self.v, x)

    def validate(self, autofix_tol: float = SYMMETRY_AUTOFIX_TOL, definite: bool = True,
                 name: str = "v") -> "EnergyCoeffs":
        """Check symmetric coefficients and a positive (semi)definite quadratic part.

        Symmetry violations up to ``autofix_tol`` (relative) are repaired in
        place with a warning; larger ones raise.  ``definite=False`` accepts a
        semidefinite quadratic part, as for a future energy with unobservable
        directions.
        """
        for k, val in self.v.items():
            scale = max(1.0, float(np.max(np.abs(val), initial=0.0)))
            defect = symmetry_defect(val[None, :], self.n, k)
            if defect > autofix_tol * scale:
                raise EnergyValidationError(f"{name}{k} is not symmetric (defect {defect:.3e})")
            if defect > ROUNDOFF_TOL * scale:
                logger.warning("%s%d symmetrized (defect %.3e)", name, k, defect)
                self.v[k] = symmetrize_vector(val, self.n, k)
        if definite:
            try:
                np.linalg.cholesky(self.quadratic)
            except np.linalg.LinAlgError:
                raise EnergyValidationError(f"{name}2 not positive definite") from None
        else:
            ev = np.linalg.eigvalsh(0.5 * (self.quadratic + self.quadratic.T))
            if ev[0] < -1e-10 * max(1.0, ev[-1]):
                raise EnergyValidationError(f"{name}2 not positive semidefinite")
        return self

    @classmethod
    def quadratic_only(cls, M) -> "EnergyCoeffs":
        M = np.asarray(M, dtype=float)
        return cls(M.shape[0], {2: M.reshape(-1, order="F")})

    def to_dict(self) -> dict:
        return {str(k): self.v[k].tolist() for k in sorted(self.v)}


@dataclass(frozen=True)
class HinfConfig:
    """H-infinity parameter; ``eta = 1 - gamma**-2`` (``eta = 0`` is the open-loop limit)."""

    gamma: float | None = None
    open_loop: bool = False

    def __post_init__(self):
        if self.open_loop:
            return
        if self.gamma is None:
            raise ValueError("gamma is required unless open_loop is set")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.gamma == 1:
            raise ValueError("gamma must differ from 1")

    @property
    def eta(self) -> float:
        return 0.0 if self.open_loop else 1.0 - self.gamma**-2

    @classmethod
    def from_eta(cls, eta: float) -> "HinfConfig":
        if eta == 0:
            return cls(open_loop=True)
        if eta >= 1:
            raise ValueError("eta must be below 1")
        return cls(gamma=1.0 / math.sqrt(1.0 - eta))


def spectral_abscissa(M) -> float:
    return float(np.max(np.linalg.eigvals(M).real))


def care_residual(A, G, Q, X) -> np.ndarray:
    """Residual of ``A^T X + X A + Q - X G X``."""
    return A.T @ X + X @ A + Q - X @ G @ X


def newton_kleinman(A, G, Q, X0, *, tol: float = 1e-12, maxiter: int = 50) -> np.ndarray:
    """Solve ``A^T X + X A + Q - X G X = 0`` by Newton-Kleinman iteration.

    ``X0`` must make ``A - G X0`` Hurwitz.  Each step is a dense Lyapunov solve
    (Bartels-Stewart).
    """
    X = np.array(X0, dtype=float)
    scale = 1.0 + np.linalg.norm(A) + np.linalg.norm(Q)
    for it in range(maxiter):
        Ak = A - G @ X
        rhs = -(Q + X @ G @ X)
        X_new = sla.solve_continuous_lyapunov(Ak.T, rhs)
        X_new = 0.5 * (X_new + X_new.T)
        if not np.all(np.isfinite(X_new)):
            raise RiccatiError("Newton-Kleinman produced non-finite iterates")
        step = np.linalg.norm(X_new - X)
        X = X_new
        res = np.linalg.norm(care_residual(A, G, Q, X))
        if res <= tol * scale * max(1.0, np.linalg.norm(X)) or step <= tol * max(1.0, np.linalg.norm(X)):
            logger.debug("Newton-Kleinman converged in %d iterations (residual %.2e)", it + 1, res)
            return X
    raise RiccatiError(f"Newton-Kleinman did not converge in {maxiter} iterations (residual {res:.3e})")


def _initial_guess(A, G, n):
    """Stabilizing start for Newton-Kleinman."""
    if spectral_abscissa(A) < 0:
        return np.zeros((n, n))
    # G = eta B B^T with eta > 0: LQR with weights Q = I, R = I stabilizes A - G X
    w, U = np.linalg.eigh(0.5 * (G + G.T))
    if np.min(w) < -1e-14 * max(1.0, np.max(np.abs(w))):
        raise RiccatiError("unstable linearization and indefinite quadratic term: no stabilizing start")
    Bg = U * np.sqrt(np.clip(w, 0.0, None))
    return sla.solve_continuous_are(A, Bg, np.eye(n), np.eye(n))


def solve_hinf_gramians(A, B, C, cfg: HinfConfig, *, check: bool = True):
    """Solve the H-infinity filter and control AREs.

    Filter:  ``A Y + Y A^T + B B^T - eta Y C^T C Y = 0``
    Control: ``A^T X + X A + C^T C - eta X B B^T X = 0``

    Returns ``(V2, W2) = (inv(Y), X)``, the quadratic coefficients of the past
    and future energies.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    n = A.shape[0]
    eta = cfg.eta

    Gy, Qy = eta * C.T @ C, B @ B.T
    Gx, Qx = eta * B @ B.T, C.T @ C
    if eta == 0:
        if spectral_abscissa(A) >= 0:
            raise RiccatiError("open-loop energies require an asymptotically stable A")
        Y = sla.solve_continuous_lyapunov(A, -Qy)
        X = sla.solve_continuous_lyapunov(A.T, -Qx)
        Y, X = 0.5 * (Y + Y.T), 0.5 * (X + X.T)
    else:
        # filter ARE is the control ARE of the dual system (A^T, C^T, B^T)
        Y = newton_kleinman(A.T, Gy, Qy, _initial_guess(A.T, Gy, n))
        X = newton_kleinman(A, Gx, Qx, _initial_guess(A, Gx, n))

    if check:
        tol = 1e-10 * (1.0 + np.linalg.norm(A))
        ry = np.linalg.norm(care_residual(A.T, Gy, Qy, Y))
        rx = np.linalg.norm(care_residual(A, Gx, Qx, X))
        if ry > tol * max(1.0, np.linalg.norm(Y)) or rx > tol * max(1.0, np.linalg.norm(X)):
            raise RiccatiError(f"ARE residuals too large (filter {ry:.2e}, control {rx:.2e})")
        if spectral_abscissa(A - Y @ Gy) >= 0 or spectral_abscissa(A - Gx @ X) >= 0:
            raise RiccatiError("ARE solution is not stabilizing")
        if np.min(np.linalg.eigvalsh(Y)) <= 0:
            raise RiccatiError("Y is not positive definite")
        # X is only semidefinite when the output misses part of the state
        ex = np.linalg.eigvalsh(X)
        if np.min(ex) < -1e-10 * max(1.0, np.max(np.abs(ex))):
            raise RiccatiError("X is not positive semidefinite")
    try:
        V2 = np.linalg.inv(Y)
    except np.linalg.LinAlgError:
        raise RiccatiError("filter ARE solution is singular") from None
    return 0.5 * (V2 + V2.T), X


def _parse_terms(raw: dict, n: int) -> dict[int, np.ndarray]:
    if not isinstance(raw, dict):
        raise EnergyValidationError("coefficient map must be an object keyed by degree")
    out = {}
    for key, val in raw.items():
        try:
            k = int(key)
        except ValueError:
            raise EnergyValidationError(f"bad degree key {key!r}") from None
        arr = np.asarray(val, dtype=float)
        if arr.ndim != 1:
            raise EnergyValidationError(f"coefficients of degree {k} must be a flat array")
        out[k] = arr
    return out


def energy_from_json(data: dict, which: str = "v") -> EnergyCoeffs:
    """Build :class:`EnergyCoeffs` from the JSON container.

    ``which`` selects the ``"v"`` or ``"w"`` map; a file holding only one of
    them serves either request.
    """
    if not isinstance(data, dict) or "n" not in data:
        raise EnergyValidationError("energy file must be an object with key 'n'")
    try:
        n = int(data["n"])
    except (TypeError, ValueError):
        raise EnergyValidationError("'n' must be an integer") from None
    maps = [key for key in ("v", "w") if key in data]
    if not maps:
        raise EnergyValidationError("energy file needs a 'v' or 'w' coefficient map")
    key = which if which in data else maps[0]
    E = EnergyCoeffs(n, _parse_terms(data[key], n))
    if "degree" in data and int(data["degree"]) < E.degree:
        raise EnergyValidationError("declared degree is smaller than the stored terms")
    return E.validate(definite=key == "v", name=key)


def load_energy(path, which: str = "v") -> EnergyCoeffs:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise EnergyValidationError(f"{path}: invalid JSON ({exc})") from None
    return energy_from_json(data, which)


def energy_to_json(v: EnergyCoeffs | None = None, w: EnergyCoeffs | None = None) -> dict:
    present = [E for E in (v, w) if E is not None]
    if not present:
        raise ValueError("nothing to save")
    n = present[0].n
    if any(E.n != n for E in present):
        raise ValueError("v and w dimensions differ")
    data = {"n": n, "degree": max(E.degree for E in present)}
    if v is not None:
        data["v"] = v.to_dict()
    if w is not None:
        data["w"] = w.to_dict()
    return data


def save_energy(E: EnergyCoeffs, path, w: EnergyCoeffs | None = None) -> None:
    """Write ``E`` (and optionally a matching future energy ``w``) as JSON.

    Python's float repr is round-trip exact, so loading recovers the values bit
    for bit.
    """
    Path(path).write_text(json.dumps(energy_to_json(E, w)))
