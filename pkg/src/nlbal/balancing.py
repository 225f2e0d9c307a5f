"""Polynomial input-normal/output-diagonal balancing.

Computes the coefficients ``T_k`` of ``x = Phi(z) = sum_k T_k z^[k]`` that
bring a past energy into the form ``1/2 |z|^2``, the singular value function
coefficients that describe the future energy on the coordinate axes, and the
input-output scaling ``zbar_i = z_i sqrt(xi_i(z_i))``.

The same recursion serves the full transformation (``r = n``) and the
truncated balance-and-reduce variant (``r < n``); see
:func:`nlbal.reduction.truncated_transformation`.
"""
from __future__ import annotations

import functools
import itertools
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .energy import EnergyCoeffs
from .kronpoly import (
    PolyMap,
    check_budget,
    diagonal_index,
    eval_poly_map_batch,
    eval_poly_scalar_batch,
    symmetrize_map,
    symmetrize_vector,
    tensor_product_sum,
    tensor_product_sum_adjoint,
    unvec,
    vec,
)

logger = logging.getLogger(__name__)

SINGULAR_XI_RTOL = 1e-12
PSD_RTOL = 1e-10
REPEATED_XI_RTOL = 1e-8


class BalancingError(ArithmeticError):
    pass


class ValidityRegionError(ValueError):
    """A singular value function became non-positive: outside the validity region."""


@dataclass
class Transformation:
    """Coefficients of ``x = sum_j T_j z^[j]`` with ``T_j`` of shape ``n x r**j``.

    ``xi`` holds the leading ``r`` H-infinity characteristic values ``xi_i(0)``
    and ``T1_pinv`` the ``r x n`` left inverse of ``T_1``.  For ``r = n`` this
    is the full balancing transformation.
    """

    T: list
    xi: np.ndarray
    T1_pinv: np.ndarray

    @property
    def n(self) -> int:
        return self.T[0].shape[0]

    @property
    def r(self) -> int:
        return self.T[0].shape[1]

    @property
    def degree(self) -> int:
        return len(self.T)

    @property
    def is_full(self) -> bool:
        return self.r == self.n

    @property
    def T1_inv(self) -> np.ndarray:
        if not self.is_full:
            raise AttributeError("truncated transformation has no inverse, use T1_pinv")
        return self.T1_pinv

    def polymap(self, degree: int | None = None) -> PolyMap:
        return PolyMap.from_list(self.T[: degree or self.degree], verify=False)

    def truncate_degree(self, k: int) -> "Transformation":
        return Transformation(self.T[:k], self.xi, self.T1_pinv)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "r": self.r,
            "degree": self.degree,
            "T": {str(j): vec(T).tolist() for j, T in enumerate(self.T, start=1)},
            "Xi": self.xi.tolist(),
            "T1_pinv": vec(self.T1_pinv).tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Transformation":
        n, r = int(data["n"]), int(data.get("r", data["n"]))
        degree = int(data.get("degree", len(data["T"])))
        T = [unvec(np.asarray(data["T"][str(j)], dtype=float), n, r**j) for j in range(1, degree + 1)]
        pinv = unvec(np.asarray(data["T1_pinv"], dtype=float), r, n)
        return cls(T, np.asarray(data["Xi"], dtype=float), pinv)


@dataclass
class SvfCoeffs:
    """Singular value functions ``xi_i(z_i) = xi_i(0) + sum_j c_j[i] z_i**j``."""

    xi: np.ndarray
    c: list

    @property
    def n(self) -> int:
        return self.xi.size

    @property
    def ell(self) -> int:
        return len(self.c)

    def head(self, r: int) -> "SvfCoeffs":
        return SvfCoeffs(self.xi[:r], [cj[:r] for cj in self.c])

    def __call__(self, z) -> np.ndarray:
        return eval_svf(self, z)

    def derivative(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros(np.broadcast(z, self.xi).shape)
        for j, cj in enumerate(self.c, start=1):
            out = out + j * cj * z ** (j - 1)
        return out

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "ell": self.ell,
            "Xi": self.xi.tolist(),
            "c": {str(j): cj.tolist() for j, cj in enumerate(self.c, start=1)},
        }

    @classmethod
    def from_json(cls, data: dict) -> "SvfCoeffs":
        ell = int(data.get("ell", len(data.get("c", {}))))
        return cls(np.asarray(data["Xi"], dtype=float),
                   [np.asarray(data["c"][str(j)], dtype=float) for j in range(1, ell + 1)])


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj.to_json()))


# --- linear part ---------------------------------------------------------------------------


def _fix_signs(U, Vs):
    """Make the largest-magnitude entry of each right singular vector positive."""
    idx = np.argmax(np.abs(Vs), axis=0)  # argmax returns the lowest index on ties
    s = np.sign(Vs[idx, np.arange(Vs.shape[1])])
    s[s == 0] = 1.0
    return U * s, Vs * s


def _psd_factor(W2):
    """``L`` with ``W2 = L L^T``: Cholesky, or an eigen-factor for semidefinite ``W2``."""
    try:
        return np.linalg.cholesky(W2)
    except np.linalg.LinAlgError:
        pass
    w, Q = np.linalg.eigh(W2)
    if w[0] < -PSD_RTOL * max(1.0, w[-1]):
        raise BalancingError("W2 is not positive semidefinite")
    return Q * np.sqrt(np.clip(w, 0.0, None))


def linear_balancing(V2, W2, r: int | None = None):
    """Square-root balancing of the quadratic parts.

    With ``V2 = R R^T``, ``W2 = L L^T`` and ``L^T R^-T = U diag(xi) Vs^T``
    returns ``(T1, T1_pinv, xi)`` where ``T1 = R^-T Vs[:, :r]`` and
    ``T1_pinv = diag(xi_r)^-1 U[:, :r]^T L^T``.
    """
    V2 = np.asarray(V2, dtype=float)
    W2 = np.asarray(W2, dtype=float)
    n = V2.shape[0]
    r = n if r is None else int(r)
    if not 1 <= r <= n:
        raise ValueError(f"reduced order must lie in 1..{n}")
    try:
        R = np.linalg.cholesky(0.5 * (V2 + V2.T))
    except np.linalg.LinAlgError:
        raise BalancingError("Cholesky factorization of V2 failed (not positive definite)") from None
    L = _psd_factor(0.5 * (W2 + W2.T))
    M = sla.solve_triangular(R, L, lower=True).T  # L^T R^-T
    U, xi, VsT = np.linalg.svd(M)
    U, Vs = _fix_signs(U, VsT.T)

    if xi[r - 1] <= SINGULAR_XI_RTOL * xi[0]:
        raise BalancingError(
            f"xi_{r}(0) = {xi[r - 1]:.3e} is numerically zero: unobservable/uncontrollable direction; "
            "use the truncated transformation with a smaller order"
        )
    ratios = xi[: r - 1] / xi[1:r] - 1.0
    if np.any(ratios < REPEATED_XI_RTOL):
        warnings.warn("repeated H-infinity characteristic values; singular vectors are not unique",
                      RuntimeWarning, stacklevel=2)

    T1 = sla.solve_triangular(R.T, Vs[:, :r], lower=False)
    T1_pinv = (U[:, :r].T @ L.T) / xi[:r, None]
    return T1, T1_pinv, xi[:r].copy()


# --- higher-degree recursion ---------------------------------------------------------------


def _bilinear_vec(Tj, Q, Ti) -> np.ndarray:
    """``vec(Tj^T Q Ti)``."""
    check_budget(Tj.shape[1] * Ti.shape[1], "bilinear form")
    return vec(Tj.T @ (Q @ Ti))


def _quadratic_terms(T, Q, degree: int, lo: int) -> np.ndarray:
    """``sum_{i, j >= lo, i + j = degree} vec(T_j^T Q T_i)``."""
    r = T[0].shape[1]
    out = np.zeros(r**degree)
    for i in range(lo, degree - lo + 1):
        j = degree - i
        out += _bilinear_vec(T[j - 1], Q, T[i - 1])
    return out


def _energy_terms(T, coeffs: EnergyCoeffs, degree: int) -> np.ndarray:
    """``sum_{i=3}^{degree} calT_{i,degree}^T v_i`` for the available ``v_i``."""
    r = T[0].shape[1]
    out = np.zeros(r**degree)
    for i in range(3, degree + 1):
        vi = coeffs.coeff(i)
        if vi is not None:
            out += tensor_product_sum_adjoint(T, i, degree, vi)
    return out


def higher_degree_coeffs(T1, v: EnergyCoeffs, k: int) -> list:
    """Run the ``T_k = -1/2 T_1 unvec(M_k)^T`` recursion up to degree ``k``.

    ``T1`` may be the full ``n x n`` or a truncated ``n x r`` linear part.
    ``unvec(M_k)`` is ``r**k x r`` so that ``T_k^T V_2 T_1 = -1/2 unvec(M_k)``
    reproduces ``vec(T_k^T V_2 T_1)`` as in the coefficient matching.
    """
    V2 = v.quadratic
    r = T1.shape[1]
    T = [np.asarray(T1, dtype=float)]
    for deg in range(2, k + 1):
        M = _quadratic_terms(T, V2, deg + 1, lo=2) + _energy_terms(T, v, deg + 1)
        Tk = -0.5 * T[0] @ unvec(M, r**deg, r).T
        T.append(symmetrize_map(Tk, r, deg))
    return T


@functools.lru_cache(maxsize=1)
def verify_unvec_orientation(seed: int = 0, tol: float = 1e-10) -> bool:
    """Self-test: on a random n = 2 problem the composed past energy must equal
    ``1/2 |z|^2`` through degree ``k + 1``.

    The check builds the composed energy coefficients from dense tensor-product
    sums, independent of the recursion's ``M_k`` bookkeeping.
    """
    rng = np.random.default_rng(seed)
    n, k = 2, 3
    Q = rng.standard_normal((n, n))
    V2 = Q @ Q.T + n * np.eye(n)
    Q = rng.standard_normal((n, n))
    W2 = Q @ Q.T + n * np.eye(n)
    v = EnergyCoeffs(n, {2: vec(V2), 3: symmetrize_vector(rng.standard_normal(n**3), n, 3),
                         4: symmetrize_vector(rng.standard_normal(n**4), n, 4)})
    T1, _, _ = linear_balancing(V2, W2)
    T = higher_degree_coeffs(T1, v, k)
    for deg in range(3, k + 2):
        coeff = composed_energy_coeff(v, T, deg)
        if np.max(np.abs(coeff)) > tol:
            raise AssertionError(
                f"unvec orientation self-test failed: degree-{deg} residual {np.max(np.abs(coeff)):.2e}")
    return True


def composed_energy_coeff(E: EnergyCoeffs, T, degree: int) -> np.ndarray:
    """Symmetric coefficient of ``z^[degree]`` in ``2 E(Phi(z))`` minus the target ``|z|^2``.

    Uses dense tensor-product sums; intended for small verification problems.
    """
    n, r = T[0].shape
    # coefficients beyond the transformation degree are zero
    T = list(T) + [np.zeros((n, r**j)) for j in range(len(T) + 1, degree)]
    total = np.zeros(r**degree)
    for i in range(2, degree + 1):
        vi = E.coeff(i)
        if vi is not None:
            total += tensor_product_sum(T, i, degree).T @ vi
    if degree == 2:
        total -= vec(np.eye(r))
    return symmetrize_vector(total, r, degree)


def compute_transformation(v: EnergyCoeffs, w: EnergyCoeffs, k: int) -> Transformation:
    """Full input-normal/output-diagonal transformation of degree ``k``."""
    if k < 1:
        raise ValueError("transformation degree must be >= 1")
    if v.n != w.n:
        raise ValueError("past and future energies have different dimensions")
    verify_unvec_orientation()
    T1, T1_inv, xi = linear_balancing(v.quadratic, w.quadratic)
    T = higher_degree_coeffs(T1, v, k)
    return Transformation(T, xi, T1_inv)


# --- singular value functions --------------------------------------------------------------


def index_set(n: int, m: int) -> np.ndarray:
    """Zero-based positions of ``z_i**(m+2)`` in ``z^[m+2]``, i = 1..n."""
    return np.array([diagonal_index(n, m + 2, i) for i in range(n)], dtype=int)


def compute_svf(w: EnergyCoeffs, trafo: Transformation, ell: int) -> SvfCoeffs:
    """Polynomial singular value function coefficients ``c_1..c_ell``.

    Needs ``trafo.degree >= ell + 1``.  Works on truncated transformations as
    well, in which case the first ``r`` functions are approximated.
    """
    if ell < 0:
        raise ValueError("ell must be non-negative")
    if trafo.degree < ell + 1:
        raise ValueError(f"singular value functions of degree {ell} need a transformation of degree {ell + 1}")
    xi = trafo.xi
    if np.any(xi <= 0):
        raise BalancingError("singular Xi: cannot divide by zero characteristic values")
    T = trafo.T[: ell + 1]
    W2 = w.quadratic
    r = trafo.r
    c: list[np.ndarray] = []
    for m in range(1, ell + 1):
        Cm = _quadratic_terms(T, W2, m + 2, lo=1) + _energy_terms(T, w, m + 2)
        cross = sum((c[i - 1] * c[m - i - 1] for i in range(1, m)), np.zeros(r))
        c.append(0.5 * (Cm[index_set(r, m)] - cross) / xi)
    return SvfCoeffs(xi.copy(), c)


def eval_svf(S: SvfCoeffs, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.broadcast_to(S.xi, np.broadcast(z, S.xi).shape).copy()
    for j, cj in enumerate(S.c, start=1):
        out = out + cj * z**j
    return out


# --- input-output scaling ------------------------------------------------------------------


def io_scale_forward(S: SvfCoeffs, z) -> np.ndarray:
    """``zbar_i = z_i sqrt(xi_i(z_i))``."""
    z = np.asarray(z, dtype=float)
    xi = eval_svf(S, z)
    if np.any(xi <= 0):
        raise ValidityRegionError("singular value function non-positive: outside validity region")
    return z * np.sqrt(xi)


def _invert_component(xi0, coeffs, zbar, tol, maxiter):
    def xi_of(z):
        return xi0 + sum(cj * z ** (j + 1) for j, cj in enumerate(coeffs))

    def dxi_of(z):
        return sum((j + 1) * cj * z**j for j, cj in enumerate(coeffs))

    if xi0 <= 0:
        raise ValidityRegionError("xi(0) must be positive")
    z = zbar / np.sqrt(xi0)
    for _ in range(maxiter):
        s = xi_of(z)
        if s <= 0:
            raise ValidityRegionError(f"xi({z:.3g}) <= 0: outside validity region")
        f = z * np.sqrt(s) - zbar
        if abs(f) <= tol * max(1.0, abs(zbar)):
            return z
        df = np.sqrt(s) + z * dxi_of(z) / (2 * np.sqrt(s))
        if df <= 0:
            raise ValidityRegionError("scaling map is not monotone here: outside validity region")
        step = f / df
        # backtrack while the step leaves the region or does not reduce |f|
        for _ in range(40):
            z_try = z - step
            s_try = xi_of(z_try)
            if s_try > 0 and abs(z_try * np.sqrt(s_try) - zbar) < abs(f):
                break
            step *= 0.5
        else:
            raise ArithmeticError("scaling inverse: line search failed")
        z = z_try
    s = xi_of(z)
    if s > 0 and abs(z * np.sqrt(s) - zbar) <= tol * max(1.0, abs(zbar)) * 10:
        return z
    raise ArithmeticError("scaling inverse: Newton iteration did not converge")


def io_scale_inverse(S: SvfCoeffs, zbar, *, tol: float = 1e-12, maxiter: int = 50) -> np.ndarray:
    """Solve ``z_i sqrt(xi_i(z_i)) = zbar_i`` componentwise (safeguarded Newton)."""
    zbar = np.atleast_1d(np.asarray(zbar, dtype=float))
    if zbar.size != S.n:
        raise ValueError(f"expected {S.n} components, got {zbar.size}")
    return np.array([
        _invert_component(S.xi[i], [cj[i] for cj in S.c], zbar[i], tol, maxiter) for i in range(S.n)
    ])


def _sample_component(S: SvfCoeffs, i: int, a: float, samples: int, coordinate: str):
    if a <= 0 or samples < 2:
        raise ValueError("need a > 0 and at least two samples")
    grid = np.linspace(-a, a, samples)
    single = SvfCoeffs(S.xi[i:i + 1], [cj[i:i + 1] for cj in S.c])
    if coordinate == "z":
        z = grid
    elif coordinate == "zbar":
        z = np.array([io_scale_inverse(single, [g])[0] for g in grid])
    else:
        raise ValueError("coordinate must be 'z' or 'zbar'")
    vals = eval_svf(single, z[:, None])[:, 0]
    if np.any(vals <= 0):
        raise ValidityRegionError(f"singular value function {i + 1} non-positive on the sampled range")
    return grid, vals


def sample_svf(S: SvfCoeffs, a: float, samples: int, coordinate: str = "z"):
    """Values of every singular value function on a uniform grid, shape ``samples x n``."""
    grid = np.linspace(-a, a, samples)
    vals = np.column_stack([_sample_component(S, i, a, samples, coordinate)[1] for i in range(S.n)])
    return grid, vals


def hankel_norm_estimate(S: SvfCoeffs, a: float, samples: int, coordinate: str = "zbar"):
    """Sampled ``sup sigma_1(zbar_1)`` over ``[-a, a]``; returns ``(value, argmax)``.

    ``coordinate="zbar"`` samples in the scaled coordinate (the input-output
    balanced reading), ``"z"`` samples ``xi_1`` directly.
    """
    grid, vals = _sample_component(S, 0, a, samples, coordinate)
    i = int(np.argmax(vals))
    return float(vals[i]), float(grid[i])


# --- diagnostics ---------------------------------------------------------------------------


def transformed_energy_error(E: EnergyCoeffs, trafo: Transformation, target: str = "input_normal",
                             svf: SvfCoeffs | None = None, a: float = 0.1, grid: int = 21) -> float:
    """Max over the grid on ``[-a, a]^r`` of the deviation of ``E(Phi(z))`` from its balanced form."""
    if grid < 2:
        raise ValueError("grid needs at least two points per axis")
    r = trafo.r
    check_budget(grid**r * r, "tensor grid")
    axis = np.linspace(-a, a, grid)
    Z = np.array(list(itertools.product(axis, repeat=r)))
    X = eval_poly_map_batch(trafo.polymap(), Z)
    energy = eval_poly_scalar_batch(E.v, X)
    if target == "input_normal":
        desired = 0.5 * np.sum(Z**2, axis=1)
    elif target == "output_diagonal":
        if svf is None:
            raise ValueError("output_diagonal target needs singular value functions")
        desired = 0.5 * np.sum(Z**2 * eval_svf(svf, Z) ** 2, axis=1)
    else:
        raise ValueError("target must be 'input_normal' or 'output_diagonal'")
    return float(np.max(np.abs(energy - desired)))


def energy_residual_along(E: EnergyCoeffs, trafo: Transformation, u, eps, svf: SvfCoeffs | None = None):
    """``|E(Phi(eps u)) - target(eps u)|`` for a list of step sizes."""
    u = np.asarray(u, dtype=float)
    Z = np.outer(np.atleast_1d(eps), u)
    X = eval_poly_map_batch(trafo.polymap(), Z)
    energy = eval_poly_scalar_batch(E.v, X)
    if svf is None:
        desired = 0.5 * np.sum(Z**2, axis=1)
    else:
        desired = 0.5 * np.sum(Z**2 * eval_svf(svf, Z) ** 2, axis=1)
    return np.abs(energy - desired)


__all__ = [
    "BalancingError", "ValidityRegionError", "Transformation", "SvfCoeffs", "linear_balancing",
    "higher_degree_coeffs", "compute_transformation", "compute_svf", "eval_svf", "index_set",
    "io_scale_forward", "io_scale_inverse", "hankel_norm_estimate", "sample_svf",
    "transformed_energy_error", "energy_residual_along", "composed_energy_coeff",
    "verify_unvec_orientation",
]
