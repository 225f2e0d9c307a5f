"""Kronecker-product polynomial algebra.

Conventions used throughout the package:

* ``x^[k]`` is the k-fold Kronecker power ``x ⊗ ... ⊗ x`` as produced by
  :func:`numpy.kron`, so the *last* factor varies fastest.  The multi-index
  ``(i1, ..., ik)`` (zero based) sits at linear index
  ``((i1 * n + i2) * n + ...) * n + ik``.
* ``vec`` stacks columns (Fortran order) and ``unvec`` is its inverse.
* A polynomial map ``x -> sum_k T_k x^[k]`` is stored as a list of dense
  ``n_out x n_in**k`` matrices, the first entry being the linear term.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

DEFAULT_MEM_BUDGET = 2 * 1024**3


class MemoryBudgetError(MemoryError):
    """Raised when a dense tensor would exceed the configured memory budget."""


def mem_budget() -> int:
    """Bytes allowed for a single dense tensor (env ``NLBAL_MEM_BUDGET`` overrides)."""
    env = os.environ.get("NLBAL_MEM_BUDGET")
    if env:
        return int(float(env))
    return DEFAULT_MEM_BUDGET


def check_budget(n_entries: int, what: str = "tensor") -> None:
    nbytes = 8 * int(n_entries)
    if nbytes > mem_budget():
        raise MemoryBudgetError(
            f"{what} needs {nbytes / 1024**2:.1f} MiB, budget is {mem_budget() / 1024**2:.1f} MiB"
        )


def kron_pow(x, k: int) -> np.ndarray:
    """k-fold Kronecker power of a vector."""
    if k < 1:
        raise ValueError("Kronecker power requires k >= 1")
    x = np.asarray(x, dtype=float).ravel()
    check_budget(x.size**k, "Kronecker power")
    out = x
    for _ in range(k - 1):
        out = np.kron(out, x)
    return out


def vec(M) -> np.ndarray:
    return np.asarray(M).reshape(-1, order="F")


def unvec(m, rows: int, cols: int) -> np.ndarray:
    m = np.asarray(m)
    if m.size != rows * cols:
        raise ValueError(f"cannot unvec length {m.size} into {rows}x{cols}")
    return m.reshape((rows, cols), order="F")


def diagonal_index(n: int, k: int, i: int) -> int:
    """Zero-based linear position of the monomial ``x_i**k`` in ``x^[k]``."""
    return i * sum(n**l for l in range(k))


@lru_cache(maxsize=64)
def _canonical_classes(n: int, k: int):
    """Group the n**k multi-indices by their sorted digits.

    Returns ``(order, starts, counts, inverse)``: ``order`` sorts positions by
    class, ``starts`` are the class boundaries within ``order``, ``inverse``
    maps every position to its class id.
    """
    digits = np.indices((n,) * k).reshape(k, -1)
    canon = np.sort(digits, axis=0)
    lin = np.ravel_multi_index(tuple(canon), (n,) * k)
    _, inverse, counts = np.unique(lin, return_inverse=True, return_counts=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    for arr in (order, starts, counts, inverse):
        arr.setflags(write=False)
    return order, starts, counts, inverse


def _infer_degree(length: int, n: int) -> int:
    if n < 1:
        raise ValueError("dimension must be positive")
    if n == 1:
        raise ValueError("degree cannot be inferred for n = 1; pass k explicitly")
    k = round(math.log(length, n))
    if n**k != length:
        raise ValueError(f"length {length} is not a power of {n}")
    return k


def symmetrize_vector(v, n: int, k: int) -> np.ndarray:
    """Average the entries of ``v`` over permutations of each multi-index.

    The polynomial ``v^T x^[k]`` is unchanged; the result has symmetric
    coefficients.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != n**k:
        raise ValueError(f"expected a vector of length {n}**{k} = {n**k}, got shape {v.shape}")
    return symmetrize_map(v[None, :], n, k)[0]


def symmetrize_map(T, n_in: int, k: int | None = None) -> np.ndarray:
    """Row-wise :func:`symmetrize_vector` for an ``n_out x n_in**k`` matrix."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 2:
        raise ValueError("expected a 2-D coefficient matrix")
    if k is None:
        k = 1 if T.shape[1] == n_in else _infer_degree(T.shape[1], n_in)
    if T.shape[1] != n_in**k:
        raise ValueError(f"coefficient matrix has {T.shape[1]} columns, expected {n_in}**{k}")
    if k == 1:
        return T.copy()
    order, starts, counts, inverse = _canonical_classes(n_in, k)
    means = np.add.reduceat(T[:, order], starts, axis=1) / counts
    return means[:, inverse]


def symmetry_defect(T, n_in: int, k: int) -> float:
    """Largest absolute change caused by symmetrizing ``T``."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if k == 1:
        return 0.0
    return float(np.max(np.abs(symmetrize_map(T, n_in, k) - T), initial=0.0))


def is_symmetric(T, n_in: int, k: int, tol: float = 1e-10) -> bool:
    T = np.atleast_2d(np.asarray(T, dtype=float))
    scale = max(1.0, float(np.max(np.abs(T), initial=0.0)))
    return symmetry_defect(T, n_in, k) <= tol * scale


def compositions(total: int, parts: int):
    """All ordered tuples of ``parts`` positive integers summing to ``total``."""
    if parts < 1 or total < parts:
        return
    for cuts in itertools.combinations(range(1, total), parts - 1):
        bounds = (0,) + cuts + (total,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(parts))


def _coeff(coeffs: Sequence[np.ndarray], i: int) -> np.ndarray:
    if i > len(coeffs) or coeffs[i - 1] is None:
        raise KeyError(f"coefficient T_{i} is required but not available")
    return coeffs[i - 1]


def tensor_product_sum(coeffs: Sequence[np.ndarray], m: int, l: int) -> np.ndarray:
    """Dense sum of ``T_{i1} ⊗ ... ⊗ T_{im}`` over compositions of ``l`` into ``m`` parts.

    ``coeffs[i-1]`` holds ``T_i`` with shape ``(n_out, n_in**i)``.  The result
    has shape ``(n_out**m, n_in**l)``.
    """
    if not 1 <= m <= l:
        raise ValueError("need 1 <= m <= l")
    for i in range(1, l - m + 2):
        _coeff(coeffs, i)
    n_out, n_in = coeffs[0].shape
    check_budget(n_out**m * n_in**l, f"dense tensor product sum ({m},{l})")
    out = np.zeros((n_out**m, n_in**l))
    for comp in compositions(l, m):
        term = _coeff(coeffs, comp[0])
        for i in comp[1:]:
            term = np.kron(term, _coeff(coeffs, i))
        out += term
    return out


def tensor_product_sum_adjoint(coeffs: Sequence[np.ndarray], m: int, l: int, v) -> np.ndarray:
    """Matrix-free ``tensor_product_sum(coeffs, m, l).T @ v``.

    Each Kronecker term is applied by contracting one tensor slot at a time,
    so only vectors of length at most ``n_out**a * n_in**b`` are formed.
    """
    if not 1 <= m <= l:
        raise ValueError("need 1 <= m <= l")
    for i in range(1, l - m + 2):
        _coeff(coeffs, i)
    n_out, n_in = coeffs[0].shape
    v = np.asarray(v, dtype=float)
    if v.size != n_out**m:
        raise ValueError(f"vector length {v.size} does not match {n_out}**{m}")
    check_budget(n_in**l, "tensor product adjoint result")
    V = v.reshape((n_out,) * m)
    out = np.zeros(n_in**l)
    for comp in compositions(l, m):
        X = V
        for slot, i in enumerate(comp):
            X = np.moveaxis(np.tensordot(X, _coeff(coeffs, i), axes=([slot], [0])), -1, slot)
        out += X.reshape(-1)
    return out


@dataclass(frozen=True)
class PolyMap:
    """Polynomial map ``z -> sum_k T_k z^[k]`` without constant term.

    ``coeffs[k-1]`` is ``T_k`` of shape ``(n_out, n_in**k)``.
    """

    coeffs: tuple
    n_in: int
    n_out: int
    symmetric: bool

    @classmethod
    def from_list(cls, coeffs, verify: bool = True) -> "PolyMap":
        coeffs = [np.atleast_2d(np.asarray(T, dtype=float)) for T in coeffs]
        if not coeffs:
            raise ValueError("a polynomial map needs at least the linear term")
        n_out, n_in = coeffs[0].shape
        for k, T in enumerate(coeffs, start=1):
            if T.shape != (n_out, n_in**k):
                raise ValueError(f"T_{k} has shape {T.shape}, expected {(n_out, n_in**k)}")
        sym = all(is_symmetric(T, n_in, k) for k, T in enumerate(coeffs, start=1)) if verify else True
        for T in coeffs:
            T.setflags(write=False)
        return cls(tuple(coeffs), n_in, n_out, sym)

    @property
    def degree(self) -> int:
        return len(self.coeffs)


def _as_map(phi) -> PolyMap:
    return phi if isinstance(phi, PolyMap) else PolyMap.from_list(phi)


def eval_poly_map(phi, z) -> np.ndarray:
    """Evaluate ``sum_k T_k z^[k]``."""
    phi = _as_map(phi)
    z = np.asarray(z, dtype=float).ravel()
    if z.size != phi.n_in:
        raise ValueError(f"input has length {z.size}, map expects {phi.n_in}")
    out = phi.coeffs[0] @ z
    zk = z
    for T in phi.coeffs[1:]:
        zk = np.kron(zk, z)
        out = out + T @ zk
    return out


def eval_poly_jacobian(phi, z) -> np.ndarray:
    """Jacobian ``T_1 + 2 T_2 (z ⊗ I) + 3 T_3 (z ⊗ z ⊗ I) + ...``.

    The compact form is only the derivative when every ``T_k`` has symmetric
    coefficients, so non-symmetric maps are rejected.
    """
    phi = _as_map(phi)
    if not phi.symmetric:
        raise ValueError("Jacobian formula requires symmetric coefficients; symmetrize the map first")
    z = np.asarray(z, dtype=float).ravel()
    n = phi.n_in
    if z.size != n:
        raise ValueError(f"input has length {z.size}, map expects {n}")
    J = np.array(phi.coeffs[0], dtype=float)
    zk = np.ones(1)
    for k, T in enumerate(phi.coeffs[1:], start=2):
        zk = np.kron(zk, z)
        J += k * np.einsum("oab,a->ob", T.reshape(phi.n_out, n ** (k - 1), n), zk)
    return J


def eval_poly_scalar(terms, x) -> float:
    """Evaluate ``1/2 sum_k v_k^T x^[k]``; ``terms`` maps degree -> coefficient vector."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    total = 0.0
    for k, v in sorted(dict(terms).items()):
        v = np.asarray(v, dtype=float)
        if v.size != n**k:
            raise ValueError(f"v_{k} has length {v.size}, expected {n}**{k}")
        total += float(v @ kron_pow(x, k))
    return 0.5 * total


def restrict_columns(T, n_in: int, k: int, r: int) -> np.ndarray:
    """Columns of ``T`` whose multi-index only involves the first ``r`` inputs.

    Equivalent to ``T @ Psi^[k]`` with ``Psi = [I_r; 0]``.
    """
    T = np.asarray(T, dtype=float)
    return T.reshape((T.shape[0],) + (n_in,) * k)[(slice(None),) + (slice(0, r),) * k].reshape(
        T.shape[0], r**k
    )


def kron_pow_rows(Z, k: int) -> np.ndarray:
    """Row-wise Kronecker power of a batch of points ``Z`` (shape ``N x n``)."""
    if k < 1:
        raise ValueError("Kronecker power requires k >= 1")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    N, n = Z.shape
    check_budget(N * n**k, "batched Kronecker power")
    out = Z
    for _ in range(k - 1):
        out = (out[:, :, None] * Z[:, None, :]).reshape(N, -1)
    return out


def eval_poly_map_batch(phi, Z) -> np.ndarray:
    """:func:`eval_poly_map` applied to every row of ``Z``."""
    phi = _as_map(phi)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    out = Z @ phi.coeffs[0].T
    Zk = Z
    for T in phi.coeffs[1:]:
        Zk = (Zk[:, :, None] * Z[:, None, :]).reshape(Z.shape[0], -1)
        out += Zk @ T.T
    return out


def eval_poly_scalar_batch(terms, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = np.zeros(X.shape[0])
    for k, v in sorted(dict(terms).items()):
        total += kron_pow_rows(X, k) @ np.asarray(v, dtype=float)
    return 0.5 * total
