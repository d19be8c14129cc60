"""Dense symmetric linear algebra primitives.

Eigendecomposition, Cholesky factorization, matrix square roots, and the
low-rank inverse square root ``(c*I + B @ B.T)**(-1/2)`` obtained through the
M x M Gram matrix ``B.T @ B`` instead of a p x p eigendecomposition, which
keeps the per-call cost at O(p*M**2 + M**3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import lapack

__all__ = [
    "SpectralDecomp",
    "LowRankInvSqrt",
    "NotPositiveDefiniteError",
    "check_symmetric",
    "eig_sym",
    "cholesky",
    "sqrt_sym",
    "lowrank_inv_sqrt",
    "apply_inv_sqrt",
]


class NotPositiveDefiniteError(ValueError):
    """Cholesky pivot failure; carries the 1-based index of the failing pivot."""

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot} failed)")


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigendecomposition of a symmetric matrix, eigenvalues sorted descending."""

    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.float64]

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> NDArray[np.float64]:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


@dataclass(frozen=True)
class LowRankInvSqrt:
    """Factored form of ``(c*I + B @ B.T)**(-1/2)``.

    The implied matrix is ``base_scale*I + U @ diag(coeffs) @ U.T`` with
    ``base_scale = c**(-1/2)``, ``U`` column-orthonormal (p x M) and
    ``coeffs[j] = (lam_j + c)**(-1/2) - c**(-1/2) <= 0`` where ``lam_j`` are
    the nonzero eigenvalues of ``B @ B.T``.
    """

    dim: int
    base_scale: float
    basis: NDArray[np.float64]
    coeffs: NDArray[np.float64]

    @property
    def rank(self) -> int:
        return self.coeffs.shape[0]

    def dense(self) -> NDArray[np.float64]:
        out = self.base_scale * np.eye(self.dim)
        if self.rank:
            out += (self.basis * self.coeffs) @ self.basis.T
        return out


def check_symmetric(a: NDArray[np.float64], rtol: float = 1e-12) -> NDArray[np.float64]:
    """Validate symmetry and finiteness; returns the exactly symmetrized matrix."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    err = np.abs(a - a.T)
    tol = rtol * (1.0 + np.abs(a))
    if np.any(err > tol):
        i, j = np.unravel_index(np.argmax(err - tol), a.shape)
        raise ValueError(f"matrix is not symmetric at ({i},{j}): {a[i, j]} vs {a[j, i]}")
    return 0.5 * (a + a.T)


def eig_sym(a: NDArray[np.float64]) -> SpectralDecomp:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Backed by LAPACK's symmetric solver (Householder tridiagonalization plus
    implicitly shifted QL/QR), which is the standard O(p^3) route.
    """
    a = check_symmetric(a)
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise RuntimeError(f"symmetric eigensolver failed to converge for p={a.shape[0]}: {exc}") from exc
    order = np.argsort(vals)[::-1]
    return SpectralDecomp(np.ascontiguousarray(vals[order]), np.ascontiguousarray(vecs[:, order]))


def cholesky(a: NDArray[np.float64]) -> NDArray[np.float64]:
    """Lower-triangular factor L with ``L @ L.T = a``.

    Raises :class:`NotPositiveDefiniteError` carrying the failing pivot index
    when ``a`` is not positive definite.
    """
    a = check_symmetric(a)
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(int(info))
    if info < 0:  # pragma: no cover - argument error
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return c


def sqrt_sym(a: NDArray[np.float64]) -> NDArray[np.float64]:
    """Symmetric PSD square root B with ``B @ B = a``.

    Eigenvalues in ``(-1e-6*||a||, 0)`` are clamped to zero (floating-point
    PSD drift); anything materially negative is an error.
    """
    dec = eig_sym(a)
    vals = dec.eigenvalues
    scale = float(np.max(np.abs(vals), initial=0.0))
    if np.any(vals < -1e-6 * scale):
        raise ValueError(
            f"matrix has a materially negative eigenvalue {vals.min():.3e} (scale {scale:.3e})"
        )
    vals = np.clip(vals, 0.0, None)
    v = dec.eigenvectors
    return (v * np.sqrt(vals)) @ v.T


def lowrank_inv_sqrt(c: float, b: NDArray[np.float64]) -> LowRankInvSqrt:
    """Inverse square root of ``c*I + b @ b.T`` in factored low-rank form.

    Works on the M x M Gram matrix ``b.T @ b``: eigendecompose it, map the
    nonzero eigenvalues through ``lam -> (lam + c)**(-1/2) - c**(-1/2)`` and
    lift the eigenvectors back to p-space. Directions with
    ``lam < 1e-12 * max(lam)`` are dropped (they contribute nothing).
    """
    if c <= 0:
        raise ValueError(f"base constant must be positive, got {c}")
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    p, m = b.shape
    if m >= p:
        raise ValueError(f"low-rank factor must have fewer columns than rows, got {b.shape}")
    base = c ** -0.5
    gram = b.T @ b
    if m == 0 or not np.any(gram):
        return LowRankInvSqrt(p, base, np.zeros((p, 0)), np.zeros(0))
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    keep = vals > 1e-12 * vals[-1]
    vals, vecs = vals[keep], vecs[:, keep]
    u = b @ (vecs / np.sqrt(vals))
    coeffs = (vals + c) ** -0.5 - base
    return LowRankInvSqrt(p, base, u, coeffs)


def apply_inv_sqrt(f: LowRankInvSqrt, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Apply the implied ``(c*I + B @ B.T)**(-1/2)`` to a vector (or columns) in O(p*M)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != f.dim:
        raise ValueError(f"dimension mismatch: operator is {f.dim}, vector is {x.shape[0]}")
    out = f.base_scale * x
    if f.rank:
        proj = f.basis.T @ x
        if proj.ndim == 1:
            out += f.basis @ (f.coeffs * proj)
        else:
            out += f.basis @ (f.coeffs[:, None] * proj)
    return out
