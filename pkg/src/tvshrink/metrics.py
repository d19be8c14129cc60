"""Distances and diagnostics for spectra and covariance estimates."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .linalg import check_symmetric

__all__ = [
    "levy_distance",
    "eig_l2_distance",
    "frobenius_error",
    "second_moment",
]


def _as_step_cdf(dist) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Jump locations (ascending) and cumulative weights of a step CDF.

    Accepts a 1-D array of sample points (equal weights) or anything exposing
    ``locations`` / ``weights`` (a discrete spectrum).
    """
    if hasattr(dist, "locations") and hasattr(dist, "weights"):
        xs = np.asarray(dist.locations, dtype=np.float64)
        ws = np.asarray(dist.weights, dtype=np.float64)
    else:
        xs = np.sort(np.asarray(dist, dtype=np.float64))
        if xs.size == 0:
            raise ValueError("empty sample")
        ws = np.full(xs.size, 1.0 / xs.size)
    order = np.argsort(xs, kind="stable")
    xs, ws = xs[order], ws[order]
    # merge duplicate jump points so the step evaluation is well defined
    uniq, inv = np.unique(xs, return_inverse=True)
    cum = np.zeros(uniq.size)
    np.add.at(cum, inv, ws)
    return uniq, np.cumsum(cum)


def _step_value(x: NDArray, xs: NDArray, cum: NDArray) -> NDArray:
    """Right-continuous CDF evaluation ``F(x)``."""
    idx = np.searchsorted(xs, x, side="right")
    out = np.zeros(np.shape(x))
    nz = idx > 0
    out[nz] = cum[idx[nz] - 1]
    return out


def levy_distance(f, g, tol: float = 1e-6) -> float:
    """Levy distance between two distributions given as step CDFs.

    Smallest ``eps`` (to ``tol``, by bisection) such that
    ``F(x - eps) - eps <= G(x) <= F(x + eps) + eps`` for all x.  The
    feasibility of a candidate ``eps`` is decided exactly on the jump points
    of both step functions rather than on a grid.
    """
    fx, fc = _as_step_cdf(f)
    gx, gc = _as_step_cdf(g)

    def feasible(eps: float) -> bool:
        # sup_x G(x) - F(x + eps) over breakpoints of the right-continuous step
        pts = np.concatenate([gx, fx - eps])
        d1 = np.max(_step_value(pts, gx, gc) - _step_value(pts + eps, fx, fc), initial=0.0)
        if d1 > eps + 1e-15:
            return False
        # sup_x F(x - eps) - G(x)
        pts = np.concatenate([gx, fx + eps])
        d2 = np.max(_step_value(pts - eps, fx, fc) - _step_value(pts, gx, gc), initial=0.0)
        return d2 <= eps + 1e-15

    if feasible(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def eig_l2_distance(a: NDArray[np.float64], b: NDArray[np.float64]) -> float:
    """Euclidean distance ``sqrt(sum_i (a_i - b_i)^2)`` over rank-matched sorted eigenvalues."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def frobenius_error(est: NDArray[np.float64], truth: NDArray[np.float64]) -> float:
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"dimension mismatch: {est.shape} vs {truth.shape}")
    return float(np.linalg.norm(est - truth, "fro"))


def second_moment(s: NDArray[np.float64]) -> float:
    """``tr(S^2) / p``, the second moment of the spectral distribution of S."""
    s = check_symmetric(s)
    return float(np.sum(s * s) / s.shape[0])
