"""Scalar-BEKK simulation and closed-form moment diagnostics.

The conditional covariance follows
``Sigma_{t+1} = (1 - a - b) * Sigma_bar + a * R_t R_t' + b * Sigma_t`` with
``R_t = L_t z_t``, ``z_t ~ N(0, I)`` i.i.d. and ``L_t`` the Cholesky factor of
``Sigma_t``.  A paired i.i.d. panel ``R0_t = L_bar z_t`` can be emitted from
the same innovations, which is what makes the eigenvalue-distance comparisons
between dynamic and i.i.d. sample covariance matrices meaningful.

Randomness: one ``numpy.random.SeedSequence`` per simulation, PCG64 bit
generator, normals drawn with numpy's ziggurat sampler.  Two runs with the
same ``SimConfig`` produce bit-identical panels; replications get independent
streams by spawning child seeds (see :mod:`tvshrink.experiments`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .linalg import NotPositiveDefiniteError, check_symmetric, cholesky

__all__ = [
    "BekkParams",
    "SimConfig",
    "ReturnsPanel",
    "simulate",
    "eta",
    "expected_tr_sigma_sq_identity",
    "gaussian_quadratic_second_moment",
]


@dataclass(frozen=True)
class BekkParams:
    """Innovation coefficient ``a``, persistence partner ``b``, and the
    unconditional covariance matrix."""

    a: float
    b: float
    sigma_bar: NDArray[np.float64]

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0 and 0.0 <= self.b <= 1.0):
            raise ValueError(f"need 0 <= a, b <= 1, got a={self.a}, b={self.b}")
        if self.a + self.b >= 1.0:
            raise ValueError(f"need a + b < 1 (strict), got {self.a + self.b}")
        sig = check_symmetric(self.sigma_bar)
        if np.linalg.eigvalsh(sig)[0] < -1e-10 * max(1.0, float(np.abs(sig).max())):
            raise ValueError("sigma_bar must be positive semidefinite")
        object.__setattr__(self, "sigma_bar", sig)

    @property
    def dim(self) -> int:
        return self.sigma_bar.shape[0]


@dataclass(frozen=True)
class SimConfig:
    seed: int
    n: int
    burn_in: int = 1000
    emit_paired_iid: bool = False

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass(frozen=True)
class ReturnsPanel:
    """A p x n panel of return columns, optionally with the paired i.i.d. panel
    built from the same innovations and the conditional covariance at the first
    retained step (for innovation-replay checks)."""

    returns: NDArray[np.float64]
    seed: int
    paired_iid: NDArray[np.float64] | None = None
    sigma_start: NDArray[np.float64] | None = field(default=None, repr=False)

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=np.float64)
        if r.ndim != 2:
            raise ValueError("returns must be a p x n matrix")
        if not np.all(np.isfinite(r)):
            raise ValueError("returns contain non-finite entries")
        if self.paired_iid is not None:
            q = np.asarray(self.paired_iid, dtype=np.float64)
            if q.shape != r.shape or not np.all(np.isfinite(q)):
                raise ValueError("paired_iid must match returns in shape and be finite")

    @property
    def p(self) -> int:
        return self.returns.shape[0]

    @property
    def n(self) -> int:
        return self.returns.shape[1]


def simulate(params: BekkParams, cfg: SimConfig) -> ReturnsPanel:
    """Simulate the scalar-BEKK recursion starting from ``Sigma_1 = Sigma_bar``.

    The first ``cfg.burn_in`` steps are discarded.  With
    ``cfg.emit_paired_iid`` the panel also carries ``R0_t = L_bar z_t`` using
    the same post-burn-in ``z_t`` and the same factor type (Cholesky) as the
    dynamic returns, so the pairing is faithful column by column.
    """
    p = params.dim
    a, b = params.a, params.b
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))

    try:
        l_bar = cholesky(params.sigma_bar)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(exc.pivot) from exc

    total = cfg.burn_in + cfg.n
    returns = np.empty((p, cfg.n))
    paired = np.empty((p, cfg.n)) if cfg.emit_paired_iid else None
    sigma_start = None

    sigma = params.sigma_bar.copy()
    base = (1.0 - a - b) * params.sigma_bar
    for t in range(total):
        if t == cfg.burn_in:
            sigma_start = sigma.copy()
        if a == 0.0 and b == 0.0:
            l_t = l_bar
        else:
            try:
                l_t = cholesky(sigma)
            except NotPositiveDefiniteError as exc:
                raise RuntimeError(
                    f"conditional covariance lost positive definiteness at step {t} "
                    f"(pivot {exc.pivot})"
                ) from exc
        z = rng.standard_normal(p)
        r = l_t @ z
        if t >= cfg.burn_in:
            k = t - cfg.burn_in
            returns[:, k] = r
            if paired is not None:
                paired[:, k] = l_bar @ z
        sigma = base + a * np.outer(r, r) + b * sigma

    return ReturnsPanel(returns=returns, seed=cfg.seed, paired_iid=paired, sigma_start=sigma_start)


def eta(a: float, b: float, p: int) -> float:
    """Reducibility index ``(a / (1-a-b)) * min(sqrt(p*(1-a-b)), 1)``.

    Zero marks the regime where the sample covariance spectrum behaves as in
    the i.i.d. case; bounded away from zero marks heavier tails.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if a + b >= 1.0:
        raise ValueError(f"need a + b < 1, got {a + b}")
    if a < 0 or b < 0:
        raise ValueError("a and b must be nonnegative")
    return (a / (1.0 - a - b)) * min(np.sqrt(p * (1.0 - a - b)), 1.0)


def expected_tr_sigma_sq_identity(a: float, b: float, p: int) -> float:
    """Stationary ``E tr(Sigma_t^2)`` for the standardized process (Sigma_bar = I).

    Closed form ``C_p * C_p2 * ((1 - (a+b)^2)/a^2 * p + p^2)`` with
    ``C_p = (1 - 2 a^4 / ((1 - a^2 - (a+b)^2) (1 - (a+b)^2)))^{-1}`` and
    ``C_p2 = a^2 / (1 - a^2 - (a+b)^2)``, valid when both constants are
    positive.  Evaluated in the algebraically equivalent form
    ``C_p * ((1-(a+b)^2) p + a^2 p^2) / (1 - a^2 - (a+b)^2)`` which is finite
    at a = 0 (where the exact value is p).
    """
    if a < 0 or b < 0 or a + b >= 1.0:
        raise ValueError(f"need 0 <= a, b with a + b < 1, got a={a}, b={b}")
    s = a + b
    den2 = 1.0 - a * a - s * s
    if den2 <= 0.0:
        raise ValueError(f"C_p2 denominator 1 - a^2 - (a+b)^2 = {den2} is not positive")
    cp_inv = 1.0 - 2.0 * a**4 / (den2 * (1.0 - s * s))
    if cp_inv <= 0.0:
        raise ValueError(f"C_p reciprocal {cp_inv} is not positive")
    return ((1.0 - s * s) * p + a * a * p * p) / (den2 * cp_inv)


def gaussian_quadratic_second_moment(a: NDArray[np.float64]) -> float:
    """``E((z' A z)^2) = tr(A)^2 + 2 tr(A^2)`` for z ~ N(0, I) and fixed PSD A."""
    a = check_symmetric(a)
    tr = float(np.trace(a))
    tr2 = float(np.sum(a * a))
    return tr * tr + 2.0 * tr2
