"""Time-variation adjustment of BEKK returns.

The projection matrix

    P_t = c * I + sum_{j=1..M} a b^{j-1} R_{t-j} R_{t-j}',
    c = (1 - a - b + a b^M) / (1 - b),

reconstructs the recent-lag part of the conditional covariance; multiplying
each return by ``P_t^{-1/2}`` makes the panel behave asymptotically i.i.d.
``P_t^{-1/2}`` is held in factored low-rank form (rank M, not p), so one step
costs O(p M^2 + M^3) and applying it costs O(p M).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .bekk import ReturnsPanel
from .linalg import LowRankInvSqrt, apply_inv_sqrt, lowrank_inv_sqrt

__all__ = ["TvAdjustConfig", "TvAdjPanel", "default_mp", "projection_inv_sqrt", "tv_adjust"]


@dataclass(frozen=True)
class TvAdjustConfig:
    """Number of lags in the projection matrix plus the volatility coefficients."""

    m_p: int
    a_hat: float
    b_hat: float

    def __post_init__(self):
        if self.m_p < 1:
            raise ValueError(f"need at least one lag, got m_p={self.m_p}")
        if self.a_hat < 0 or self.b_hat < 0:
            raise ValueError("coefficients must be nonnegative")
        if self.a_hat + self.b_hat >= 1.0:
            raise ValueError(f"need a_hat + b_hat < 1, got {self.a_hat + self.b_hat}")


@dataclass(frozen=True)
class TvAdjPanel:
    """Adjusted returns (the first ``dropped_prefix`` columns served as lags only)
    and their sample covariance."""

    adjusted: NDArray[np.float64]
    covariance: NDArray[np.float64]
    dropped_prefix: int


def default_mp(p: int) -> int:
    """Default lag count: ``ceil(2 p^0.4)`` clamped to ``[2, floor(sqrt(p)) - 1]``.

    Grows without bound but slower than sqrt(p), which is the regime the
    adjustment needs; the value used in any given study is a tuning choice,
    so it is exposed as a flag everywhere downstream.
    """
    if p < 4:
        raise ValueError(f"need p >= 4, got {p}")
    hi = int(np.floor(np.sqrt(p))) - 1
    return max(2, min(int(np.ceil(2.0 * p**0.4)), hi))


def _projection_scale(cfg: TvAdjustConfig) -> float:
    a, b, m = cfg.a_hat, cfg.b_hat, cfg.m_p
    return (1.0 - a - b + a * b**m) / (1.0 - b)


def _lag_factor(returns: NDArray[np.float64], t: int, cfg: TvAdjustConfig) -> NDArray[np.float64]:
    if cfg.a_hat == 0.0:
        return np.zeros((returns.shape[0], 0))
    j = np.arange(cfg.m_p)
    coeff = np.sqrt(cfg.a_hat * cfg.b_hat**j)
    lags = returns[:, t - 1 - j]
    return lags * coeff


def projection_inv_sqrt(panel: ReturnsPanel, t: int, cfg: TvAdjustConfig) -> LowRankInvSqrt:
    """Factored ``P_t^{-1/2}`` for the return at column ``t`` (0-based).

    Requires ``t >= cfg.m_p`` so that all lagged returns exist.  The smallest
    eigenvalue of the assembled P_t is at least ``1 - a_hat - b_hat``by
    construction, which keeps the inverse square root bounded.
    """
    if t < cfg.m_p:
        raise ValueError(f"column {t} has fewer than m_p={cfg.m_p} lags")
    if t >= panel.n:
        raise ValueError(f"column {t} out of range for panel with n={panel.n}")
    return lowrank_inv_sqrt(_projection_scale(cfg), _lag_factor(panel.returns, t, cfg))


def tv_adjust(panel: ReturnsPanel, cfg: TvAdjustConfig) -> TvAdjPanel:
    """Adjust every column with enough lags and average the outer products.

    The first ``m_p`` observations serve as lags only and are dropped from the
    covariance average, which therefore runs over ``n - m_p`` columns.
    """
    if panel.n <= cfg.m_p + 10:
        raise ValueError(f"panel too short: n={panel.n} with m_p={cfg.m_p}")
    if cfg.m_p >= panel.p:
        raise ValueError(f"need m_p < p, got m_p={cfg.m_p}, p={panel.p}")
    n_out = panel.n - cfg.m_p
    adjusted = np.empty((panel.p, n_out))
    for k in range(n_out):
        t = cfg.m_p + k
        f = projection_inv_sqrt(panel, t, cfg)
        adjusted[:, k] = apply_inv_sqrt(f, panel.returns[:, t])
    cov = (adjusted @ adjusted.T) / n_out
    cov = 0.5 * (cov + cov.T)
    return TvAdjPanel(adjusted=adjusted, covariance=cov, dropped_prefix=cfg.m_p)
