"""Covariance and spectrum estimation under scalar-BEKK dynamic volatility.

Submodules
----------
linalg      symmetric eigen/Cholesky primitives and the low-rank inverse
            square root used by the time-variation adjustment
bekk        scalar-BEKK simulation, reducibility index, moment oracles
garch       constrained univariate GARCH(1,1) QMLE, pooled across coordinates
tvadjust    projection matrices, adjusted returns, adjusted sample covariance
mplaw       Marchenko-Pastur forward map, Stieltjes transforms, spectrum
            inversion from sample eigenvalues
shrinkage   eigenvalue truncation, oracle nonlinear shrinkage, assembled
            covariance and spectrum estimators
metrics     Levy distance, eigenvalue/Frobenius distances, second moment
experiments Monte Carlo scenario harness with CSV output
panelio     binary/CSV serialization of simulated return panels
"""

from . import bekk, experiments, garch, linalg, metrics, mplaw, panelio, shrinkage, tvadjust

__all__ = [
    "bekk",
    "experiments",
    "garch",
    "linalg",
    "metrics",
    "mplaw",
    "panelio",
    "shrinkage",
    "tvadjust",
]

__version__ = "0.1.0"
