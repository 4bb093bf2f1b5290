"""Multivariate t distribution primitives.

Everything here works from a Cholesky factor of the scatter matrix, so the
inverse scatter is never formed explicitly. Functions accept a single point
(shape ``(r,)``) or a batch (shape ``(n, r)``) and return a scalar or an
array of length ``n`` accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .errors import InvalidArgumentError, NumericError

SYMMETRY_ATOL = 1e-12


def cholesky(psi: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``psi``; raises :class:`NumericError` if not PD."""
    try:
        chol = np.linalg.cholesky(psi)
    except np.linalg.LinAlgError as exc:
        raise NumericError("scatter matrix is not positive definite") from exc
    if not np.all(np.isfinite(chol)):
        raise NumericError("scatter matrix is not positive definite")
    return chol


@dataclass(frozen=True, eq=False)
class ClusterParams:
    """Location ``mu``, scatter ``psi`` and degrees of freedom ``nu`` of one cluster."""

    mu: np.ndarray
    psi: np.ndarray
    nu: float
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        r = mu.shape[0]
        if psi.shape != (r, r):
            raise InvalidArgumentError(
                f"psi has shape {psi.shape}, expected {(r, r)} to match mu"
            )
        if not np.allclose(psi, psi.T, rtol=0.0, atol=SYMMETRY_ATOL):
            raise InvalidArgumentError("psi is not symmetric")
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise InvalidArgumentError(f"nu must be positive, got {self.nu}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "chol", cholesky(psi))

    @property
    def r(self) -> int:
        return self.mu.shape[0]

    @property
    def logdet_psi(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def _as_batch(x, r: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x.reshape(1, -1) if single else x
    if batch.ndim != 2 or batch.shape[1] != r:
        raise InvalidArgumentError(
            f"points of dimension {batch.shape[-1]} do not match parameters of dimension {r}"
        )
    return batch, single


def squared_mahalanobis(x, params: ClusterParams):
    """Squared Mahalanobis distance ``(x - mu)^T psi^{-1} (x - mu)``."""
    batch, single = _as_batch(x, params.r)
    z = solve_triangular(params.chol, (batch - params.mu).T, lower=True)
    delta = np.einsum("ij,ij->j", z, z)
    return float(delta[0]) if single else delta


def log_normalizer(nu: float, r: int) -> float:
    """``log Gamma((nu+r)/2) - log Gamma(nu/2) - (r/2) log(pi nu)``."""
    return float(gammaln(0.5 * (nu + r)) - gammaln(0.5 * nu) - 0.5 * r * np.log(np.pi * nu))


def logpdf_from_delta(delta, logdet_psi: float, nu: float, r: int):
    return (
        log_normalizer(nu, r)
        - 0.5 * logdet_psi
        - 0.5 * (nu + r) * np.log1p(np.asarray(delta) / nu)
    )


def t_logpdf(x, params: ClusterParams):
    """Log density of the r-variate t distribution at ``x``."""
    delta = squared_mahalanobis(x, params)
    out = logpdf_from_delta(delta, params.logdet_psi, params.nu, params.r)
    return float(out) if np.ndim(out) == 0 else out


def weight(delta, nu: float, r: int):
    """Robustness weight ``(nu + r) / (nu + delta)`` given to a point.

    Far points (large ``delta``) get weights approaching zero; the maximum
    ``(nu + r) / nu`` is attained at the location itself.
    """
    d = np.asarray(delta, dtype=float)
    if np.any(d < 0):
        raise InvalidArgumentError("squared distance must be non-negative")
    out = (nu + r) / (nu + d)
    return float(out) if out.ndim == 0 else out
