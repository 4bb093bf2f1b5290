"""Cluster enumeration criteria for t-mixture candidate models.

All criteria share the form ``fidelity - penalty`` and are maximized over
the candidate number of clusters. The fidelity is the log-likelihood of the
hard partition with each cluster scored by its own fitted t distribution;
terms that do not depend on the candidate (``-N log N``, the data evidence)
are dropped throughout.

``bic_t``
    penalty ``(q/2) sum_m log eps_m`` with ``eps_m = max(sum w_n^2, N_m)``.
``bic_ft``
    penalty ``(1/2) sum_m log |J_m|`` using the observed Fisher information
    of each cluster, assembled from closed-form blocks.
``bic_ot``
    Schwarz penalty ``(q l / 2) log N``.
``bic_n``
    Gaussian candidate models scored on the hard partition with ML
    covariances, penalty ``(q/2) sum_m log N_m``.

Here ``q = r (r + 3) / 2`` counts location and unique scatter parameters;
``nu`` is fixed and not counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .datagen import DataSet
from .em import MixtureModel, Partition, _points
from .errors import (
    IndefiniteFimError,
    InvalidArgumentError,
    NumericError,
    UndersizedClusterError,
    UnsupportedDimensionError,
)
from .tdist import ClusterParams, log_normalizer, squared_mahalanobis, weight

# dense Kronecker blocks grow like r^4; beyond this the finite-sample
# criterion is refused
MAX_FT_DIMENSION = 12

CRITERIA = ("bic_t", "bic_ft", "bic_ot", "bic_n")


@dataclass(frozen=True, eq=False)
class CriterionScore:
    candidate_l: int
    fidelity: float
    penalty: float
    total: float
    per_cluster_epsilon: np.ndarray
    valid: bool = True
    reason: str = ""

    @classmethod
    def make(cls, l, fidelity, penalty, eps) -> "CriterionScore":
        return cls(l, float(fidelity), float(penalty), float(fidelity) - float(penalty),
                   np.asarray(eps, dtype=float))

    @classmethod
    def invalid(cls, l, reason) -> "CriterionScore":
        return cls(l, float("nan"), float("nan"), float("nan"), np.full(l, np.nan), False, reason)

    def to_dict(self) -> dict:
        return {
            "l": self.candidate_l,
            "fidelity": self.fidelity,
            "penalty": self.penalty,
            "total": self.total,
            "epsilon": [float(e) for e in self.per_cluster_epsilon],
            "valid": self.valid,
            "reason": self.reason,
        }


@dataclass(frozen=True, eq=False)
class FimBlocks:
    """Second-derivative blocks of a cluster log-likelihood at the estimate.

    ``j_mu_mu`` and ``j_psi_psi`` are the Hessian blocks themselves (negative
    definite at a maximum); the Fisher information is their negation.
    """

    j_mu_mu: np.ndarray
    j_mu_psi: np.ndarray
    j_psi_psi: np.ndarray
    duplication: np.ndarray = field(repr=False)


def n_params(r: int) -> float:
    """Free parameters per cluster: r locations plus r(r+1)/2 scatter entries."""
    return r * (r + 3) / 2


@lru_cache(maxsize=None)
def _duplication(r: int) -> np.ndarray:
    d = np.zeros((r * r, r * (r + 1) // 2))
    k = 0
    for j in range(r):
        for i in range(j, r):
            d[j * r + i, k] = 1.0
            d[i * r + j, k] = 1.0
            k += 1
    d.flags.writeable = False
    return d


def duplication_matrix(r: int) -> np.ndarray:
    """0/1 matrix ``D`` with ``vec(Psi) = D @ vech(Psi)`` for symmetric ``Psi``.

    ``vec`` stacks columns; ``vech`` stacks the lower triangle column by column.
    """
    if r < 1:
        raise InvalidArgumentError("r must be positive")
    return _duplication(int(r)).copy()


def vech(psi: np.ndarray) -> np.ndarray:
    r = psi.shape[0]
    return np.array([psi[i, j] for j in range(r) for i in range(j, r)])


def unvech(u: np.ndarray, r: int) -> np.ndarray:
    return (_duplication(r) @ u).reshape(r, r, order="F")


def _cluster_points(partition: Partition, data, model: MixtureModel):
    x = _points(data)
    if partition.l != model.l:
        raise InvalidArgumentError("partition and model disagree on the number of clusters")
    if x.shape[1] != model.r:
        raise InvalidArgumentError("model and data dimensions differ")
    return [x[idx] for idx in partition.cluster_indices]


def _cluster_fidelity(points: np.ndarray, params: ClusterParams) -> float:
    n_m, r = points.shape
    nu = params.nu
    delta = squared_mahalanobis(points, params)
    return (
        n_m * np.log(n_m)
        - 0.5 * n_m * params.logdet_psi
        + n_m * log_normalizer(nu, r)
        - 0.5 * (nu + r) * np.sum(np.log1p(delta / nu))
    )


def cluster_data_fidelity(partition: Partition, model: MixtureModel, data) -> float:
    """Hard-partition log-likelihood with the model-independent ``-N log N`` removed.

    Raises :class:`UndersizedClusterError` if a cluster is empty.
    """
    clusters = _cluster_points(partition, data, model)
    if any(len(c) == 0 for c in clusters):
        raise UndersizedClusterError("empty cluster")
    return float(sum(_cluster_fidelity(c, p) for c, p in zip(clusters, model.components)))


def epsilon_term(weights, n_m: int) -> float:
    """``max(sum w^2, N_m)``: the normalization of a cluster's penalty."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise InvalidArgumentError("empty weight sequence")
    return float(max(np.sum(w * w), n_m))


def cluster_weights(points: np.ndarray, params: ClusterParams) -> np.ndarray:
    return weight(squared_mahalanobis(points, params), params.nu, params.r)


def _check_sizes(partition: Partition, r: int):
    small = [m for m, n in enumerate(partition.cluster_sizes) if n < r + 1]
    if small:
        raise UndersizedClusterError(
            f"cluster {small[0]} has {partition.cluster_sizes[small[0]]} points, need {r + 1}"
        )


def _t_epsilons(clusters, model):
    return np.array([epsilon_term(cluster_weights(c, p), len(c)) for c, p in zip(clusters, model.components)])


def bic_t(partition: Partition, model: MixtureModel, data) -> CriterionScore:
    """Asymptotic robust criterion with penalty ``(q/2) sum log eps_m``."""
    l, r = model.l, model.r
    try:
        _check_sizes(partition, r)
        clusters = _cluster_points(partition, data, model)
        fidelity = cluster_data_fidelity(partition, model, data)
    except (UndersizedClusterError, NumericError) as exc:
        return CriterionScore.invalid(l, str(exc))
    eps = _t_epsilons(clusters, model)
    return CriterionScore.make(l, fidelity, 0.5 * n_params(r) * np.sum(np.log(eps)), eps)


def bic_ot(partition: Partition, model: MixtureModel, data) -> CriterionScore:
    """Schwarz BIC with t candidate models: penalty ``(q l / 2) log N``."""
    l, r = model.l, model.r
    n = _points(data).shape[0]
    try:
        _check_sizes(partition, r)
        clusters = _cluster_points(partition, data, model)
        fidelity = cluster_data_fidelity(partition, model, data)
    except (UndersizedClusterError, NumericError) as exc:
        return CriterionScore.invalid(l, str(exc))
    eps = _t_epsilons(clusters, model)
    return CriterionScore.make(l, fidelity, 0.5 * n_params(r) * l * np.log(n), eps)


def fim_blocks(cluster_points: np.ndarray, params: ClusterParams) -> FimBlocks:
    """Closed-form Hessian blocks of one cluster's log-likelihood in ``(mu, vech(Psi))``.

    Valid at the maximum-likelihood estimate, where ``sum w_n x~_n = 0`` and
    ``sum w_n x~_n x~_n^T = N_m Psi``; EM estimates satisfy these approximately.
    """
    x = np.atleast_2d(np.asarray(cluster_points, dtype=float))
    n_m, r = x.shape
    if r != params.r:
        raise InvalidArgumentError("cluster points and parameters differ in dimension")
    if n_m < r + 1:
        raise UndersizedClusterError(f"cluster has {n_m} points, need {r + 1}")
    nu = params.nu
    d = _duplication(r)
    eye = np.eye(r)
    psi_inv = np.linalg.solve(params.chol.T, np.linalg.solve(params.chol, eye))
    psi_inv = 0.5 * (psi_inv + psi_inv.T)

    a = (x - params.mu) @ psi_inv  # rows are (Psi^{-1} x~_n)^T
    delta = np.einsum("ij,ij->i", a, x - params.mu)
    w = weight(np.maximum(delta, 0.0), nu, r)
    w2 = w * w
    c = 1.0 / (nu + r)

    j_mu_mu = 2.0 * c * (a.T * w2) @ a - psi_inv * w.sum()
    aa = np.einsum("ni,nj->nij", a, a).reshape(n_m, r * r)  # rows (a_n kron a_n)^T
    j_mu_psi = c * (a.T * w2) @ aa @ d
    kron_inv = np.kron(psi_inv, psi_inv)
    j_psi_psi = -0.5 * n_m * d.T @ kron_inv @ d + 0.5 * c * d.T @ ((aa.T * w2) @ aa) @ d
    j_psi_psi = 0.5 * (j_psi_psi + j_psi_psi.T)
    return FimBlocks(j_mu_mu, j_mu_psi, j_psi_psi, d.copy())


def assemble_fim(blocks: FimBlocks) -> np.ndarray:
    """The full Fisher information ``-[[J_mm, J_mp], [J_mp^T, J_pp]]``."""
    top = np.hstack([blocks.j_mu_mu, blocks.j_mu_psi])
    bottom = np.hstack([blocks.j_mu_psi.T, blocks.j_psi_psi])
    return -np.vstack([top, bottom])


def fim_logdet(blocks: FimBlocks) -> float:
    """``log |J|`` via the Schur complement of the scatter block.

    Raises :class:`IndefiniteFimError` if either factor has a non-positive
    determinant.
    """
    neg_pp = -blocks.j_psi_psi
    sign_pp, logdet_pp = np.linalg.slogdet(neg_pp)
    if sign_pp <= 0 or not np.isfinite(logdet_pp):
        raise IndefiniteFimError("scatter block of the Fisher information is not positive")
    schur = -blocks.j_mu_mu + blocks.j_mu_psi @ np.linalg.solve(blocks.j_psi_psi, blocks.j_mu_psi.T)
    sign_s, logdet_s = np.linalg.slogdet(schur)
    if sign_s <= 0 or not np.isfinite(logdet_s):
        raise IndefiniteFimError("Schur complement of the Fisher information is not positive")
    return float(logdet_s + logdet_pp)


def check_ft_dimension(r: int) -> None:
    if r > MAX_FT_DIMENSION:
        raise UnsupportedDimensionError(
            f"bic_ft supports r <= {MAX_FT_DIMENSION}, data has r = {r}"
        )


def bic_ft(partition: Partition, model: MixtureModel, data) -> CriterionScore:
    """Finite-sample robust criterion with penalty ``(1/2) sum log |J_m|``.

    Raises :class:`UnsupportedDimensionError` for ``r > 12``; undersized
    clusters and indefinite information matrices give an invalid score.
    """
    l, r = model.l, model.r
    check_ft_dimension(r)
    try:
        _check_sizes(partition, r)
        clusters = _cluster_points(partition, data, model)
        fidelity = cluster_data_fidelity(partition, model, data)
        logdets = [fim_logdet(fim_blocks(c, p)) for c, p in zip(clusters, model.components)]
    except (UndersizedClusterError, NumericError) as exc:
        return CriterionScore.invalid(l, str(exc))
    eps = _t_epsilons(clusters, model)
    return CriterionScore.make(l, fidelity, 0.5 * np.sum(logdets), eps)


def bic_n(partition: Partition, data) -> CriterionScore:
    """Gaussian-candidate criterion on a hard partition with ML covariances."""
    x = _points(data)
    r = x.shape[1]
    l = partition.l
    sizes = np.asarray(partition.cluster_sizes)
    fidelity = 0.0
    for m, idx in enumerate(partition.cluster_indices):
        n_m = len(idx)
        if n_m < r + 1:
            return CriterionScore.invalid(l, f"cluster {m} has {n_m} points, need {r + 1}")
        pts = x[idx]
        d = pts - pts.mean(axis=0)
        cov = d.T @ d / n_m
        # rank test catches covariances that are singular only up to roundoff
        if np.linalg.matrix_rank(cov) < r:
            return CriterionScore.invalid(l, f"cluster {m} covariance is singular")
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0 or not np.isfinite(logdet):
            return CriterionScore.invalid(l, f"cluster {m} covariance is singular")
        fidelity += n_m * np.log(n_m) - 0.5 * n_m * logdet
    penalty = 0.5 * n_params(r) * np.sum(np.log(sizes))
    return CriterionScore.make(l, fidelity, penalty, sizes)


def score(criterion: str, partition: Partition, model: MixtureModel, data) -> CriterionScore:
    """Dispatch to one of :data:`CRITERIA` by name."""
    if criterion == "bic_t":
        return bic_t(partition, model, data)
    if criterion == "bic_ft":
        return bic_ft(partition, model, data)
    if criterion == "bic_ot":
        return bic_ot(partition, model, data)
    if criterion == "bic_n":
        return bic_n(partition, data)
    raise InvalidArgumentError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
