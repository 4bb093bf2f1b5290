"""EM for mixtures of multivariate t distributions with a fixed degree of freedom.

The fit follows the usual two-stage recipe: a few K-medians iterations pick
initial locations, then E and M steps alternate until the observed-data
log-likelihood stops improving. The final soft memberships are turned into a
hard partition by taking each point's most probable component.

Component indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .datagen import DataSet
from .errors import DegenerateComponentError, InitializationError, InvalidArgumentError, NumericError
from .rng import make_rng
from .tdist import ClusterParams, log_normalizer

KMEDIANS_RESEEDS = 10


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 500
    rel_tol: float = 1e-8
    kmedians_iters: int = 10
    ridge: float = 1e-6
    seed: int = 0
    # None means r + 1, the smallest size giving a full-rank scatter
    min_cluster_size: Optional[int] = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be at least 1")
        if not self.rel_tol > 0:
            raise InvalidArgumentError("rel_tol must be positive")
        if self.kmedians_iters < 1:
            raise InvalidArgumentError("kmedians_iters must be at least 1")
        if self.ridge < 0:
            raise InvalidArgumentError("ridge must be non-negative")
        if self.min_cluster_size is not None and self.min_cluster_size < 1:
            raise InvalidArgumentError("min_cluster_size must be positive")

    def min_size(self, r: int) -> int:
        return self.min_cluster_size if self.min_cluster_size is not None else r + 1


@dataclass(frozen=True, eq=False)
class MixtureModel:
    components: tuple
    tau: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        tau = np.asarray(self.tau, dtype=float).reshape(-1)
        if not comps or tau.shape[0] != len(comps):
            raise InvalidArgumentError("need one mixing weight per component")
        if len({c.r for c in comps}) != 1 or len({c.nu for c in comps}) != 1:
            raise InvalidArgumentError("components must share dimension and nu")
        if abs(tau.sum() - 1.0) > 1e-10 or np.any(tau <= 0) or np.any(tau > 1):
            raise InvalidArgumentError("mixing weights must be positive and sum to one")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "tau", tau)

    @property
    def l(self) -> int:
        return len(self.components)

    @property
    def r(self) -> int:
        return self.components[0].r

    @property
    def nu(self) -> float:
        return self.components[0].nu

    @property
    def mus(self) -> np.ndarray:
        return np.stack([c.mu for c in self.components])

    @property
    def psis(self) -> np.ndarray:
        return np.stack([c.psi for c in self.components])

    @classmethod
    def from_arrays(cls, tau, mus, psis, nu: float) -> "MixtureModel":
        comps = tuple(ClusterParams(mu, psi, nu) for mu, psi in zip(mus, psis))
        return cls(comps, tau)


@dataclass(frozen=True, eq=False)
class Responsibilities:
    upsilon: np.ndarray  # N x l posterior membership probabilities
    w: np.ndarray  # N x l robustness weights


@dataclass(frozen=True, eq=False)
class Partition:
    assignment: np.ndarray
    cluster_sizes: np.ndarray
    cluster_indices: tuple

    @property
    def l(self) -> int:
        return len(self.cluster_sizes)

    @classmethod
    def from_assignment(cls, assignment, l: int) -> "Partition":
        assignment = np.asarray(assignment, dtype=int)
        sizes = np.bincount(assignment, minlength=l)
        indices = tuple(np.flatnonzero(assignment == m) for m in range(l))
        return cls(assignment, sizes, indices)


@dataclass(frozen=True, eq=False)
class FitResult:
    model: MixtureModel
    resp: Responsibilities
    partition: Partition
    loglik_trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


def _points(data) -> np.ndarray:
    return data.points if isinstance(data, DataSet) else np.atleast_2d(np.asarray(data, dtype=float))


def _ridge_amount(psi: np.ndarray, ridge: float) -> float:
    return ridge * np.trace(psi) / psi.shape[0]


def _cholesky(psi: np.ndarray) -> Optional[np.ndarray]:
    """Cholesky factor, or None when it fails or is singular to working precision."""
    try:
        chol = np.linalg.cholesky(psi)
    except np.linalg.LinAlgError:
        return None
    pivots = np.diagonal(chol, axis1=-2, axis2=-1) ** 2
    # pivots bracket the eigenvalues, so a tiny ratio means numerical rank loss
    if not np.all(pivots.min(axis=-1) > psi.shape[-1] * np.finfo(float).eps * pivots.max(axis=-1)):
        return None
    return chol


def _regularized_cholesky(psi: np.ndarray, ridge: float) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky of ``psi``, retrying once with a trace-scaled ridge on the diagonal."""
    chol = _cholesky(psi)
    if chol is not None:
        return psi, chol
    bump = _ridge_amount(psi, ridge)
    if not bump > 0:
        raise DegenerateComponentError("scatter matrix collapsed to zero")
    psi = psi + bump * np.eye(psi.shape[0])
    chol = _cholesky(psi)
    if chol is None:
        raise DegenerateComponentError("scatter matrix is singular even after ridge")
    return psi, chol


def _l1_assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    dist = np.abs(x[:, None, :] - centroids[None, :, :]).sum(axis=2)
    return np.argmin(dist, axis=1)


def seed_centroids(x: np.ndarray, l: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``l`` distinct points by greedy L1-distance seeding.

    The first index is uniform. Each later one is the best of a few candidates
    drawn with probability proportional to L1 distance from the chosen set,
    judged by the drop in total L1 distance. Small far clusters are found far
    more often than with uniform draws.
    """
    n = len(x)
    trials = 2 + int(np.log(l))
    chosen = [int(rng.integers(n))]
    dist = np.abs(x - x[chosen[0]]).sum(axis=1)
    for _ in range(1, l):
        total = dist.sum()
        if total > 0:
            cand = rng.choice(n, size=trials, p=dist / total)
        else:
            # all points coincide with chosen ones; any unchosen index will do
            cand = rng.choice(np.setdiff1d(np.arange(n), chosen), size=1)
        cand_dist = np.minimum(dist, np.abs(x[None, :, :] - x[cand][:, None, :]).sum(axis=2))
        best = int(np.argmin(cand_dist.sum(axis=1)))
        chosen.append(int(cand[best]))
        dist = cand_dist[best]
    return np.asarray(chosen)


def _kmedians(x, l, iters, rng):
    n = x.shape[0]
    centroids = x[seed_centroids(x, l, rng)].copy()
    reseeds = 0
    for it in range(iters + 1):
        assign = _l1_assign(x, centroids)
        while True:
            empty = np.flatnonzero(np.bincount(assign, minlength=l) == 0)
            if empty.size == 0:
                break
            if reseeds >= KMEDIANS_RESEEDS:
                raise InitializationError(f"K-medians left {empty.size} cluster(s) empty")
            reseeds += 1
            centroids[empty[0]] = x[rng.integers(n)]
            assign = _l1_assign(x, centroids)
        if it == iters:
            break
        for m in range(l):
            centroids[m] = np.median(x[assign == m], axis=0)
    return centroids, assign


def kmedians_init(data, l: int, config: EmConfig = EmConfig(), rng: Optional[np.random.Generator] = None,
                  nu: float = 3.0) -> MixtureModel:
    """Initial mixture from K-medians: medians as locations, per-cluster sample
    covariances as scatters and cluster proportions as mixing weights."""
    x = _points(data)
    n, r = x.shape
    if l < 1:
        raise InvalidArgumentError("l must be positive")
    if n < l * config.min_size(r):
        raise InitializationError(f"{n} points cannot support {l} clusters of size {config.min_size(r)}")
    rng = make_rng(config.seed) if rng is None else rng
    centroids, assign = _kmedians(x, l, config.kmedians_iters, rng)

    data_scale = np.trace(np.atleast_2d(np.cov(x, rowvar=False))) / r
    psis = np.empty((l, r, r))
    sizes = np.bincount(assign, minlength=l)
    for m in range(l):
        members = x[assign == m]
        cov = np.atleast_2d(np.cov(members, rowvar=False)) if len(members) > 1 else np.zeros((r, r))
        cov = 0.5 * (cov + cov.T)
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            scale = np.trace(cov) / r
            if not scale > 0:
                scale = data_scale if data_scale > 0 else 1.0
            cov = cov + config.ridge * scale * np.eye(r)
        psis[m] = cov
    try:
        return MixtureModel.from_arrays(sizes / n, centroids, psis, nu)
    except NumericError as exc:
        raise InitializationError("initial scatter matrix is not positive definite") from exc


def _logsumexp_rows(a):
    peak = a.max(axis=1)
    if not np.all(np.isfinite(peak)):
        raise NumericError("all component densities vanished for some point")
    return np.log(np.exp(a - peak[:, None]).sum(axis=1)) + peak


def _e_step_arrays(x, log_tau, mus, chols, nu):
    """Log responsibilities, squared distances and observed-data log-likelihood."""
    r = x.shape[1]
    # inverse of the lower factor only; l small r x r triangular inversions
    linv = np.linalg.inv(chols)
    z = linv @ x.T - linv @ mus[:, :, None]  # l x r x N
    delta = (z * z).sum(axis=1).T
    logdet = 2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
    joint = (log_normalizer(nu, r) - 0.5 * logdet + log_tau) - 0.5 * (nu + r) * np.log1p(delta / nu)
    row = _logsumexp_rows(joint)
    return joint - row[:, None], delta, float(row.sum())


def _m_step_arrays(x, upsilon, w, ridge, min_size):
    n, r = x.shape
    s = upsilon.sum(axis=0)
    small = np.flatnonzero(s < min_size)
    if small.size:
        raise DegenerateComponentError(
            f"component {int(small[0])} has effective size {s[small[0]]:.3g} < {min_size}"
        )
    uw = upsilon * w
    mus = (uw.T @ x) / uw.sum(axis=0)[:, None]
    diff = x[None, :, :] - mus[:, None, :]
    psis = (diff * uw.T[:, :, None]).transpose(0, 2, 1) @ diff / s[:, None, None]
    psis = 0.5 * (psis + psis.transpose(0, 2, 1))
    chols = _cholesky(psis)
    ridged = chols is None
    if ridged:
        chols = np.empty_like(psis)
        for m in range(len(s)):
            psis[m], chols[m] = _regularized_cholesky(psis[m], ridge)
    return s / n, mus, psis, chols, ridged


def e_step(data, model: MixtureModel) -> Responsibilities:
    x = _points(data)
    if x.shape[1] != model.r:
        raise InvalidArgumentError("model and data dimensions differ")
    chols = np.stack([c.chol for c in model.components])
    log_resp, delta, _ = _e_step_arrays(x, np.log(model.tau), model.mus, chols, model.nu)
    return Responsibilities(np.exp(log_resp), (model.nu + model.r) / (model.nu + delta))


def m_step(data, resp: Responsibilities, nu: float, config: EmConfig = EmConfig()) -> MixtureModel:
    """Weighted location/scatter updates and mixing proportions from one E step."""
    x = _points(data)
    tau, mus, psis, _, _ = _m_step_arrays(x, resp.upsilon, resp.w, config.ridge, config.min_size(x.shape[1]))
    return MixtureModel.from_arrays(tau, mus, psis, nu)


def mixture_loglik(data, model: MixtureModel) -> float:
    x = _points(data)
    chols = np.stack([c.chol for c in model.components])
    return _e_step_arrays(x, np.log(model.tau), model.mus, chols, model.nu)[2]


def hard_assign(resp) -> Partition:
    """Assign each point to its most probable component (first index on ties)."""
    upsilon = resp.upsilon if isinstance(resp, Responsibilities) else np.asarray(resp)
    return Partition.from_assignment(np.argmax(upsilon, axis=1), upsilon.shape[1])


def run_em(data, init: MixtureModel, config: EmConfig = EmConfig()) -> FitResult:
    """Iterate E and M steps from ``init`` until the relative log-likelihood
    change ``|dl| / (1 + |l|)`` drops below ``config.rel_tol``."""
    x = _points(data)
    n, r = x.shape
    nu = init.nu
    min_size = config.min_size(r)
    tau, mus = init.tau, init.mus
    psis = init.psis
    chols = np.stack([c.chol for c in init.components])

    log_resp, delta, ll = _e_step_arrays(x, np.log(tau), mus, chols, nu)
    trace = [ll]
    converged = False
    rescued = False
    for _ in range(config.max_iter):
        upsilon = np.exp(log_resp)
        w = (nu + r) / (nu + delta)
        tau, mus, psis, chols, ridged = _m_step_arrays(x, upsilon, w, config.ridge, min_size)
        if ridged:
            # one rescue per fit; a component that collapses again is degenerate
            if rescued:
                raise DegenerateComponentError("scatter matrix collapsed again after ridge")
            rescued = True
        log_resp, delta, ll = _e_step_arrays(x, np.log(tau), mus, chols, nu)
        trace.append(ll)
        if abs(trace[-1] - trace[-2]) / (1.0 + abs(trace[-1])) < config.rel_tol:
            converged = True
            break

    model = MixtureModel.from_arrays(tau, mus, psis, nu)
    resp = Responsibilities(np.exp(log_resp), (nu + r) / (nu + delta))
    return FitResult(model, resp, hard_assign(resp), trace, converged)


def fit_mixture(data, l: int, nu: float, config: EmConfig = EmConfig(),
                rng: Optional[np.random.Generator] = None) -> FitResult:
    """Fit an ``l``-component t mixture: K-medians start, then EM.

    Raises :class:`DegenerateComponentError` or :class:`InitializationError`
    when the candidate cannot be fitted; callers treat that as an invalid
    candidate rather than a crash.
    """
    rng = make_rng(config.seed) if rng is None else rng
    init = kmedians_init(data, l, config, rng, nu=nu)
    return run_em(data, init, config)


def fit_from_centroids(data, centroids: Sequence, nu: float, config: EmConfig = EmConfig()) -> FitResult:
    """EM started from fixed locations, with each point given to its nearest one (L1)."""
    x = _points(data)
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    l, r = centroids.shape
    assign = _l1_assign(x, centroids)
    sizes = np.bincount(assign, minlength=l)
    if np.any(sizes < 2):
        raise InitializationError("every starting centroid needs at least two nearest points")
    psis = np.stack([np.atleast_2d(np.cov(x[assign == m], rowvar=False)) for m in range(l)])
    init = MixtureModel.from_arrays(sizes / len(x), centroids, psis, nu)
    return run_em(x, init, config)
