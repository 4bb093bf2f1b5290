"""Synthetic benchmark data, replacement outliers and CSV ingestion.

The generators reproduce the simulation designs used to benchmark robust
cluster enumeration: three anisotropic Gaussian clusters with one replaced
outlier (``data1``) or a fraction of replaced outliers kept outside every
cluster (``data2``), two heavy-tailed t3 clusters in a growing number of
dimensions (``data3``), five t3 clusters of heterogeneous size (``data4``),
and ``data2`` with two clusters pulled together (``overlap-sweep``).

Ground-truth labels are ``1..K`` for cluster members and ``0`` for injected
outliers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import GeneratorError, IngestionError, InvalidArgumentError
from .rng import make_rng
from .tdist import ClusterParams, squared_mahalanobis

DATA1_CENTERS = np.array([[0.0, 5.0], [5.0, 0.0], [-5.0, 0.0]])
DATA1_COVARIANCES = np.array(
    [
        [[2.0, 0.5], [0.5, 0.5]],
        [[1.0, 0.0], [0.0, 0.1]],
        [[2.0, -0.5], [-0.5, 0.5]],
    ]
)
OUTLIER_BOX = (-20.0, 20.0)
# an outlier must lie beyond the 99.9% ellipsoid of every true cluster
OUTLIER_DELTA_MIN = float(chi2.ppf(0.999, 2))
MAX_REJECTIONS = 10_000
DATA4_MIN_SEPARATION = 40.0
DATA4_BOX = (-200.0, 200.0)
T_NU = 3.0

KINDS = ("data1", "data2", "data3", "data4", "overlap-sweep", "custom")


@dataclass(frozen=True, eq=False)
class DataSet:
    points: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise InvalidArgumentError("points must be an N x r matrix")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("points contain non-finite entries")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int).reshape(-1)
            if labels.shape[0] != pts.shape[0]:
                raise InvalidArgumentError("labels must have one entry per point")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def r(self) -> int:
        return self.points.shape[1]

    @property
    def k_true(self) -> Optional[int]:
        if self.labels is None:
            return None
        return int(np.unique(self.labels[self.labels > 0]).size)


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything needed to regenerate one synthetic data set.

    ``n_per_cluster`` holds one entry per cluster; ``data1`` also accepts a
    single entry broadcast to its three clusters, and ``data4`` reads only
    the size of the fifth cluster from its last entry. ``custom`` replaces
    rows of ``base`` with outliers.
    """

    kind: str
    n_per_cluster: tuple = (500,)
    outlier_fraction: float = 0.0
    outlier_count: Optional[int] = None
    outlier_range: tuple = OUTLIER_BOX
    r: int = 2
    overlap_pct: float = 0.0
    seed: int = 0
    base: Optional[DataSet] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown generator kind {self.kind!r}")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise InvalidArgumentError("outlier_fraction must lie in [0, 1)")
        if any(int(n) < 1 for n in self.n_per_cluster):
            raise InvalidArgumentError("every cluster needs at least one point")
        if self.outlier_range[0] >= self.outlier_range[1]:
            raise InvalidArgumentError("outlier_range must be an increasing interval")
        if self.kind == "custom" and self.base is None:
            raise InvalidArgumentError("custom generator needs a base data set")


def sample_t_cluster(mu, psi, nu: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from t_nu(mu, psi) as a Gaussian scale mixture."""
    params = ClusterParams(mu, psi, nu)
    z = rng.standard_normal((n, params.r)) @ params.chol.T
    gamma = rng.chisquare(params.nu, size=n)
    return params.mu + z * np.sqrt(params.nu / gamma)[:, None]


def _gaussian_cluster(mu, cov, n, rng):
    chol = np.linalg.cholesky(cov)
    return mu + rng.standard_normal((n, len(mu))) @ chol.T


def _three_gaussians(sizes, rng, centers=DATA1_CENTERS):
    pts, labels = [], []
    for k, (mu, cov, n) in enumerate(zip(centers, DATA1_COVARIANCES, sizes), start=1):
        pts.append(_gaussian_cluster(mu, cov, n, rng))
        labels.append(np.full(n, k))
    return np.vstack(pts), np.concatenate(labels)


def _count_from_fraction(fraction: float, n: int) -> int:
    # tolerate 0.1 * 1500 = 150.00000000000003
    return int(math.floor(fraction * n + 1e-9))


def make_data1(n_per_cluster=500, seed: int = 0, outlier: bool = True) -> DataSet:
    """Three Gaussian clusters with one point replaced by a uniform outlier."""
    sizes = np.broadcast_to(np.atleast_1d(n_per_cluster), (3,)).astype(int)
    rng = make_rng(seed)
    pts, labels = _three_gaussians(sizes, rng)
    data = DataSet(pts, labels, name="data1")
    if outlier:
        data = inject_replacement_outliers(data, rng, count=1)
    return data


def _replace_outside_clusters(pts, labels, count, centers, rng, box=OUTLIER_BOX):
    params = [ClusterParams(mu, cov, 1.0) for mu, cov in zip(centers, DATA1_COVARIANCES)]
    rows = rng.choice(pts.shape[0], size=count, replace=False)
    pts, labels = pts.copy(), labels.copy()
    for row in rows:
        for _ in range(MAX_REJECTIONS):
            cand = rng.uniform(box[0], box[1], size=2)
            if all(squared_mahalanobis(cand, p) > OUTLIER_DELTA_MIN for p in params):
                break
        else:
            raise GeneratorError("could not place an outlier outside all clusters")
        pts[row] = cand
        labels[row] = 0
    return pts, labels


def make_data2(alpha: float = 0.0, seed: int = 0, n_per_cluster: int = 500) -> DataSet:
    """Data-1 geometry with a fraction ``alpha`` of points replaced by outliers
    that fall outside the 99.9% ellipsoid of every cluster."""
    if not 0.0 <= alpha < 1.0:
        raise InvalidArgumentError("alpha must lie in [0, 1)")
    rng = make_rng(seed)
    pts, labels = _three_gaussians([n_per_cluster] * 3, rng)
    count = _count_from_fraction(alpha, pts.shape[0])
    pts, labels = _replace_outside_clusters(pts, labels, count, DATA1_CENTERS, rng)
    return DataSet(pts, labels, name=f"data2(alpha={alpha:g})")


def overlap_centers(overlap_pct: float) -> np.ndarray:
    """Data-2 centroids with the third slid toward the second.

    The separation shrinks linearly: ``d0 * (1 - overlap_pct / 100)``.
    """
    if not 0.0 <= overlap_pct <= 100.0:
        raise InvalidArgumentError("overlap_pct must lie in [0, 100]")
    centers = DATA1_CENTERS.copy()
    mu2, mu3 = centers[1], centers[2]
    centers[2] = mu2 + (mu3 - mu2) * (1.0 - overlap_pct / 100.0)
    return centers


def make_overlap_sweep(
    overlap_pct: float, seed: int = 0, alpha: float = 0.01, n_per_cluster: int = 500
) -> DataSet:
    centers = overlap_centers(overlap_pct)
    rng = make_rng(seed)
    pts, labels = _three_gaussians([n_per_cluster] * 3, rng, centers=centers)
    count = _count_from_fraction(alpha, pts.shape[0])
    pts, labels = _replace_outside_clusters(pts, labels, count, centers, rng)
    return DataSet(pts, labels, name=f"overlap({overlap_pct:g}%)")


def make_data3(r: int, seed: int = 0, c_pair=(0.0, 15.0), n_per_cluster: int = 500) -> DataSet:
    """Two t3 clusters centred at ``c * ones(r)`` with identity scatter."""
    if r < 1:
        raise InvalidArgumentError("r must be positive")
    rng = make_rng(seed)
    pts = [sample_t_cluster(np.full(r, c), np.eye(r), T_NU, n_per_cluster, rng) for c in c_pair]
    labels = np.repeat(np.arange(1, len(c_pair) + 1), n_per_cluster)
    return DataSet(np.vstack(pts), labels, name=f"data3(r={r})")


def data4_centers(rng: np.random.Generator, k: int = 5) -> np.ndarray:
    for _ in range(MAX_REJECTIONS):
        centers = rng.uniform(DATA4_BOX[0], DATA4_BOX[1], size=(k, 2))
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        if np.all(dist[np.triu_indices(k, 1)] >= DATA4_MIN_SEPARATION):
            return centers
    raise GeneratorError("could not draw well-separated Data-4 centroids")


def make_data4(n5: int = 500, seed: int = 0, n_other: int = 500) -> DataSet:
    """Five t3 clusters with random, well separated centroids; the fifth has ``n5`` points."""
    rng = make_rng(seed)
    centers = data4_centers(rng)
    sizes = [n_other] * 4 + [int(n5)]
    pts = [sample_t_cluster(mu, np.eye(2), T_NU, n, rng) for mu, n in zip(centers, sizes)]
    labels = np.repeat(np.arange(1, 6), sizes)
    return DataSet(np.vstack(pts), labels, name=f"data4(n5={n5})")


def inject_replacement_outliers(
    data: DataSet,
    rng: np.random.Generator,
    *,
    count: Optional[int] = None,
    fraction: Optional[float] = None,
    box: Sequence[float] = OUTLIER_BOX,
) -> DataSet:
    """Overwrite uniformly chosen rows with uniform draws from ``box`` on every axis.

    Give exactly one of ``count`` or ``fraction``. Replaced rows get label 0;
    unlabeled input is labeled 1 everywhere else.
    """
    if (count is None) == (fraction is None):
        raise InvalidArgumentError("give exactly one of count or fraction")
    if fraction is not None:
        if not 0.0 <= fraction < 1.0:
            raise InvalidArgumentError("fraction must lie in [0, 1)")
        count = _count_from_fraction(fraction, data.n)
    if not 0 <= count <= data.n:
        raise InvalidArgumentError(f"cannot replace {count} of {data.n} rows")
    labels = data.labels.copy() if data.labels is not None else np.ones(data.n, dtype=int)
    pts = data.points.copy()
    if count:
        rows = rng.choice(data.n, size=count, replace=False)
        pts[rows] = rng.uniform(box[0], box[1], size=(count, data.r))
        labels[rows] = 0
    return DataSet(pts, labels, name=data.name)


def generate(spec: GeneratorSpec) -> DataSet:
    """Build the data set described by ``spec``."""
    if spec.kind == "data1":
        return make_data1(
            np.broadcast_to(np.asarray(spec.n_per_cluster), (3,)), spec.seed,
            outlier=spec.outlier_count != 0,
        )
    if spec.kind == "data2":
        return make_data2(spec.outlier_fraction, spec.seed, n_per_cluster=spec.n_per_cluster[0])
    if spec.kind == "data3":
        return make_data3(spec.r, spec.seed, n_per_cluster=spec.n_per_cluster[0])
    if spec.kind == "data4":
        return make_data4(spec.n_per_cluster[-1], spec.seed)
    if spec.kind == "overlap-sweep":
        return make_overlap_sweep(
            spec.overlap_pct, spec.seed, alpha=spec.outlier_fraction or 0.01,
            n_per_cluster=spec.n_per_cluster[0],
        )
    # custom: replacement outliers on a fixed base set
    rng = make_rng(spec.seed)
    if spec.outlier_count is not None:
        return inject_replacement_outliers(spec.base, rng, count=spec.outlier_count, box=spec.outlier_range)
    return inject_replacement_outliers(
        spec.base, rng, fraction=spec.outlier_fraction, box=spec.outlier_range
    )


def with_seed(spec: GeneratorSpec, seed: int) -> GeneratorSpec:
    return replace(spec, seed=seed)


def load_csv(path, standardize: bool = False) -> DataSet:
    """Read a comma separated file with a header row and numeric columns.

    A trailing column named ``label`` is read as integer ground truth. With
    ``standardize`` every feature column is z-scored using the ``N - 1``
    standard deviation.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    rows = [row for row in rows if row and any(cell.strip() for cell in row)]
    if len(rows) < 2:
        raise IngestionError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    values = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise IngestionError(f"{path}:{i}: expected {width} fields, found {len(row)}")
        try:
            values[i - 2] = [float(cell) for cell in row]
        except ValueError as exc:
            raise IngestionError(f"{path}:{i}: non-numeric field ({exc})") from exc
    if not np.all(np.isfinite(values)):
        raise IngestionError(f"{path}: non-finite values")

    labels = None
    if header[-1].lower() == "label" and width > 1:
        labels = values[:, -1].astype(int)
        values = values[:, :-1]
    if standardize:
        if values.shape[0] < 2:
            raise IngestionError(f"{path}: cannot standardize a single row")
        sd = values.std(axis=0, ddof=1)
        if np.any(sd == 0):
            raise IngestionError(f"{path}: zero-variance column cannot be standardized")
        values = (values - values.mean(axis=0)) / sd
    return DataSet(values, labels, name=path.stem)


def save_csv(data: DataSet, path) -> None:
    """Write ``data`` with a header ``x1..xr`` and, if labeled, a trailing ``label`` column."""
    path = Path(path)
    header = [f"x{j + 1}" for j in range(data.r)]
    if data.labels is not None:
        header.append("label")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(data.points):
            cells = [repr(float(v)) for v in row]
            if data.labels is not None:
                cells.append(str(int(data.labels[i])))
            writer.writerow(cells)
