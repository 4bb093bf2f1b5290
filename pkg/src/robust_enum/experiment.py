"""Seeded Monte Carlo harness for the enumeration benchmarks.

Run ``i`` of sweep point ``p`` draws its data from the stream keyed by
``(master_seed, p, i, 0)`` and its EM initializations from
``(master_seed, p, i, 1)``, so any single run can be replayed in isolation
and parallel execution reproduces the serial result exactly.

Within a run every requested criterion scores the same data set. The three
t criteria share one set of t-mixture fits (nu = 3); ``bic_n`` scores fits
of the same EM in its Gaussian limit (nu = 1e6).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .criteria import CRITERIA, MAX_FT_DIMENSION
from .datagen import GeneratorSpec, generate, load_csv
from .em import EmConfig
from .enumeration import DEFAULT_NU, GAUSSIAN_NU, fit_candidates, score_fits, select_k
from .errors import EnumerationFailure, InvalidArgumentError, RobustEnumError
from .rng import derive_seed

log = logging.getLogger(__name__)

THREADS_ENV = "ROBUST_ENUM_THREADS"
T_CRITERIA = ("bic_t", "bic_ft", "bic_ot")


@dataclass(frozen=True)
class Metrics:
    p_det: float
    mae: float
    p_under: float
    p_over: float
    runs: int
    k_true: int
    k_hats: tuple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_hats"] = list(self.k_hats)
        return d


def compute_metrics(k_hats: Sequence[int], k_true: int) -> Metrics:
    """Detection rate, mean absolute error and under/over-estimation rates."""
    k = np.asarray(list(k_hats), dtype=int)
    if k.size == 0:
        raise InvalidArgumentError("k_hats is empty")
    runs = int(k.size)
    p_det = float(np.count_nonzero(k == k_true)) / runs
    p_under = float(np.count_nonzero(k < k_true)) / runs
    mae = float(np.abs(k_true - k).sum()) / runs
    return Metrics(p_det, mae, p_under, 1.0 - p_det - p_under, runs, int(k_true), tuple(int(v) for v in k))


@dataclass(frozen=True)
class FitSettings:
    """EM and candidate-range settings shared by every run of an experiment."""

    nu: float = DEFAULT_NU
    gaussian_nu: float = GAUSSIAN_NU
    l_min: int = 1
    l_max: Optional[int] = None  # None: twice the true number of clusters
    restarts: int = 3
    em: EmConfig = field(default_factory=EmConfig)


@dataclass
class SweepPoint:
    value: float
    metrics: dict  # criterion -> Metrics


@dataclass
class SweepReport:
    sweep_variable: str
    points: list
    config: dict
    master_seed: int

    @property
    def config_digest(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def rows(self):
        for point in self.points:
            for crit, m in point.metrics.items():
                yield point.value, crit, m

    def to_csv(self, path) -> None:
        lines = ["sweep,criterion,p_det,mae,p_under,p_over,runs"]
        for value, crit, m in self.rows():
            lines.append(f"{value!r},{crit},{m.p_det!r},{m.mae!r},{m.p_under!r},{m.p_over!r},{m.runs}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def to_json(self) -> dict:
        return {
            "sweep_variable": self.sweep_variable,
            "master_seed": self.master_seed,
            "config_digest": self.config_digest,
            "config": self.config,
            "points": [
                {"value": p.value, "metrics": {c: m.to_dict() for c, m in p.metrics.items()}}
                for p in self.points
            ],
        }

    def write(self, out_dir, name: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{name}.csv", out / f"{name}.json"
        self.to_csv(csv_path)
        json_path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return csv_path, json_path

    def metrics(self, value, criterion: str) -> Metrics:
        for p in self.points:
            if p.value == value:
                return p.metrics[criterion]
        raise KeyError(value)


def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _select(fits, criterion, data) -> int:
    try:
        return select_k(score_fits(fits, criterion, data))
    except EnumerationFailure:
        return 0


def run_once(spec: GeneratorSpec, criteria: Sequence[str], settings: FitSettings,
             master_seed: int, point: int, run: int, k_true: Optional[int] = None) -> dict:
    """One Monte Carlo run: returns ``{criterion: k_hat}``; 0 marks a failed run."""
    data = generate(replace(spec, seed=derive_seed(master_seed, point, run, 0)))
    k = k_true if k_true is not None else data.k_true
    l_max = settings.l_max if settings.l_max is not None else 2 * k
    em = replace(settings.em, seed=derive_seed(master_seed, point, run, 1))
    l_values = range(settings.l_min, l_max + 1)
    out = {}
    try:
        t_crit = [c for c in criteria if c in T_CRITERIA]
        if t_crit:
            fits = fit_candidates(data, l_values, settings.nu, em, settings.restarts)
            for c in t_crit:
                out[c] = _select(fits, c, data)
        if "bic_n" in criteria:
            fits = fit_candidates(data, l_values, settings.gaussian_nu, em, settings.restarts)
            out["bic_n"] = _select(fits, "bic_n", data)
    except RobustEnumError as exc:
        log.warning("run %d of point %d failed: %s", run, point, exc)
    return {c: out.get(c, 0) for c in criteria}


def _run_star(args):
    return run_once(*args)


def run_monte_carlo(spec: GeneratorSpec, criteria: Sequence[str] = CRITERIA, runs: int = 50,
                    master_seed: int = 0, settings: FitSettings = FitSettings(),
                    k_true: Optional[int] = None, point: int = 0,
                    workers: Optional[int] = None) -> dict:
    """Per-criterion :class:`Metrics` over ``runs`` paired Monte Carlo runs."""
    if runs < 1:
        raise InvalidArgumentError("runs must be positive")
    unknown = set(criteria) - set(CRITERIA)
    if unknown:
        raise InvalidArgumentError(f"unknown criteria {sorted(unknown)}")
    jobs = [(spec, tuple(criteria), settings, master_seed, point, i, k_true) for i in range(runs)]
    workers = default_workers() if workers is None else workers
    if workers > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=min(workers, runs)) as pool:
            results = list(pool.map(_run_star, jobs))
    else:
        results = [_run_star(j) for j in jobs]
    if k_true is None:
        k_true = generate(replace(spec, seed=derive_seed(master_seed, point, 0, 0))).k_true
    return {c: compute_metrics([res[c] for res in results], k_true) for c in criteria}


def _sweep(variable: str, values, make_spec, criteria_for, runs, master_seed, settings,
           workers, k_true=None, extra_config=None) -> SweepReport:
    points = []
    for p, value in enumerate(values):
        crit = criteria_for(value)
        log.info("%s = %s: %d runs, criteria %s", variable, value, runs, ",".join(crit))
        metrics = run_monte_carlo(make_spec(value), crit, runs, master_seed, settings,
                                  k_true=k_true, point=p, workers=workers)
        points.append(SweepPoint(value, metrics))
    config = {
        "sweep_variable": variable,
        "values": list(values),
        "runs": runs,
        "settings": asdict(settings),
        **(extra_config or {}),
    }
    return SweepReport(variable, points, config, master_seed)


def replay_table1(n_k_values=(50, 100, 250, 500), runs: int = 50, master_seed: int = 0,
                  criteria: Sequence[str] = CRITERIA, settings: FitSettings = FitSettings(),
                  workers: Optional[int] = None) -> SweepReport:
    """Data-1 (three Gaussian clusters, one replacement outlier) over cluster size."""
    return _sweep("n_k", list(n_k_values), lambda nk: GeneratorSpec("data1", (int(nk),)),
                  lambda _: tuple(criteria), runs, master_seed, settings, workers,
                  extra_config={"protocol": "table1", "criteria": list(criteria)})


def replay_outlier_sweep(alphas=(0.0, 0.01, 0.02, 0.03, 0.05, 0.10), runs: int = 50,
                         master_seed: int = 0, criteria: Sequence[str] = CRITERIA,
                         settings: FitSettings = FitSettings(),
                         workers: Optional[int] = None) -> SweepReport:
    """Data-2 over the fraction of replacement outliers."""
    return _sweep("alpha", list(alphas), lambda a: GeneratorSpec("data2", (500,), outlier_fraction=a),
                  lambda _: tuple(criteria), runs, master_seed, settings, workers, k_true=3,
                  extra_config={"protocol": "outliers", "criteria": list(criteria)})


def replay_feature_sweep(r_values=(2, 3, 5, 10, 20, 30, 40, 55), runs: int = 50,
                         master_seed: int = 0, criteria: Sequence[str] = CRITERIA,
                         settings: FitSettings = FitSettings(),
                         workers: Optional[int] = None) -> SweepReport:
    """Data-3 (two t3 clusters) over the number of features; ``bic_ft`` only for r <= 12."""
    def criteria_for(r):
        return tuple(c for c in criteria if c != "bic_ft" or r <= MAX_FT_DIMENSION)

    return _sweep("r", list(r_values), lambda r: GeneratorSpec("data3", (500,), r=int(r)),
                  criteria_for, runs, master_seed, settings, workers, k_true=2,
                  extra_config={"protocol": "features", "criteria": list(criteria)})


def replay_overlap_sweep(overlaps=(0, 5, 10, 25, 50, 75, 100), runs: int = 50, master_seed: int = 0,
                         criteria: Sequence[str] = CRITERIA, settings: FitSettings = FitSettings(),
                         workers: Optional[int] = None) -> SweepReport:
    """Data-2 with 1% outliers while the third centroid slides onto the second."""
    return _sweep("overlap_pct", list(overlaps),
                  lambda o: GeneratorSpec("overlap-sweep", (500,), outlier_fraction=0.01, overlap_pct=float(o)),
                  lambda _: tuple(criteria), runs, master_seed, settings, workers, k_true=3,
                  extra_config={"protocol": "overlap", "criteria": list(criteria)})


def replay_heterogeneity_sweep(n5_values=(500, 375, 250, 125, 50, 25, 5), runs: int = 50,
                               master_seed: int = 0, criteria: Sequence[str] = CRITERIA,
                               settings: FitSettings = FitSettings(),
                               workers: Optional[int] = None) -> SweepReport:
    """Data-4 (five t3 clusters) over the size of the fifth cluster."""
    return _sweep("n5", list(n5_values), lambda n5: GeneratorSpec("data4", (500, 500, 500, 500, int(n5))),
                  lambda _: tuple(criteria), runs, master_seed, settings, workers, k_true=5,
                  extra_config={"protocol": "heterogeneity", "criteria": list(criteria)})


OLD_FAITHFUL_MODES = ("clean", "single", "sweep")


def replay_old_faithful(path, outlier_mode: str = "clean", runs: int = 50, master_seed: int = 0,
                        alphas=(0.01, 0.02, 0.05, 0.10), criteria: Sequence[str] = CRITERIA,
                        settings: FitSettings = FitSettings(),
                        workers: Optional[int] = None) -> SweepReport:
    """Standardized Old Faithful data (K = 2), clean or with replacement outliers
    drawn uniformly from [-20, 20]^2."""
    if outlier_mode not in OLD_FAITHFUL_MODES:
        raise InvalidArgumentError(f"outlier_mode must be one of {OLD_FAITHFUL_MODES}")
    base = load_csv(path, standardize=True)
    if outlier_mode == "sweep":
        values, make = list(alphas), lambda a: GeneratorSpec("custom", outlier_fraction=a, base=base)
    else:
        count = 0 if outlier_mode == "clean" else 1
        values, make = [count], lambda c: GeneratorSpec("custom", outlier_count=int(c), base=base)
    return _sweep("outliers" if outlier_mode != "sweep" else "alpha", values, make,
                  lambda _: tuple(criteria), runs, master_seed, settings, workers, k_true=2,
                  extra_config={"protocol": "oldfaithful", "mode": outlier_mode,
                                "path": str(path), "criteria": list(criteria)})
