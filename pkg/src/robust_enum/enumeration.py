"""Two-step cluster enumeration: fit every candidate, score it, take the argmax."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union

from .criteria import CRITERIA, CriterionScore, check_ft_dimension, score
from .em import EmConfig, FitResult, MixtureModel, Partition, _points, fit_mixture
from .errors import EnumerationFailure, InvalidArgumentError, RobustEnumError
from .rng import make_rng

DEFAULT_NU = 3.0
# the Gaussian criterion fits t mixtures in their Gaussian limit
GAUSSIAN_NU = 1e6


def default_nu(criterion: str) -> float:
    return GAUSSIAN_NU if criterion == "bic_n" else DEFAULT_NU


@dataclass(frozen=True)
class EnumerationConfig:
    l_max: int
    l_min: int = 1
    nu: Optional[float] = None
    criterion: str = "bic_t"
    em_config: EmConfig = field(default_factory=EmConfig)
    restarts: int = 3

    def __post_init__(self):
        if not 1 <= self.l_min <= self.l_max:
            raise InvalidArgumentError("need 1 <= l_min <= l_max")
        if self.criterion not in CRITERIA:
            raise InvalidArgumentError(f"unknown criterion {self.criterion!r}")
        if self.restarts < 1:
            raise InvalidArgumentError("restarts must be positive")
        if self.nu is not None and not self.nu > 0:
            raise InvalidArgumentError("nu must be positive")

    @property
    def resolved_nu(self) -> float:
        return self.nu if self.nu is not None else default_nu(self.criterion)


@dataclass(frozen=True, eq=False)
class EnumerationResult:
    k_hat: int
    scores: list
    best_model: MixtureModel
    best_partition: Partition
    fits: dict = field(default_factory=dict, repr=False)


def fit_candidate(data, l: int, nu: float, em_config: EmConfig, restarts: int) -> FitResult:
    """Best of ``restarts`` EM fits by final log-likelihood (earliest restart on ties).

    Restart ``i`` draws its initialization from the stream keyed by
    ``(em_config.seed, l, i)``. Raises the last fitting error if no restart
    succeeds.
    """
    best, error = None, None
    for i in range(restarts):
        try:
            fit = fit_mixture(data, l, nu, em_config, rng=make_rng(em_config.seed, l, i))
        except RobustEnumError as exc:
            error = exc
            continue
        if best is None or fit.loglik > best.loglik:
            best = fit
    if best is None:
        raise error
    return best


def fit_candidates(data, l_values: Iterable[int], nu: float, em_config: EmConfig = EmConfig(),
                   restarts: int = 3) -> dict:
    """Map each ``l`` to its best :class:`FitResult`, or to the exception that stopped it."""
    out: dict[int, Union[FitResult, RobustEnumError]] = {}
    for l in l_values:
        try:
            out[l] = fit_candidate(data, l, nu, em_config, restarts)
        except RobustEnumError as exc:
            out[l] = exc
    return out


def score_fits(fits: dict, criterion: str, data) -> list:
    scores = []
    for l, fit in sorted(fits.items()):
        if isinstance(fit, Exception):
            scores.append(CriterionScore.invalid(l, f"fit failed: {fit}"))
        else:
            scores.append(score(criterion, fit.partition, fit.model, data))
    return scores


def select_k(scores) -> int:
    """Candidate with the largest valid total; the smaller ``l`` wins ties."""
    valid = [s for s in scores if s.valid]
    if not valid:
        raise EnumerationFailure("no candidate model produced a valid score")
    best = valid[0]
    for s in valid[1:]:
        if s.total > best.total or (s.total == best.total and s.candidate_l < best.candidate_l):
            best = s
    return best.candidate_l


def enumerate_clusters(data, config: EnumerationConfig) -> EnumerationResult:
    """Estimate the number of clusters in ``data``.

    Every ``l`` in ``[l_min, l_max]`` is fitted and scored with
    ``config.criterion``; candidates whose fit or score fails are kept in
    ``scores`` as invalid and skipped by the argmax.
    """
    if config.criterion == "bic_ft":
        check_ft_dimension(_points(data).shape[1])
    fits = fit_candidates(
        data, range(config.l_min, config.l_max + 1), config.resolved_nu, config.em_config, config.restarts
    )
    scores = score_fits(fits, config.criterion, data)
    failures = "; ".join(f"l={s.candidate_l}: {s.reason}" for s in scores if not s.valid)
    try:
        k_hat = select_k(scores)
    except EnumerationFailure as exc:
        raise EnumerationFailure(f"{exc} ({failures})") from None
    best = fits[k_hat]
    return EnumerationResult(k_hat, scores, best.model, best.partition, fits)


def with_seed(config: EnumerationConfig, seed: int) -> EnumerationConfig:
    return replace(config, em_config=replace(config.em_config, seed=seed))
