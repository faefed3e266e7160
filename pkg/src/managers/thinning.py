#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Retention fields, the thinning operator and exact/Monte Carlo thinned laws."""
import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree
from typing_extensions import override

from core.models import BooleanModel, Norm, PointPattern, RngStream, Window, as_generator
from core.reports import IdentityReport, MonteCarloEstimate
from core.space import HaloError
from literals import BOOLEAN_INNER_REPLICATES, ENUMERATION_MAX_POINTS, MIN_STABLE_REPLICATES
from managers.simulation import GrainSet, sample_boolean_model, sample_poisson

logger = logging.getLogger(__name__)


class EnumerationLimitError(Exception):
    """Generic exception for when subset enumeration would exceed the size cap."""

    pass


class RetentionField(ABC):
    """Base interface for retention fields evaluated on a pattern."""

    deterministic: bool = True

    @abstractmethod
    def probabilities(
        self, points: np.ndarray, window: Window | None, rng: np.random.Generator
    ) -> np.ndarray:
        """Retention probability of every row of `points`.

        Args:
            points: (n, D) array of locations
            window: the window the points were sampled on
            rng: source of any auxiliary randomness
        """
        ...

    def realize(
        self, pattern: PointPattern, rng: np.random.Generator | RngStream
    ) -> np.ndarray:
        """Per-point probabilities for a pattern, in its canonical order."""
        return self.probabilities(pattern.points, pattern.window, as_generator(rng))


@dataclass(frozen=True)
class ConstantRetention(RetentionField):
    """π ≡ p."""

    p: float

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError(f"Retention probability must lie in [0, 1], got {self.p}")

    @override
    def probabilities(
        self, points: np.ndarray, window: Window | None, rng: np.random.Generator
    ) -> np.ndarray:
        return np.full(len(points), self.p)


@dataclass(frozen=True)
class BooleanCoverRetention(RetentionField):
    """π(x) = q I[x not covered], with grains drawn independently of the pattern."""

    model: BooleanModel
    q: float

    deterministic = False

    def __post_init__(self):
        if not 0 <= self.q <= 1:
            raise ValueError(f"Retention probability must lie in [0, 1], got {self.q}")

    def region_for(self, points: np.ndarray, window: Window | None) -> Window:
        """Germ region: the pattern window haloed by the largest grain radius."""
        if window is None:
            if not len(points):
                raise HaloError("Cannot place grains for an empty pattern without a window")
            window = Window.box(points.min(axis=0), points.max(axis=0))

        return window.haloed(self.model.radius_law.sup)

    def given_grains(self, points: np.ndarray, grains: GrainSet) -> np.ndarray:
        """Probabilities for a fixed grain realization."""
        return self.q * ~grains.covered(points)

    @override
    def probabilities(
        self, points: np.ndarray, window: Window | None, rng: np.random.Generator
    ) -> np.ndarray:
        grains = sample_boolean_model(self.model, self.region_for(points, window), rng)
        return self.given_grains(points, grains)


@dataclass(frozen=True)
class MaternRetention(RetentionField):
    """π(x) = q I[x in the inner window, no other point within r]."""

    radius: float
    q: float
    inner: Window
    norm: Norm = Norm.EUCLIDEAN

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"Hard-core radius must be non-negative, got {self.radius}")

        if not 0 <= self.q <= 1:
            raise ValueError(f"Retention probability must lie in [0, 1], got {self.q}")

    @override
    def probabilities(
        self, points: np.ndarray, window: Window | None, rng: np.random.Generator
    ) -> np.ndarray:
        if not window or not window.covers_halo(self.inner, self.radius):
            raise HaloError(
                f"Matérn retention with radius {self.radius} needs points sampled on a window "
                f"covering the halo of {self.inner.as_dict()}"
            )

        if not len(points):
            return np.empty(0)

        if len(points) == 1:
            nearest = np.array([np.inf])
        else:
            distances, _ = cKDTree(points).query(points, k=2, p=self.norm.minkowski_p)
            nearest = distances[:, 1]

        return self.q * (self.inner.contains(points) & (nearest > self.radius))


def realize_retention(
    field: RetentionField, pattern: PointPattern, rng: np.random.Generator | RngStream
) -> np.ndarray:
    """Per-point retention probabilities of `field` on `pattern`."""
    return field.realize(pattern, rng)


@dataclass(frozen=True, eq=False)
class ThinningOutcome:
    """Retained sub-pattern with the per-point decisions that produced it."""

    retained: PointPattern
    parent: PointPattern
    decisions: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        """Parent rows with a 0/1 `retained` column."""
        frame = self.parent.to_frame()
        frame["retained"] = self.decisions.astype(int)
        return frame


def _check_probabilities(pattern: PointPattern, probabilities: np.ndarray) -> np.ndarray:
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.shape != (len(pattern),):
        raise ValueError(
            f"Expected {len(pattern)} retention probabilities, got shape {probabilities.shape}"
        )

    if np.any((probabilities < 0) | (probabilities > 1)):
        raise ValueError("Retention probabilities must lie in [0, 1]")

    return probabilities


def thin(
    pattern: PointPattern, probabilities: np.ndarray, rng: np.random.Generator | RngStream
) -> ThinningOutcome:
    """Independent retention decisions, one uniform draw per point in canonical order."""
    probabilities = _check_probabilities(pattern, probabilities)
    decisions = as_generator(rng).random(len(pattern)) < probabilities

    return ThinningOutcome(
        retained=pattern.subset(decisions), parent=pattern, decisions=decisions
    )


@dataclass(frozen=True, eq=False)
class ThinningLaw:
    """Law of the retained subset; entry k is the probability of the subset encoded by bits of k."""

    parent: PointPattern
    probabilities: np.ndarray

    def subset(self, mask: int) -> tuple[int, ...]:
        """Indices of the points retained in subset number `mask`."""
        return tuple(i for i in range(len(self.parent)) if mask >> i & 1)

    def mask_of(self, indices: tuple[int, ...] | list[int]) -> int:
        """Subset number of a tuple of retained indices."""
        return sum(1 << i for i in set(indices))

    def probability(self, indices: tuple[int, ...] | list[int]) -> float:
        """P[exactly these points are retained]."""
        return float(self.probabilities[self.mask_of(indices)])

    def as_dict(self) -> dict[tuple[int, ...], float]:
        """Subset tuples mapped to their probabilities."""
        return {self.subset(k): float(p) for k, p in enumerate(self.probabilities)}

    def empirical(self, outcomes: list[ThinningOutcome]) -> np.ndarray:
        """Relative frequencies of the subsets in `outcomes`, on the same indexing."""
        weights = 1 << np.arange(len(self.parent))
        masks = np.array([int(np.dot(o.decisions, weights)) for o in outcomes], dtype=np.int64)
        return np.bincount(masks, minlength=len(self.probabilities)) / len(outcomes)


def exact_thinning_distribution(pattern: PointPattern, probabilities: np.ndarray) -> ThinningLaw:
    """Enumerates all 2^n retained subsets in binary counter order.

    Raises:
        EnumerationLimitError: for more than 20 points
    """
    if len(pattern) > ENUMERATION_MAX_POINTS:
        raise EnumerationLimitError(
            f"Subset enumeration refused for {len(pattern)} points, limit is {ENUMERATION_MAX_POINTS}"
        )

    law = np.ones(1)
    for p in _check_probabilities(pattern, probabilities):
        law = np.concatenate([law * (1 - p), law * p])

    return ThinningLaw(parent=pattern, probabilities=law)


def _subset_probability(probabilities: np.ndarray, retained: int) -> float:
    return float(np.prod(probabilities[:retained]) * np.prod(1 - probabilities[retained:]))


def conditional_retention_probability(
    field: RetentionField,
    retained: PointPattern,
    deleted: PointPattern,
    window: Window,
    rng: np.random.Generator,
    inner_replicates: int = BOOLEAN_INNER_REPLICATES,
) -> float:
    """q(ϱ | ϱ + ϱ̃): probability that exactly `retained` survives thinning of both patterns."""
    points = np.vstack([retained.points, deleted.points])
    if field.deterministic:
        return _subset_probability(field.probabilities(points, window, rng), len(retained))

    return float(
        np.mean(
            [
                _subset_probability(field.probabilities(points, window, rng), len(retained))
                for _ in range(inner_replicates)
            ]
        )
    )


def thinned_density_mc(
    pattern: PointPattern,
    base_density: Callable[[PointPattern], float],
    field: RetentionField,
    window: Window,
    replicates: int,
    rng: np.random.Generator | RngStream,
    inner_replicates: int = BOOLEAN_INNER_REPLICATES,
) -> MonteCarloEstimate:
    """Monte Carlo estimate of the thinned density at `pattern`.

    Averages e^{vol} q(ϱ | ϱ + η) f(ϱ + η) over η drawn from the unit rate Poisson law
    on `window`, with f the density of the unthinned process against that law.
    """
    rng = as_generator(rng)
    scale = math.exp(window.volume)
    values = np.empty(replicates)

    for i in range(replicates):
        extra = sample_poisson(window, 1.0, rng)
        union = PointPattern(points=np.vstack([pattern.points, extra.points]), window=window)
        values[i] = (
            scale
            * conditional_retention_probability(
                field, pattern, extra, window, rng, inner_replicates=inner_replicates
            )
            * base_density(union)
        )

    stderr = float(values.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    flagged = replicates < MIN_STABLE_REPLICATES
    if flagged:
        logger.warning(f"Only {replicates} replicates for the thinned density, estimate unstable")

    return MonteCarloEstimate(
        value=float(values.mean()),
        stderr=stderr,
        replicates=replicates,
        flagged=flagged,
        note="too few replicates" if flagged else "",
    )


@dataclass(frozen=True)
class ThinningMomentsReport:
    """First and second factorial moment identities of a thinning."""

    first: IdentityReport
    second: IdentityReport

    def passed(self) -> bool:
        """Whether both identities hold within three standard errors."""
        return self.first.passed() and self.second.passed()


def _ordered_pair_sums(
    points: np.ndarray, weights: np.ndarray, pair_range: float | None, norm: Norm
) -> float:
    if len(points) < 2:
        return 0.0

    if pair_range is None:
        return float(weights.sum() ** 2 - np.sum(weights**2))

    pairs = cKDTree(points).query_pairs(pair_range, p=norm.minkowski_p, output_type="ndarray")
    if not len(pairs):
        return 0.0

    return float(2 * np.sum(weights[pairs[:, 0]] * weights[pairs[:, 1]]))


def check_thinning_moments(
    sampler: Callable[[np.random.Generator], PointPattern],
    field: RetentionField,
    region: Window,
    replicates: int,
    rng: np.random.Generator | RngStream,
    pair_range: float | None = None,
    norm: Norm = Norm.EUCLIDEAN,
) -> ThinningMomentsReport:
    """Compares E ξ_π(A) with E Λ(A), and the second factorial analogues.

    The pair identity runs over ordered pairs in A within `pair_range` (all pairs when None).
    """
    rng = as_generator(rng)
    first_lhs, first_rhs = np.empty(replicates), np.empty(replicates)
    second_lhs, second_rhs = np.empty(replicates), np.empty(replicates)

    for i in range(replicates):
        parent = sampler(rng)
        probabilities = field.realize(parent, rng)
        outcome = thin(parent, probabilities, rng)

        inside = region.contains(parent.points)
        points = parent.points[inside]
        kept = outcome.decisions[inside].astype(np.float64)

        first_lhs[i], first_rhs[i] = kept.sum(), probabilities[inside].sum()
        second_lhs[i] = _ordered_pair_sums(points, kept, pair_range, norm)
        second_rhs[i] = _ordered_pair_sums(points, probabilities[inside], pair_range, norm)

    return ThinningMomentsReport(
        first=IdentityReport.paired("first moment", first_lhs, first_rhs),
        second=IdentityReport.paired("second factorial moment", second_lhs, second_rhs),
    )
