#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Exact and empirical distances between point process laws, identity checks and certificates."""
import logging
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from core.models import BoundedMetric, PointPattern, RngStream, Window, as_generator
from core.reports import BoundReport, Certificate, EmpiricalDistance, IdentityReport
from core.space import d1_distance
from literals import (
    BOOTSTRAP_RESAMPLES,
    CERTIFICATE_SE_MULTIPLIER,
    MIN_COUNT_SAMPLES,
    POISSON_TAIL_MASS,
    Direction,
    Metric,
    Verdict,
)
from managers.simulation import sample_poisson
from managers.thinning import ThinningLaw

logger = logging.getLogger(__name__)

LAW_TOLERANCE = 1e-9


class SupportMismatchError(Exception):
    """Generic exception for when two finite laws live on different outcome spaces."""

    pass


class ConfigMismatchError(Exception):
    """Generic exception for when a bound is certified against another configuration."""

    pass


@dataclass(frozen=True, eq=False)
class CountLaw:
    """Law of a non-negative integer count, truncated with `tail_mass` beyond the last entry."""

    probabilities: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        probabilities = np.asarray(self.probabilities, dtype=np.float64).reshape(-1)
        if np.any(probabilities < 0) or self.tail_mass < 0:
            raise ValueError("Count probabilities must be non-negative")

        total = probabilities.sum() + self.tail_mass
        if abs(total - 1) > LAW_TOLERANCE:
            raise ValueError(f"Count law sums to {total}, not 1")

        probabilities.setflags(write=False)
        object.__setattr__(self, "probabilities", probabilities)

    @classmethod
    def poisson(cls, mean: float, tail: float = POISSON_TAIL_MASS) -> "CountLaw":
        """Poisson(mean) truncated where the remaining tail mass drops below `tail`."""
        if mean < 0:
            raise ValueError(f"Poisson mean must be non-negative, got {mean}")

        if mean == 0:
            return cls(probabilities=np.ones(1))

        last = int(stats.poisson.isf(tail, mean)) + 1
        return cls(
            probabilities=stats.poisson.pmf(np.arange(last + 1), mean),
            tail_mass=float(stats.poisson.sf(last, mean)),
        )

    @classmethod
    def empirical(cls, counts: np.ndarray) -> "CountLaw":
        """Relative frequencies of observed counts."""
        counts = np.asarray(counts)
        if not len(counts):
            raise ValueError("Empirical count law needs at least one sample")

        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("Counts must be non-negative integers")

        return cls(probabilities=np.bincount(counts.astype(np.int64)) / len(counts))

    @property
    def support_size(self) -> int:
        """Number of explicitly stored counts 0..k."""
        return len(self.probabilities)

    @property
    def mean(self) -> float:
        """Mean of the explicitly stored part."""
        return float(np.dot(np.arange(self.support_size), self.probabilities))

    def padded(self, size: int) -> np.ndarray:
        """Probabilities of counts 0..size-1."""
        padded = np.zeros(max(size, self.support_size))
        padded[: self.support_size] = self.probabilities
        return padded


FiniteLaw = CountLaw | np.ndarray | Mapping


def _as_array(law: np.ndarray) -> np.ndarray:
    law = np.asarray(law, dtype=np.float64)
    if np.any(law < 0) or abs(law.sum() - 1) > LAW_TOLERANCE:
        raise ValueError("Finite laws must be non-negative and sum to 1")

    return law


def tv_exact_small(p: FiniteLaw, q: FiniteLaw) -> float:
    """Half the L1 distance between two laws on a common finite outcome space.

    Count laws are compared on 0..k with zero padding; their truncated tails add the
    smallest difference they can carry. Mappings compare on the union of their keys.

    Raises:
        SupportMismatchError: for arrays of different shapes or mixed law kinds
    """
    if isinstance(p, CountLaw) and isinstance(q, CountLaw):
        size = max(p.support_size, q.support_size)
        distance = np.abs(p.padded(size) - q.padded(size)).sum() + abs(p.tail_mass - q.tail_mass)
        return float(min(1.0, 0.5 * distance))

    if isinstance(p, Mapping) and isinstance(q, Mapping):
        keys = sorted(set(p) | set(q), key=repr)
        p = np.array([p.get(k, 0.0) for k in keys], dtype=np.float64)
        q = np.array([q.get(k, 0.0) for k in keys], dtype=np.float64)

    elif isinstance(p, (CountLaw, Mapping)) or isinstance(q, (CountLaw, Mapping)):
        raise SupportMismatchError(
            f"Cannot compare a {type(p).__name__} with a {type(q).__name__}"
        )

    p, q = _as_array(p), _as_array(q)
    if p.shape != q.shape:
        raise SupportMismatchError(f"Outcome spaces differ: shapes {p.shape} and {q.shape}")

    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


def exact_subset_tv(law_a: ThinningLaw, law_b: ThinningLaw) -> float:
    """Exact TV between two enumerated thinning laws of the same parent pattern.

    Raises:
        SupportMismatchError: when the parents differ
    """
    if law_a.parent != law_b.parent:
        raise SupportMismatchError("Thinning laws of different parent patterns")

    return tv_exact_small(law_a.probabilities, law_b.probabilities)


def poisson_count_tv(first: float, second: float) -> float:
    """Exact TV between Poisson(first) and Poisson(second) count laws, by series."""
    return tv_exact_small(CountLaw.poisson(first), CountLaw.poisson(second))


def tv_counts_lower(
    counts: np.ndarray,
    poisson_mean: float,
    rng: np.random.Generator | RngStream,
    resamples: int = BOOTSTRAP_RESAMPLES,
) -> EmpiricalDistance:
    """TV between the empirical law of |ξ_π| and Poisson(|μ|), with a bootstrap standard error.

    By data processing under the count projection this is a lower bound certificate for
    the TV distance between the full point process laws.
    """
    counts = np.asarray(counts)
    if len(counts) < MIN_COUNT_SAMPLES:
        raise ValueError(
            f"Count TV needs at least {MIN_COUNT_SAMPLES} samples, got {len(counts)}"
        )

    rng = as_generator(rng)
    empirical = CountLaw.empirical(counts)
    reference = CountLaw.poisson(poisson_mean)
    value = tv_exact_small(empirical, reference)

    draws = rng.multinomial(len(counts), empirical.probabilities, size=resamples) / len(counts)
    size = max(empirical.support_size, reference.support_size)
    target = reference.padded(size)
    padded = np.zeros((resamples, size))
    padded[:, : empirical.support_size] = draws
    bootstrap = np.minimum(1.0, 0.5 * (np.abs(padded - target).sum(axis=1) + reference.tail_mass))

    return EmpiricalDistance(
        value=value,
        stderr=float(bootstrap.std(ddof=1)),
        direction=Direction.LOWER_BOUND,
        metric=Metric.TV,
        samples=len(counts),
    )


def d2_lower_witness(
    samples_p: list[PointPattern],
    samples_q: list[PointPattern],
    anchor: PointPattern,
    metric: BoundedMetric | None = None,
) -> EmpiricalDistance:
    """|E_P f - E_Q f| for the 1-Lipschitz witness f = d1(·, anchor).

    The anchor must be fixed before the samples are drawn.
    """
    if not samples_p or not samples_q:
        raise ValueError("Witness evaluation needs samples from both laws")

    values_p = np.array([d1_distance(p, anchor, metric) for p in samples_p])
    values_q = np.array([d1_distance(q, anchor, metric) for q in samples_q])

    variance = 0.0
    if len(values_p) > 1:
        variance += values_p.var(ddof=1) / len(values_p)
    if len(values_q) > 1:
        variance += values_q.var(ddof=1) / len(values_q)

    return EmpiricalDistance(
        value=float(abs(values_p.mean() - values_q.mean())),
        stderr=float(math.sqrt(variance)),
        direction=Direction.LOWER_BOUND,
        metric=Metric.D2,
        samples=min(len(values_p), len(values_q)),
    )


class SlivnyakFunction(str, Enum):
    """Catalog of test functions h(x, σ) for the Slivnyak-Mecke identity."""

    CONSTANT = "constant"
    TOTAL_COUNT = "total_count"
    EMPTY_BALL = "empty_ball"


def _isolated_points(pattern: PointPattern, radius: float, metric: BoundedMetric) -> int:
    if len(pattern) < 2:
        return len(pattern)

    distances, _ = cKDTree(pattern.points).query(
        pattern.points, k=2, p=metric.norm.minkowski_p
    )
    return int(np.count_nonzero(distances[:, 1] > radius))


def check_slivnyak_mecke(
    intensity: float,
    window: Window,
    h: SlivnyakFunction,
    replicates: int,
    rng: np.random.Generator | RngStream,
    radius: float | None = None,
    metric: BoundedMetric | None = None,
) -> IdentityReport:
    """E Σ_{x∈η} h(x, η - δ_x) against ∫ E h(x, η) λ dx for a Poisson process η.

    The empty ball function is 1 when σ has no point within `radius` of x; its right-hand
    side is estimated from independent replicates with a uniform location.
    """
    if h is SlivnyakFunction.EMPTY_BALL and (radius is None or radius < 0):
        raise ValueError("The empty ball test function needs a non-negative radius")

    rng = as_generator(rng)
    metric = metric or BoundedMetric()
    mass = intensity * window.volume
    lhs = np.empty(replicates)

    for i in range(replicates):
        pattern = sample_poisson(window, intensity, rng)
        if h is SlivnyakFunction.CONSTANT:
            lhs[i] = len(pattern)
        elif h is SlivnyakFunction.TOTAL_COUNT:
            lhs[i] = len(pattern) * (len(pattern) - 1)
        else:
            lhs[i] = _isolated_points(pattern, radius, metric)

    name = f"slivnyak-mecke {h.value}"
    if h is SlivnyakFunction.CONSTANT:
        return IdentityReport.against_constant(name, lhs, mass)

    if h is SlivnyakFunction.TOTAL_COUNT:
        return IdentityReport.against_constant(name, lhs, mass**2)

    rhs = np.empty(replicates)
    for i in range(replicates):
        pattern = sample_poisson(window, intensity, rng)
        location = window.lower_array + window.side_lengths * rng.random(window.dimension)
        nearby = np.count_nonzero(metric.norm.length(pattern.points - location) <= radius)
        rhs[i] = mass * (nearby == 0)

    return IdentityReport.independent(name, lhs, rhs)


def check_density_normalization(
    density: Callable[[PointPattern], float],
    window: Window,
    replicates: int,
    rng: np.random.Generator | RngStream,
    name: str = "density normalization",
) -> IdentityReport:
    """E_{P1} f(η) = 1 for a density f against the unit rate Poisson law on `window`."""
    rng = as_generator(rng)
    values = np.array([density(sample_poisson(window, 1.0, rng)) for _ in range(replicates)])
    return IdentityReport.against_constant(name, values, 1.0)


@dataclass(frozen=True, eq=False)
class CertificationSamples:
    """Replicated thinned-process observations feeding the empirical lower bounds.

    `counts` are the retained counts |ξ_π| in the bound's window. The witness patterns are
    optional; without them only the TV certificate is issued.
    """

    counts: np.ndarray
    thinned: list[PointPattern] = field(default_factory=list)
    reference: list[PointPattern] = field(default_factory=list)
    anchor: PointPattern | None = None
    metric: BoundedMetric | None = None


@dataclass(frozen=True)
class CertificationResult:
    """Certificates for one bound with the empirical distances behind them."""

    certificates: list[Certificate]
    distances: list[EmpiricalDistance]

    @property
    def verdict(self) -> Verdict:
        """FAIL if any certificate fails, PASS if all pass, otherwise uninformative."""
        levels = [c.level for c in self.certificates]
        if Verdict.FAIL in levels:
            return Verdict.FAIL

        if all(level is Verdict.PASS for level in levels):
            return Verdict.PASS

        return Verdict.UNINFORMATIVE


def _judge(config_hash: str, bound: float, estimate: EmpiricalDistance) -> Certificate:
    if bound >= 1:
        verdict = Verdict.UNINFORMATIVE
    elif estimate.value <= bound + CERTIFICATE_SE_MULTIPLIER * estimate.stderr:
        verdict = Verdict.PASS
    else:
        verdict = Verdict.FAIL

    certificate = Certificate(
        config_hash=config_hash,
        metric=estimate.metric,
        bound=bound,
        estimate=estimate.value,
        se=estimate.stderr,
        verdict=verdict.value.label,
    )
    getattr(logger, verdict.value.log_level.lower())(
        f"{estimate.metric.value} certificate {verdict.value.label}: "
        f"estimate {estimate.value:.6g} (se {estimate.stderr:.3g}) against bound {bound:.6g}"
    )

    return certificate


def certify_bound(
    config_hash: str,
    bound: BoundReport,
    samples: CertificationSamples,
    rng: np.random.Generator | RngStream,
    resamples: int = BOOTSTRAP_RESAMPLES,
) -> CertificationResult:
    """Checks every empirical lower bound against the matching bound total.

    The TV total faces the count projection lower bound, the d2 total the witness lower
    bound when witness samples are present.

    Raises:
        ConfigMismatchError: when the bound was produced for another configuration
    """
    if bound.config_hash != config_hash:
        raise ConfigMismatchError(
            f"Bound belongs to config {bound.config_hash or '<none>'}, not {config_hash}"
        )

    distances = [tv_counts_lower(samples.counts, bound.total_mass, rng, resamples=resamples)]
    if samples.thinned and samples.reference and samples.anchor is not None:
        distances.append(
            d2_lower_witness(samples.thinned, samples.reference, samples.anchor, samples.metric)
        )

    certificates = [
        _judge(config_hash, bound.total(distance.metric), distance) for distance in distances
    ]

    return CertificationResult(certificates=certificates, distances=distances)
