#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Samplers and densities for Poisson, Boolean and Strauss processes."""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from core.models import (
    BooleanModel,
    Norm,
    PointPattern,
    RngStream,
    StraussParams,
    Window,
    as_generator,
)
from core.reports import MonteCarloEstimate
from core.space import neighbour_counts, pair_count, require_halo
from literals import (
    ACCEPTANCE_RANGE,
    BURN_IN_FACTOR,
    MIN_BURN_IN_STEPS,
    MIN_KAPPA_REPLICATES,
)

logger = logging.getLogger(__name__)


def sample_poisson(
    window: Window, intensity: float, rng: np.random.Generator | RngStream
) -> PointPattern:
    """Homogeneous Poisson pattern on `window`."""
    if intensity < 0:
        raise ValueError(f"Intensity must be non-negative, got {intensity}")

    rng = as_generator(rng)
    count = rng.poisson(intensity * window.volume)
    points = window.lower_array + window.side_lengths * rng.random((count, window.dimension))

    return PointPattern(points=points, window=window)


def poisson_log_density(pattern: PointPattern, intensity: float, window: Window) -> float:
    """Log density of Po(a Leb) against the unit rate Poisson law on `window`."""
    if intensity < 0:
        raise ValueError(f"Intensity must be non-negative, got {intensity}")

    if intensity == 0:
        return window.volume if not len(pattern) else -math.inf

    return (1 - intensity) * window.volume + len(pattern) * math.log(intensity)


def poisson_density(pattern: PointPattern, intensity: float, window: Window) -> float:
    """e^{(1-a) vol} a^|ϱ|."""
    return math.exp(poisson_log_density(pattern, intensity, window))


@dataclass(frozen=True, eq=False)
class GrainSet:
    """Realized grains of a Boolean model, exact for coverage queries in `coverage_window`."""

    centers: np.ndarray
    radii: np.ndarray
    norm: Norm
    coverage_window: Window

    def __len__(self) -> int:
        """Number of grains."""
        return len(self.radii)

    def covered(self, points: np.ndarray) -> np.ndarray:
        """Mask of points falling into the union of grains."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, self.coverage_window.dimension)
        mask = np.zeros(len(points), dtype=bool)
        if not len(points) or not len(self):
            return mask

        for radius in np.unique(self.radii):
            tree = cKDTree(self.centers[self.radii == radius])
            distances, _ = tree.query(points, k=1, p=self.norm.minkowski_p)
            mask |= distances <= radius

        return mask


def sample_boolean_model(
    model: BooleanModel, region: Window, rng: np.random.Generator | RngStream
) -> GrainSet:
    """Draws germs on a haloed region and i.i.d. radii from the radius law.

    Raises:
        HaloError: when `region` is not the halo of a window by at least the radius supremum
    """
    inner = require_halo(region, model.radius_law.sup, "Boolean model sampling")
    rng = as_generator(rng)

    germs = sample_poisson(region, model.germ_intensity, rng)
    atoms = model.radius_law.atoms
    choice = rng.choice(len(atoms), size=len(germs), p=[p for _, p in atoms])
    radii = np.array([r for r, _ in atoms], dtype=np.float64)[choice]

    return GrainSet(centers=germs.points, radii=radii, norm=model.norm, coverage_window=inner)


def close_pairs(pattern: PointPattern, params: StraussParams) -> int:
    """c(ϱ), the number of unordered pairs within the interaction range."""
    return pair_count(pattern, params.interaction_range, params.norm) // 2


def strauss_log_density_unnormalized(pattern: PointPattern, params: StraussParams) -> float:
    """|ϱ| log λ + c(ϱ) log γ."""
    pairs = close_pairs(pattern, params)
    log_density = len(pattern) * math.log(params.intensity)
    if not pairs:
        return log_density

    if params.hard_core:
        return -math.inf

    return log_density + pairs * math.log(params.interaction)


def estimate_strauss_kappa(
    params: StraussParams,
    replicates: int,
    rng: np.random.Generator | RngStream,
) -> MonteCarloEstimate:
    """κ̂ as the reciprocal Monte Carlo mean of the unnormalized density under P1.

    The standard error follows from the delta method. A zero sample variance is flagged.
    """
    if replicates < MIN_KAPPA_REPLICATES:
        raise ValueError(
            f"Normalizing constant estimation needs at least {MIN_KAPPA_REPLICATES} replicates, got {replicates}"
        )

    rng = as_generator(rng)
    log_weights = np.array(
        [
            strauss_log_density_unnormalized(sample_poisson(params.window, 1.0, rng), params)
            for _ in range(replicates)
        ]
    )

    shift = log_weights.max()
    if not np.isfinite(shift):
        raise ValueError(f"Every unnormalized density weight vanished while estimating κ for {params}")

    scaled = np.exp(log_weights - shift)
    mean = scaled.mean()
    spread = scaled.std(ddof=1)

    flagged = bool(spread == 0)
    if flagged:
        logger.warning(f"Degenerate weight variance while estimating κ for {params}")

    return MonteCarloEstimate(
        value=float(math.exp(-shift) / mean),
        stderr=float(math.exp(-shift) * spread / (math.sqrt(replicates) * mean**2)),
        replicates=replicates,
        flagged=flagged,
        note="degenerate variance" if flagged else "",
    )


class StraussSampler:
    """Birth-death Metropolis-Hastings chain targeting a Strauss density."""

    def __init__(
        self,
        params: StraussParams,
        rng: np.random.Generator | RngStream,
        initial: PointPattern | None = None,
    ):
        self.params = params
        self.rng = as_generator(rng)
        dimension = params.window.dimension
        self._points = initial.points.copy() if initial else np.empty((0, dimension))
        self.proposals = 0
        self.accepted = 0

    @property
    def expected_size(self) -> float:
        """λ vol, the scale of the chain's step counts."""
        return self.params.intensity * self.params.window.volume

    @property
    def burn_in(self) -> int:
        """Default number of steps discarded before sampling."""
        return max(MIN_BURN_IN_STEPS, math.ceil(BURN_IN_FACTOR * self.expected_size))

    @property
    def interval(self) -> int:
        """Default number of steps between retained samples."""
        return max(1, math.ceil(self.expected_size))

    @property
    def acceptance_rate(self) -> float:
        """Share of accepted proposals so far."""
        return self.accepted / self.proposals if self.proposals else 0.0

    @property
    def pattern(self) -> PointPattern:
        """The current state."""
        return PointPattern(points=self._points, window=self.params.window)

    def _log_interaction(self, location: np.ndarray, others: np.ndarray) -> float:
        neighbours = neighbour_counts(
            others, location, self.params.interaction_range, self.params.norm
        )
        if not neighbours:
            return 0.0

        if self.params.hard_core:
            return -math.inf

        return neighbours * math.log(self.params.interaction)

    def step(self) -> None:
        """One birth or death proposal, each with probability one half."""
        window = self.params.window
        count = len(self._points)
        self.proposals += 1

        if self.rng.random() < 0.5:
            location = window.lower_array + window.side_lengths * self.rng.random(window.dimension)
            log_ratio = math.log(self.expected_size / (count + 1)) + self._log_interaction(
                location, self._points
            )
            if math.log(self.rng.random()) < log_ratio:
                self._points = np.vstack([self._points, location])
                self.accepted += 1
            return

        if not count:
            return

        index = self.rng.integers(count)
        rest = np.delete(self._points, index, axis=0)
        log_ratio = math.log(count / self.expected_size) - self._log_interaction(
            self._points[index], rest
        )
        if math.log(self.rng.random()) < log_ratio:
            self._points = rest
            self.accepted += 1

    def run(self, steps: int) -> PointPattern:
        """Advances the chain by `steps` proposals."""
        for _ in range(steps):
            self.step()

        return self.pattern

    def samples(
        self, count: int, burn_in: int | None = None, interval: int | None = None
    ) -> list[PointPattern]:
        """`count` thinned draws after a burn-in."""
        self.run(self.burn_in if burn_in is None else burn_in)
        step = self.interval if interval is None else interval

        return [self.run(step) for _ in range(count)]

    def check_acceptance(self) -> bool:
        """Logs a warning when the acceptance rate leaves the healthy range."""
        low, high = ACCEPTANCE_RANGE
        if not low <= self.acceptance_rate <= high:
            logger.warning(
                f"Strauss chain acceptance rate {self.acceptance_rate:.3f} outside [{low}, {high}]"
            )
            return False

        return True


def sample_strauss(
    params: StraussParams, mcmc_steps: int, rng: np.random.Generator | RngStream
) -> PointPattern:
    """Approximate Strauss draw from a single chain of `mcmc_steps` proposals."""
    sampler = StraussSampler(params, rng)
    if mcmc_steps < sampler.burn_in:
        raise ValueError(f"Chain length {mcmc_steps} is shorter than the burn-in {sampler.burn_in}")

    pattern = sampler.run(mcmc_steps)
    sampler.check_acceptance()

    return pattern


def estimate_intensity(patterns: list[PointPattern], window: Window) -> MonteCarloEstimate:
    """Mean number of points per unit volume in `window` across replicates."""
    if not patterns:
        raise ValueError("Intensity estimation needs at least one pattern")

    counts = np.array([np.count_nonzero(window.contains(p.points)) for p in patterns])
    stderr = counts.std(ddof=1) / math.sqrt(len(counts)) if len(counts) > 1 else 0.0

    return MonteCarloEstimate(
        value=float(counts.mean() / window.volume),
        stderr=float(stderr / window.volume),
        replicates=len(patterns),
    )
