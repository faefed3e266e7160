#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Geometry of norm balls, the matching metric d1, pair counts and contractions."""
import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special
from scipy.spatial import cKDTree

from core.models import BoundedMetric, Norm, PointPattern, Window
from literals import (
    ASSIGNMENT_MAX_POINTS,
    MC_GEOMETRY_SAMPLES,
    MC_GEOMETRY_SEED,
    PAIR_RADIUS_SLACK,
    QUADRATURE_LIMIT,
    QUADRATURE_TOLERANCE,
)

logger = logging.getLogger(__name__)


class HaloError(Exception):
    """Generic exception for when a window lacks the halo a computation relies on."""

    pass


class PatternTooLargeError(Exception):
    """Generic exception for when a pattern exceeds the exact assignment size cap."""

    pass


@dataclass(frozen=True)
class VolumeEstimate:
    """Volume with the standard error of its Monte Carlo estimate (0 when exact)."""

    value: float
    stderr: float = 0.0

    @property
    def exact(self) -> bool:
        """Whether the value came from a closed form."""
        return self.stderr == 0.0


def unit_ball_volume(norm: Norm, dimension: int) -> float:
    """α_D, the volume of the unit ball of `norm` in dimension D."""
    if dimension < 1:
        raise ValueError(f"Dimension must be at least 1, got {dimension}")

    if norm is Norm.SUP:
        return float(2**dimension)

    return float(np.pi ** (dimension / 2) / special.gamma(dimension / 2 + 1))


def ball_volume(norm: Norm, dimension: int, radius: float) -> float:
    """α_D r^D."""
    if radius < 0:
        raise ValueError(f"Radius must be non-negative, got {radius}")

    return unit_ball_volume(norm, dimension) * radius**dimension


def sample_ball(
    norm: Norm, dimension: int, radius: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform draws from the centred ball of `norm`."""
    if norm is Norm.SUP:
        return rng.uniform(-radius, radius, size=(size, dimension))

    directions = rng.standard_normal((size, dimension))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    lengths = radius * rng.random(size) ** (1 / dimension)
    return directions * lengths[:, None]


def ball_volume_mc(
    norm: Norm,
    dimension: int,
    radius: float,
    samples: int = MC_GEOMETRY_SAMPLES,
    rng: np.random.Generator | None = None,
) -> VolumeEstimate:
    """Hit-or-miss estimate of the ball volume against its bounding cube."""
    rng = rng or np.random.default_rng(MC_GEOMETRY_SEED)
    cube = (2 * radius) ** dimension
    hits = norm.length(rng.uniform(-radius, radius, size=(samples, dimension))) <= radius
    share = hits.mean()

    return VolumeEstimate(
        value=float(cube * share), stderr=float(cube * np.sqrt(share * (1 - share) / samples))
    )


def _intersection_closed_form(norm: Norm, dimension: int, y: np.ndarray, r: float) -> float | None:
    distance = float(norm.length(y))
    if distance >= 2 * r:
        return 0.0

    if dimension == 1:
        return 2 * r - distance

    if norm is Norm.SUP:
        return float(np.prod(np.clip(2 * r - np.abs(y), 0.0, None)))

    if dimension == 2:
        return float(
            2 * r**2 * np.arccos(distance / (2 * r))
            - distance / 2 * np.sqrt(4 * r**2 - distance**2)
        )

    if dimension == 3:
        return float(np.pi * (4 * r + distance) * (2 * r - distance) ** 2 / 12)

    return None


def intersection_volume_mc(
    norm: Norm,
    dimension: int,
    y: np.ndarray,
    r: float,
    samples: int = MC_GEOMETRY_SAMPLES,
    rng: np.random.Generator | None = None,
) -> VolumeEstimate:
    """Hit-or-miss estimate of |B(0,r) ∩ B(y,r)| from uniform draws in B(0,r)."""
    rng = rng or np.random.default_rng(MC_GEOMETRY_SEED)
    y = np.asarray(y, dtype=np.float64).reshape(dimension)
    draws = sample_ball(norm, dimension, r, samples, rng)
    share = float(np.mean(norm.length(draws - y) <= r))
    volume = ball_volume(norm, dimension, r)

    return VolumeEstimate(
        value=volume * share, stderr=volume * float(np.sqrt(share * (1 - share) / samples))
    )


def intersection_volume(
    norm: Norm,
    dimension: int,
    y: np.ndarray,
    r: float,
    samples: int = MC_GEOMETRY_SAMPLES,
    rng: np.random.Generator | None = None,
) -> VolumeEstimate:
    """|B(0,r) ∩ B(y,r)|, in closed form where available."""
    if r < 0:
        raise ValueError(f"Radius must be non-negative, got {r}")

    y = np.asarray(y, dtype=np.float64).reshape(dimension)
    if r == 0:
        return VolumeEstimate(value=0.0)

    exact = _intersection_closed_form(norm, dimension, y, r)
    if exact is not None:
        return VolumeEstimate(value=exact)

    logger.debug(f"No closed form for {norm.value} balls in dimension {dimension}, sampling")
    return intersection_volume_mc(norm, dimension, y, r, samples=samples, rng=rng)


def union_ball_volume(
    norm: Norm,
    dimension: int,
    y: np.ndarray,
    r: float,
    samples: int = MC_GEOMETRY_SAMPLES,
    rng: np.random.Generator | None = None,
) -> VolumeEstimate:
    """|B(0,r) ∪ B(y,r)|, clamped to [α_D r^D, 2 α_D r^D]."""
    if r <= 0:
        raise ValueError(f"Radius must be positive, got {r}")

    single = ball_volume(norm, dimension, r)
    overlap = intersection_volume(norm, dimension, y, r, samples=samples, rng=rng)
    value = float(np.clip(2 * single - overlap.value, single, 2 * single))

    return VolumeEstimate(value=value, stderr=overlap.stderr)


def integrate_ball(
    func: Callable[[np.ndarray], float],
    outer: float,
    dimension: int,
    norm: Norm,
    inner: float = 0.0,
) -> float:
    """Integral of `func` over the shell B(0, outer) minus B(0, inner).

    `func` must be invariant under coordinate sign flips, and under rotations for the
    Euclidean norm, in which case it is only evaluated along the first axis.
    """
    if outer <= inner:
        return 0.0

    if norm is Norm.EUCLIDEAN or dimension == 1:
        surface = dimension * unit_ball_volume(norm, dimension)
        axis = np.eye(dimension)[0]

        value, _ = integrate.quad(
            lambda rho: func(rho * axis) * surface * rho ** (dimension - 1),
            inner,
            outer,
            epsabs=0.0,
            epsrel=QUADRATURE_TOLERANCE,
            limit=QUADRATURE_LIMIT,
        )
        return float(value)

    if dimension <= 3:

        def _orthant(radius: float) -> float:
            if radius <= 0:
                return 0.0
            value, _ = integrate.nquad(
                lambda *y: func(np.array(y)),
                [(0.0, radius)] * dimension,
                opts={"epsabs": 0.0, "epsrel": QUADRATURE_TOLERANCE, "limit": QUADRATURE_LIMIT},
            )
            return float(value)

        return 2**dimension * (_orthant(outer) - _orthant(inner))

    logger.debug(f"Sampling sup-norm shell integral in dimension {dimension}")
    rng = np.random.default_rng(MC_GEOMETRY_SEED)
    draws = rng.uniform(-outer, outer, size=(MC_GEOMETRY_SAMPLES, dimension))
    draws = draws[norm.length(draws) > inner]
    values = np.array([func(y) for y in draws])

    return float((2 * outer) ** dimension * values.sum() / MC_GEOMETRY_SAMPLES)


def d1_distance(
    first: PointPattern,
    second: PointPattern,
    metric: BoundedMetric | None = None,
    max_points: int = ASSIGNMENT_MAX_POINTS,
) -> float:
    """Mean capped matching cost between equal-size patterns, 1 across different sizes.

    Raises:
        PatternTooLargeError: when the patterns exceed `max_points`
    """
    metric = metric or BoundedMetric()
    if len(first) != len(second):
        return 1.0

    if not len(first):
        return 0.0

    if len(first) > max_points:
        raise PatternTooLargeError(
            f"Exact assignment refused for {len(first)} points, limit is {max_points}"
        )

    cost = metric.pairwise(first.points, second.points)
    rows, cols = optimize.linear_sum_assignment(cost)

    return float(cost[rows, cols].sum() / len(first))


def pair_count(pattern: PointPattern, r_bar: float, norm: Norm = Norm.EUCLIDEAN) -> int:
    """Number of ordered pairs (i != j) at distance at most `r_bar`.

    Tree candidates are gathered with a slightly widened radius, then decided on squared
    Euclidean lengths or sup-norm coordinates so that pairs at exactly `r_bar` count.
    """
    if r_bar < 0:
        raise ValueError(f"Pair distance must be non-negative, got {r_bar}")

    if len(pattern) < 2:
        return 0

    tree = cKDTree(pattern.points)
    candidates = tree.query_pairs(
        r_bar * (1 + PAIR_RADIUS_SLACK) + PAIR_RADIUS_SLACK,
        p=norm.minkowski_p,
        output_type="ndarray",
    )
    if not len(candidates):
        return 0

    gaps = pattern.points[candidates[:, 0]] - pattern.points[candidates[:, 1]]
    if norm is Norm.EUCLIDEAN:
        within = np.sum(gaps**2, axis=1) <= r_bar**2
    else:
        within = np.max(np.abs(gaps), axis=1) <= r_bar

    return 2 * int(np.count_nonzero(within))


def neighbour_counts(points: np.ndarray, location: np.ndarray, r: float, norm: Norm) -> int:
    """Number of rows of `points` within distance `r` of `location`."""
    if not len(points):
        return 0

    return int(np.count_nonzero(norm.length(points - location) <= r))


def contract(pattern: PointPattern, factor: float) -> PointPattern:
    """Image of the pattern, and of its window, under x -> x / T."""
    if factor < 1:
        raise ValueError(f"Contraction factor must be at least 1, got {factor}")

    window = pattern.window.scaled(factor) if pattern.window else None
    return PointPattern(points=pattern.points / factor, window=window)


def require_halo(window: Window | None, radius: float, purpose: str) -> Window:
    """Returns the inner window of a halo window at least `radius` wide.

    Raises:
        HaloError: when `window` is not recorded as a wide enough halo
    """
    if not window or not window.halo_of:
        raise HaloError(f"{purpose} needs a haloed sampling window")

    inner = window.halo_of.inner
    if not window.covers_halo(inner, radius):
        raise HaloError(
            f"{purpose} needs a halo of at least {radius}, got {window.halo_of.radius}"
        )

    return inner
