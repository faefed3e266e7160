#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Second-order and nearest-neighbour summaries, capacity functional and overlap function."""
import logging
import math
from collections.abc import Sequence

import numpy as np
from scipy.spatial import cKDTree

from core.models import BooleanModel, Norm, PointPattern, Window
from core.reports import SummaryEstimate
from core.space import ball_volume, intersection_volume, require_halo, union_ball_volume
from literals import G2_TOLERANCE

logger = logging.getLogger(__name__)


def _common_inner_window(patterns: list[PointPattern], radius: float, purpose: str) -> Window:
    if not patterns:
        raise ValueError(f"{purpose} needs at least one pattern")

    inner = require_halo(patterns[0].window, radius, purpose)
    if any(p.window != patterns[0].window for p in patterns[1:]):
        raise ValueError(f"{purpose} needs every replicate on the same sampling window")

    return inner


def _mean_and_stderr(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(samples) < 2:
        return samples.mean(axis=0), np.zeros(samples.shape[1])

    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(len(samples))


def _ratio_and_stderr(
    numerators: np.ndarray, denominators: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Pooled ratio Σa/Σb over replicates with its delta method standard error."""
    total = denominators.sum()
    ratio = numerators.sum(axis=0) / total
    count = len(denominators)
    if count < 2:
        return ratio, np.zeros_like(ratio)

    residuals = numerators - ratio[None, :] * denominators[:, None]
    variance = np.sum(residuals**2, axis=0) / (count * (count - 1))

    return ratio, np.sqrt(variance) / (total / count)


def estimate_K(
    patterns: list[PointPattern],
    m1: float,
    r_grid: Sequence[float],
    norm: Norm = Norm.EUCLIDEAN,
) -> SummaryEstimate:
    """Ripley's K from replicated patterns sampled on a haloed window.

    Ordered pairs are counted with their first point in the inner window and normalized by
    the known intensity.
    """
    if m1 <= 0:
        raise ValueError(f"K estimation needs a positive intensity, got {m1}")

    grid = np.sort(np.asarray(r_grid, dtype=np.float64))
    inner = _common_inner_window(patterns, float(grid.max()), "K estimation")
    samples = np.zeros((len(patterns), len(grid)))

    for i, pattern in enumerate(patterns):
        centres = pattern.points[inner.contains(pattern.points)]
        if not len(centres):
            continue
        counts = cKDTree(centres).count_neighbors(
            cKDTree(pattern.points), grid, p=norm.minkowski_p
        )
        samples[i] = (np.asarray(counts) - len(centres)) / (m1**2 * inner.volume)

    values, stderr = _mean_and_stderr(samples)
    return SummaryEstimate(
        statistic="K",
        r=grid.tolist(),
        values=values.tolist(),
        stderr=stderr.tolist(),
        replicates=len(patterns),
    )


def estimate_G(
    patterns: list[PointPattern], r_grid: Sequence[float], norm: Norm = Norm.EUCLIDEAN
) -> SummaryEstimate:
    """Share of inner-window points whose nearest neighbour lies within r, pooled over replicates."""
    grid = np.sort(np.asarray(r_grid, dtype=np.float64))
    inner = _common_inner_window(patterns, float(grid.max()), "G estimation")
    hits = np.zeros((len(patterns), len(grid)))
    totals = np.zeros(len(patterns))

    for i, pattern in enumerate(patterns):
        inside = inner.contains(pattern.points)
        totals[i] = np.count_nonzero(inside)
        if not totals[i]:
            continue
        distances, _ = cKDTree(pattern.points).query(
            pattern.points[inside], k=2, p=norm.minkowski_p
        )
        hits[i] = np.count_nonzero(distances[:, 1][:, None] <= grid[None, :], axis=0)

    if not totals.sum():
        logger.warning("No points in the inner window of any replicate, G is undefined")
        return SummaryEstimate(
            statistic="G",
            r=grid.tolist(),
            values=[math.nan] * len(grid),
            stderr=[math.nan] * len(grid),
            replicates=len(patterns),
            flagged=True,
            note="no points in the inner window",
        )

    values, stderr = _ratio_and_stderr(hits, totals)
    return SummaryEstimate(
        statistic="G",
        r=grid.tolist(),
        values=values.tolist(),
        stderr=stderr.tolist(),
        replicates=len(patterns),
    )


def _occupied_pairs(
    pattern: PointPattern,
    inner: Window,
    y: np.ndarray,
    tolerance: float,
    grid: np.ndarray,
    norm: Norm,
    isotropic: bool,
) -> tuple[np.ndarray, int]:
    tree = cKDTree(pattern.points)
    occupied = np.zeros(len(grid))
    qualifying = 0
    distance = float(norm.length(y))

    for first in np.flatnonzero(inner.contains(pattern.points)):
        origin = pattern.points[first]
        if isotropic:
            candidates = [
                j
                for j in tree.query_ball_point(origin, distance + tolerance, p=norm.minkowski_p)
                if norm.length(pattern.points[j] - origin) >= distance - tolerance
            ]
        else:
            candidates = tree.query_ball_point(origin + y, tolerance, p=norm.minkowski_p)

        for second in candidates:
            if second == first:
                continue
            qualifying += 1
            for k, r in enumerate(grid):
                union = set(tree.query_ball_point(origin, r, p=norm.minkowski_p))
                union.update(tree.query_ball_point(pattern.points[second], r, p=norm.minkowski_p))
                occupied[k] += bool(union - {first, second})

    return occupied, qualifying


def estimate_G2(
    patterns: list[PointPattern],
    y: np.ndarray,
    r: float | Sequence[float],
    norm: Norm = Norm.EUCLIDEAN,
    tolerance: float = G2_TOLERANCE,
    isotropic: bool = False,
) -> SummaryEstimate:
    """Two-point nearest neighbour function at displacement `y`.

    Pairs qualify when their displacement lies within `tolerance`·||y|| of `y`, or, for
    `isotropic` processes, when its length lies within that tolerance of ||y||. The
    estimate is the share of qualifying pairs with a further point in the union of the
    two r-balls.
    """
    y = np.asarray(y, dtype=np.float64)
    distance = float(norm.length(y))
    if distance <= 0:
        raise ValueError("G2 estimation needs a non-zero displacement")

    grid = np.sort(np.atleast_1d(np.asarray(r, dtype=np.float64)))
    delta = tolerance * distance
    inner = _common_inner_window(
        patterns, float(grid.max()) + distance + delta, "G2 estimation"
    )

    occupied = np.zeros((len(patterns), len(grid)))
    qualifying = np.zeros(len(patterns))
    for i, pattern in enumerate(patterns):
        occupied[i], qualifying[i] = _occupied_pairs(
            pattern, inner, y, delta, grid, norm, isotropic
        )

    note = f"tolerance {delta:.6g}, bin occupancy {int(qualifying.sum())}"
    if not qualifying.sum():
        logger.warning(f"No pairs near displacement {y.tolist()}, G2 is undefined ({note})")
        return SummaryEstimate(
            statistic="G2",
            r=grid.tolist(),
            values=[math.nan] * len(grid),
            stderr=[math.nan] * len(grid),
            replicates=len(patterns),
            flagged=True,
            note=note,
        )

    values, stderr = _ratio_and_stderr(occupied, qualifying)
    return SummaryEstimate(
        statistic="G2",
        r=grid.tolist(),
        values=values.tolist(),
        stderr=stderr.tolist(),
        replicates=len(patterns),
        note=note,
    )


def mean_union_volume(model: BooleanModel, dimension: int, y: np.ndarray) -> float:
    """E|B(0,R) ∪ B(y,R)| over the radius law."""
    return float(
        sum(
            p * union_ball_volume(model.norm, dimension, y, radius).value
            for radius, p in model.radius_law.atoms
            if radius > 0
        )
    )


def capacity_functional(model: BooleanModel, points: np.ndarray) -> float:
    """Hitting probability of a singleton or a pair of points."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dimension = points.shape[1]

    if len(points) == 1:
        volume = ball_volume(model.norm, dimension, 1.0) * model.radius_law.moment(dimension)
    elif len(points) == 2:
        volume = mean_union_volume(model, dimension, points[1] - points[0])
    else:
        raise ValueError(f"Capacity functional takes one or two points, got {len(points)}")

    return float(-np.expm1(-model.germ_intensity * volume))


def b_function(model: BooleanModel, y: np.ndarray) -> float:
    """b(y) = E|B(0,R) minus B(y,R)| / E|B(0,R)|."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    dimension = len(y)
    moment = model.radius_law.moment(dimension)
    if moment <= 0:
        raise ValueError("The overlap function needs E(R^D) > 0")

    unit = ball_volume(model.norm, dimension, 1.0)
    overlap = sum(
        p * intersection_volume(model.norm, dimension, y, radius).value
        for radius, p in model.radius_law.atoms
    )

    return float(np.clip(1 - overlap / (unit * moment), 0.0, 1.0))
