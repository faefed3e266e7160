#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import itertools
import logging

import numpy as np
import pytest

from core.models import BoundedMetric, Norm, PointPattern, Window
from core.space import contract, d1_distance
from managers.distances import tv_exact_small
from managers.thinning import MaternRetention, exact_thinning_distribution, thin

logger = logging.getLogger(__name__)

TRIALS = 1_000
THINNING_REPLICATES = 100_000


def _brute_force_d1(first: PointPattern, second: PointPattern, metric: BoundedMetric) -> float:
    if not len(first) and not len(second):
        return 0.0
    if len(first) != len(second):
        return metric.cap

    cost = metric.pairwise(first.points, second.points)
    return min(
        sum(cost[i, j] for i, j in enumerate(perm)) / len(first)
        for perm in itertools.permutations(range(len(first)))
    )


def _empirical_tv(pattern: PointPattern, probabilities: np.ndarray, seed: int) -> float:
    law = exact_thinning_distribution(pattern, probabilities)
    rng = np.random.default_rng(seed)
    outcomes = [thin(pattern, probabilities, rng) for _ in range(THINNING_REPLICATES)]

    return tv_exact_small(law.empirical(outcomes), law.probabilities)


@pytest.mark.slow
@pytest.mark.parametrize("norm", list(Norm))
def test_d1_against_brute_force(norm):
    rng = np.random.default_rng(11)
    metric = BoundedMetric(norm=norm)

    for _ in range(TRIALS):
        n, m = rng.integers(0, 7, size=2)
        if rng.random() < 0.7:
            m = n
        first = PointPattern(points=rng.random((n, 2)) * 2)
        second = PointPattern(points=rng.random((m, 2)) * 2)

        assert d1_distance(first, second, metric) == pytest.approx(
            _brute_force_d1(first, second, metric), abs=1e-9
        )


@pytest.mark.slow
def test_exact_law_against_independent_thinning():
    rng = np.random.default_rng(12)
    pattern = PointPattern(points=rng.random((5, 2)), window=Window.unit(2))
    probabilities = np.array([0.1, 0.35, 0.5, 0.8, 0.95])

    assert _empirical_tv(pattern, probabilities, seed=13) < 0.01


@pytest.mark.slow
def test_exact_law_against_matern_thinning():
    inner = Window.unit(2)
    points = [[0.2, 0.2], [0.25, 0.2], [0.5, 0.5], [0.8, 0.3], [1.05, 0.5]]
    pattern = PointPattern(points=points, window=inner.haloed(0.1))
    field = MaternRetention(radius=0.1, q=0.6, inner=inner)
    probabilities = field.realize(pattern, np.random.default_rng(0))

    # the close pair and the point outside the window are deleted outright
    assert np.count_nonzero(probabilities) == 2
    assert _empirical_tv(pattern, probabilities, seed=14) < 0.01


@pytest.mark.slow
def test_contraction_keeps_counts_and_does_not_expand_d1():
    rng = np.random.default_rng(15)
    window = Window.box([0, 0], [4, 4])

    for _ in range(TRIALS):
        n = int(rng.integers(0, 6))
        first = PointPattern(points=rng.random((n, 2)) * 4, window=window)
        second = PointPattern(points=rng.random((n, 2)) * 4, window=window)
        factor = 1 + 9 * rng.random()
        shrunk_first, shrunk_second = contract(first, factor), contract(second, factor)

        assert len(shrunk_first) == len(first)
        assert np.all(window.scaled(factor).contains(shrunk_first.points))
        assert d1_distance(shrunk_first, shrunk_second) <= d1_distance(first, second) + 1e-12
