#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import logging
import math

import numpy as np
import pytest

from core.models import BooleanModel, Norm, PointPattern, RadiusLaw, StraussParams, Window
from core.space import HaloError
from managers.simulation import (
    GrainSet,
    StraussSampler,
    close_pairs,
    estimate_intensity,
    estimate_strauss_kappa,
    poisson_density,
    poisson_log_density,
    sample_boolean_model,
    sample_poisson,
    sample_strauss,
    strauss_log_density_unnormalized,
)

logger = logging.getLogger(__name__)


def test_poisson_counts_and_support(rng, unit_square):
    counts = np.array([len(sample_poisson(unit_square, 3.0, rng)) for _ in range(4_000)])
    pattern = sample_poisson(unit_square, 50.0, rng)

    assert abs(counts.mean() - 3.0) < 4 * counts.std(ddof=1) / math.sqrt(len(counts))
    assert np.all(unit_square.contains(pattern.points))
    assert pattern.window == unit_square


def test_poisson_refuses_negative_intensity(rng, unit_square):
    with pytest.raises(ValueError):
        sample_poisson(unit_square, -1.0, rng)


def test_poisson_density_closed_forms(unit_square):
    pattern = PointPattern(points=[[0.1, 0.1], [0.4, 0.2]])

    assert poisson_density(PointPattern.empty(2), 2.0, unit_square) == pytest.approx(math.exp(-1))
    assert poisson_density(pattern, 2.0, unit_square) == pytest.approx(4 * math.exp(-1))
    assert poisson_density(pattern, 1.0, unit_square) == 1.0
    assert poisson_log_density(pattern, 0.0, unit_square) == -math.inf
    assert poisson_density(PointPattern.empty(2), 0.0, unit_square) == pytest.approx(math.e)


def test_boolean_model_needs_halo(rng, unit_square):
    model = BooleanModel(germ_intensity=5.0, radius_law=RadiusLaw.deterministic(0.1))

    with pytest.raises(HaloError):
        sample_boolean_model(model, unit_square, rng)

    with pytest.raises(HaloError):
        sample_boolean_model(model, unit_square.haloed(0.05), rng)


def test_boolean_model_radii_follow_law(rng, unit_square):
    law = RadiusLaw(radii=(0.05, 0.1), probabilities=(0.25, 0.75))
    model = BooleanModel(germ_intensity=500.0, radius_law=law)
    grains = sample_boolean_model(model, unit_square.haloed(0.1), rng)
    share = np.mean(grains.radii == 0.1)

    assert set(np.unique(grains.radii)) <= {0.05, 0.1}
    assert abs(share - 0.75) < 4 * math.sqrt(0.75 * 0.25 / len(grains))
    assert grains.coverage_window == unit_square


def test_grain_coverage_respects_norm(unit_square):
    euclidean = GrainSet(
        centers=np.array([[0.5, 0.5]]),
        radii=np.array([0.1]),
        norm=Norm.EUCLIDEAN,
        coverage_window=unit_square,
    )
    sup = GrainSet(
        centers=np.array([[0.5, 0.5]]),
        radii=np.array([0.1]),
        norm=Norm.SUP,
        coverage_window=unit_square,
    )
    corner = np.array([[0.58, 0.58], [0.5, 0.65]])

    assert euclidean.covered(corner).tolist() == [False, False]
    assert sup.covered(corner).tolist() == [True, False]
    assert not GrainSet(
        centers=np.empty((0, 2)), radii=np.empty(0), norm=Norm.SUP, coverage_window=unit_square
    ).covered(corner).any()


def test_close_pairs_and_log_density(unit_square):
    params = StraussParams(intensity=2.0, interaction=0.5, interaction_range=0.1, window=unit_square)
    pattern = PointPattern(points=[[0.1, 0.1], [0.15, 0.1], [0.19, 0.1], [0.9, 0.9]])

    assert close_pairs(pattern, params) == 3
    assert strauss_log_density_unnormalized(pattern, params) == pytest.approx(
        4 * math.log(2.0) + 3 * math.log(0.5)
    )

    hard_core = StraussParams(intensity=2.0, interaction=0.0, interaction_range=0.1, window=unit_square)
    assert strauss_log_density_unnormalized(pattern, hard_core) == -math.inf


def test_strauss_params_validation(unit_square):
    with pytest.raises(ValueError):
        StraussParams(intensity=1.0, interaction=1.5, interaction_range=0.1, window=unit_square)

    with pytest.raises(ValueError):
        StraussParams(intensity=0.0, interaction=0.5, interaction_range=0.1, window=unit_square)


def test_kappa_without_interaction_is_poisson_constant(rng, unit_square):
    params = StraussParams(intensity=2.0, interaction=1.0, interaction_range=0.1, window=unit_square)
    kappa = estimate_strauss_kappa(params, 10_000, rng)

    assert abs(kappa.value - math.exp(-1)) < 4 * kappa.stderr
    assert not kappa.flagged


def test_kappa_flags_degenerate_variance(rng, unit_square):
    params = StraussParams(intensity=1.0, interaction=1.0, interaction_range=0.1, window=unit_square)
    kappa = estimate_strauss_kappa(params, 10_000, rng)

    assert kappa.flagged
    assert kappa.value == pytest.approx(1.0)
    assert kappa.stderr == 0.0


def test_kappa_refuses_few_replicates(rng, unit_square):
    params = StraussParams(intensity=1.0, interaction=0.5, interaction_range=0.1, window=unit_square)

    with pytest.raises(ValueError):
        estimate_strauss_kappa(params, 100, rng)


def test_kappa_refuses_vanishing_weights(rng, unit_square, mocker):
    params = StraussParams(intensity=1.0, interaction=0.0, interaction_range=0.1, window=unit_square)
    mocker.patch("managers.simulation.strauss_log_density_unnormalized", return_value=-math.inf)

    with pytest.raises(ValueError, match="vanished"):
        estimate_strauss_kappa(params, 10_000, rng)


def test_sampler_without_interaction_matches_poisson_mean(rng, unit_square):
    params = StraussParams(intensity=20.0, interaction=1.0, interaction_range=0.1, window=unit_square)
    sampler = StraussSampler(params, rng)
    counts = np.array([len(p) for p in sampler.samples(500, interval=100)])

    assert sampler.burn_in == 200
    assert sampler.interval == 20
    assert abs(counts.mean() - 20.0) < 1.5


def test_hard_core_sampler_never_has_close_pairs(rng, unit_square):
    params = StraussParams(intensity=50.0, interaction=0.0, interaction_range=0.05, window=unit_square)
    sampler = StraussSampler(params, rng)

    for pattern in sampler.samples(50):
        assert close_pairs(pattern, params) == 0


def test_close_pairs_decrease_with_interaction(unit_square):
    means = []
    for gamma in (1.0, 0.5, 0.1):
        params = StraussParams(
            intensity=50.0, interaction=gamma, interaction_range=0.1, window=unit_square
        )
        sampler = StraussSampler(params, np.random.default_rng(31))
        means.append(np.mean([close_pairs(p, params) for p in sampler.samples(200, interval=50)]))

    assert means[0] > means[1] > means[2]


def test_strauss_chain_shorter_than_burn_in(rng, unit_square):
    params = StraussParams(intensity=5.0, interaction=0.5, interaction_range=0.1, window=unit_square)

    with pytest.raises(ValueError):
        sample_strauss(params, 10, rng)

    assert len(sample_strauss(params, 1_000, rng).points.shape) == 2


def test_acceptance_warning(caplog, rng, unit_square):
    params = StraussParams(intensity=5.0, interaction=0.5, interaction_range=0.1, window=unit_square)
    sampler = StraussSampler(params, rng)

    with caplog.at_level(logging.WARNING):
        assert not sampler.check_acceptance()

    assert "acceptance rate" in caplog.text


def test_estimate_intensity_counts_inside_window():
    window = Window.box([0, 0], [1, 2])
    patterns = [
        PointPattern(points=[[0.5, 0.5], [0.5, 1.5], [3.0, 3.0]]),
        PointPattern(points=[[0.2, 0.2], [0.4, 0.4], [0.6, 0.6], [0.8, 0.8]]),
    ]
    estimate = estimate_intensity(patterns, window)

    assert estimate.value == pytest.approx(1.5)
    assert estimate.stderr == pytest.approx(0.5)
    assert estimate.replicates == 2

    with pytest.raises(ValueError):
        estimate_intensity([], window)
