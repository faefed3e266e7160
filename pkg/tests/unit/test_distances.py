#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import logging
import math

import numpy as np
import pytest

from core.models import PointPattern
from literals import Direction, Metric, Verdict
from managers.bounds import assemble_main_bound
from managers.distances import (
    CertificationResult,
    CertificationSamples,
    ConfigMismatchError,
    CountLaw,
    SlivnyakFunction,
    SupportMismatchError,
    certify_bound,
    check_density_normalization,
    check_slivnyak_mecke,
    d2_lower_witness,
    exact_subset_tv,
    poisson_count_tv,
    tv_counts_lower,
    tv_exact_small,
)
from managers.simulation import poisson_density
from managers.thinning import exact_thinning_distribution

logger = logging.getLogger(__name__)


def _bound(total: float, config_hash: str = "abc"):
    return assemble_main_bound(total, 0.0, 0.0, 0.0, total_mass=2.0).copy(
        update={"config_hash": config_hash}
    )


def test_tv_exact_small_arrays():
    assert tv_exact_small(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0
    assert tv_exact_small(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert tv_exact_small(np.array([0.2, 0.8]), np.array([0.5, 0.5])) == pytest.approx(0.3)

    with pytest.raises(SupportMismatchError):
        tv_exact_small(np.array([1.0]), np.array([0.5, 0.5]))

    with pytest.raises(ValueError):
        tv_exact_small(np.array([0.5, 0.6]), np.array([0.5, 0.5]))


def test_tv_exact_small_mappings_and_mixed_kinds():
    assert tv_exact_small({"a": 1.0}, {"a": 0.5, "b": 0.5}) == pytest.approx(0.5)

    with pytest.raises(SupportMismatchError):
        tv_exact_small({"a": 1.0}, np.array([1.0]))

    with pytest.raises(SupportMismatchError):
        tv_exact_small(CountLaw.poisson(1.0), np.array([1.0]))


def test_count_law_construction():
    law = CountLaw.poisson(3.0)

    assert law.probabilities.sum() + law.tail_mass == pytest.approx(1.0)
    assert law.tail_mass < 1e-12
    assert law.mean == pytest.approx(3.0)
    assert CountLaw.poisson(0.0).probabilities.tolist() == [1.0]
    assert CountLaw.empirical(np.array([0, 2, 2, 3])).probabilities.tolist() == [0.25, 0, 0.5, 0.25]

    with pytest.raises(ValueError):
        CountLaw.empirical(np.array([0.5, 1.0]))

    with pytest.raises(ValueError):
        CountLaw(probabilities=np.array([0.5]))


def test_poisson_count_tv():
    assert poisson_count_tv(2.0, 2.0) == 0.0
    assert poisson_count_tv(0.0, 1.0) == pytest.approx(1 - math.exp(-1))
    assert poisson_count_tv(1.0, 1.1) <= 0.1


def test_exact_subset_tv(unit_square):
    parent = PointPattern(points=[[0.1, 0.1], [0.5, 0.5]], window=unit_square)
    other = PointPattern(points=[[0.1, 0.1], [0.6, 0.5]], window=unit_square)
    first = exact_thinning_distribution(parent, np.array([0.5, 0.5]))
    second = exact_thinning_distribution(parent, np.array([0.5, 1.0]))

    assert exact_subset_tv(first, second) == pytest.approx(0.5)

    with pytest.raises(SupportMismatchError):
        exact_subset_tv(first, exact_thinning_distribution(other, np.array([0.5, 0.5])))


def test_tv_counts_lower_under_the_null(rng):
    counts = rng.poisson(2.0, size=20_000)
    distance = tv_counts_lower(counts, 2.0, rng, resamples=200)

    assert distance.direction is Direction.LOWER_BOUND
    assert distance.metric is Metric.TV
    assert distance.samples == 20_000
    assert distance.value < 0.02
    assert distance.stderr > 0


def test_tv_counts_lower_detects_shift(rng):
    counts = rng.poisson(3.0, size=20_000)
    distance = tv_counts_lower(counts, 2.0, rng, resamples=200)

    assert abs(distance.value - poisson_count_tv(3.0, 2.0)) < 4 * distance.stderr + 0.01


def test_tv_counts_lower_needs_samples(rng):
    with pytest.raises(ValueError):
        tv_counts_lower(np.ones(100, dtype=int), 1.0, rng)


def test_d2_witness(unit_square):
    empty = PointPattern.empty(2, unit_square)
    single = PointPattern(points=[[0.5, 0.5]], window=unit_square)

    same = d2_lower_witness([single] * 5, [single] * 5, empty)
    apart = d2_lower_witness([empty] * 5, [single] * 5, empty)

    assert same.value == 0.0
    assert apart.value == 1.0
    assert apart.stderr == 0.0
    assert apart.metric is Metric.D2

    with pytest.raises(ValueError):
        d2_lower_witness([], [single], empty)


@pytest.mark.parametrize("h", list(SlivnyakFunction))
def test_slivnyak_mecke(rng, unit_square, h):
    report = check_slivnyak_mecke(5.0, unit_square, h, 4_000, rng, radius=0.1)

    assert report.passed(4.0)
    assert report.name == f"slivnyak-mecke {h.value}"


def test_slivnyak_mecke_empty_ball_needs_radius(rng, unit_square):
    with pytest.raises(ValueError):
        check_slivnyak_mecke(5.0, unit_square, SlivnyakFunction.EMPTY_BALL, 10, rng)


def test_density_normalization(rng, unit_square):
    good = check_density_normalization(
        lambda p: poisson_density(p, 2.0, unit_square), unit_square, 4_000, rng
    )
    bad = check_density_normalization(lambda p: 2.0, unit_square, 10, rng, name="doubled")

    assert good.passed(4.0)
    assert not bad.passed()
    assert bad.name == "doubled"


def test_certify_refuses_other_config(rng):
    samples = CertificationSamples(counts=rng.poisson(2.0, size=10_000))

    with pytest.raises(ConfigMismatchError):
        certify_bound("other", _bound(0.5), samples, rng)


def test_certify_verdicts(rng):
    samples = CertificationSamples(counts=rng.poisson(3.0, size=10_000))

    passed = certify_bound("abc", _bound(0.9), samples, rng, resamples=200)
    failed = certify_bound("abc", _bound(0.01), samples, rng, resamples=200)
    uninformative = certify_bound("abc", _bound(1.5), samples, rng, resamples=200)

    assert passed.verdict is Verdict.PASS
    assert failed.verdict is Verdict.FAIL
    assert uninformative.verdict is Verdict.UNINFORMATIVE
    assert [c.metric for c in passed.certificates] == [Metric.TV]
    assert passed.certificates[0].config_hash == "abc"


def test_certify_adds_witness_certificate(rng, unit_square):
    empty = PointPattern.empty(2, unit_square)
    single = PointPattern(points=[[0.5, 0.5]], window=unit_square)
    samples = CertificationSamples(
        counts=rng.poisson(2.0, size=10_000),
        thinned=[single] * 10,
        reference=[single] * 10,
        anchor=empty,
    )
    result = certify_bound("abc", _bound(0.5), samples, rng, resamples=200)

    assert [d.metric for d in result.distances] == [Metric.TV, Metric.D2]
    assert result.verdict is Verdict.PASS


def test_certification_verdict_combines_levels(rng):
    samples = CertificationSamples(counts=rng.poisson(3.0, size=10_000))
    passed = certify_bound("abc", _bound(0.9), samples, rng, resamples=200)
    uninformative = certify_bound("abc", _bound(1.5), samples, rng, resamples=200)
    failed = certify_bound("abc", _bound(0.01), samples, rng, resamples=200)

    mixed = CertificationResult(
        certificates=passed.certificates + uninformative.certificates, distances=[]
    )
    broken = CertificationResult(
        certificates=uninformative.certificates + failed.certificates, distances=[]
    )

    assert mixed.verdict is Verdict.UNINFORMATIVE
    assert broken.verdict is Verdict.FAIL
