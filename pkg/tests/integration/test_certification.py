#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import logging
import math

import numpy as np
import pytest

from core.models import PointPattern, Window
from literals import Verdict
from managers.distances import CountLaw, tv_exact_small
from managers.experiment import ExperimentManager, retention_field, strauss_params
from managers.simulation import estimate_strauss_kappa

from .helpers import canned_config, canned_raw, read_certificates, read_manifest

logger = logging.getLogger(__name__)


@pytest.mark.slow
def test_matern_poisson_certificate(tmp_path):
    config = canned_config("matern-poisson", tmp_path)
    summary = ExperimentManager(config).run_experiment()
    certificates = read_certificates(tmp_path)

    assert summary.verdict is Verdict.PASS
    assert certificates[0]["metric"] == "tv"
    assert certificates[0]["bound"] < 0.15
    assert read_manifest(tmp_path)["verdict"] == "pass"


@pytest.mark.slow
def test_boolean_poisson_certificate(tmp_path):
    config = canned_config("boolean-poisson", tmp_path)
    summary = ExperimentManager(config).run_experiment()

    assert summary.verdict is Verdict.PASS
    assert all(c["verdict"] == "pass" for c in read_certificates(tmp_path))


@pytest.mark.slow
def test_boolean_uncovered_fraction(tmp_path):
    config = canned_config("boolean-poisson", tmp_path)
    field = retention_field(config)
    retention = config.model.retention
    pattern = PointPattern(points=[[0.5, 0.5]], window=Window.unit(2))
    rng = np.random.default_rng(config.seed)

    values = np.array([field.realize(pattern, rng)[0] for _ in range(100_000)])
    expected = retention.q * math.exp(-retention.germ_intensity * math.pi * retention.radii[0] ** 2)

    assert abs(values.mean() - expected) < 3 * values.std(ddof=1) / math.sqrt(len(values))


@pytest.mark.slow
def test_strauss_kappa_without_interaction(tmp_path):
    config = canned_config("strauss-matern", tmp_path)
    window = Window.unit(2)
    params = strauss_params(config, window)
    kappa = estimate_strauss_kappa(params, 100_000, np.random.default_rng(config.seed))

    assert abs(kappa.value - math.exp((1 - params.intensity) * window.volume)) < 3 * kappa.stderr


@pytest.mark.slow
def test_strauss_matern_runs_through(tmp_path):
    config = canned_config("strauss-matern", tmp_path)
    summary = ExperimentManager(config).run_experiment()
    manifest = read_manifest(tmp_path)

    assert all(point["passed"] for point in manifest["points"])
    assert all(r.verdict in (Verdict.PASS, Verdict.UNINFORMATIVE) for r in summary.results)
    assert summary.passed


@pytest.mark.slow
def test_negative_control_fails_while_honest_bound_passes(tmp_path):
    raw = canned_raw("matern-poisson")
    model = raw["model"]
    model["dimension"] = 1
    model["window"] = {"lower": [0.0], "upper": [1.0]}
    model["retention"]["r"] = 1.0
    config = canned_config(
        "matern-poisson",
        tmp_path,
        model=model,
        witness_replicates=0,
        negative_control={"factor": 0.03},
    )
    summary = ExperimentManager(config).run_experiment()

    # at most one point survives; the exact count distance is mu (1 - e^-mu)
    mu = 1 / (2 * math.e)
    exact = tv_exact_small(CountLaw(probabilities=np.array([1 - mu, mu])), CountLaw.poisson(mu))
    honest = read_certificates(tmp_path)[0]

    assert exact == pytest.approx(mu * (1 - math.exp(-mu)), rel=1e-6)
    assert honest["verdict"] == "pass"
    assert abs(honest["estimate"] - exact) < 4 * honest["se"] + 0.005
    assert summary.results[0].negative_control is Verdict.FAIL
    assert summary.passed
