#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import logging

import numpy as np
import pandas as pd
import pytest

from managers.experiment import ExperimentManager

from .helpers import canned_config, read_manifest

logger = logging.getLogger(__name__)

CANNED = ["matern-poisson", "boolean-poisson", "rate-sweep", "strauss-matern"]


@pytest.mark.slow
def test_rate_sweep_slope(tmp_path):
    config = canned_config("rate-sweep", tmp_path)
    summary = ExperimentManager(config).run_experiment()
    table = pd.read_csv(tmp_path / "rate.csv")

    assert summary.passed
    assert -1.3 <= summary.slope <= -0.7
    assert read_manifest(tmp_path)["slope"] == pytest.approx(summary.slope)
    assert np.all(np.diff(table["tv"]) < 0)
    assert np.all(table["tv"] <= table["tv_k_based"])


@pytest.mark.slow
@pytest.mark.parametrize("name", CANNED)
def test_d2_bound_never_exceeds_tv_bound(tmp_path, name):
    config = canned_config(name, tmp_path, witness_replicates=0, replicates=10_000)
    reports = ExperimentManager(config).run_bounds()

    assert reports and all(report is not None for report in reports)
    assert all(report.total_d2 <= report.total_tv + 1e-12 for report in reports)
    assert all(report.m2 <= 1 and report.m1 <= 1 for report in reports)
