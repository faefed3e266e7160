#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import json
import logging
from pathlib import Path

import pandas as pd
import pytest

from core.models import RngStream, Window
from literals import THREADS_ENV, Verdict
from managers.bounds import BoundPreconditionError
from managers.config import parse_config
from managers.experiment import (
    ExperimentManager,
    ExperimentSummary,
    PointResult,
    compute_bound,
    draw_patterns,
    sampling_window,
)

logger = logging.getLogger(__name__)


@pytest.fixture
def small_certify(raw_config):
    raw_config["replicates"] = 10_000
    raw_config["witness_replicates"] = 50
    return raw_config


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_sampling_windows(raw_config):
    assert sampling_window(parse_config(raw_config)) == Window.unit(2).haloed(0.1)

    raw_config["kind"] = "rate"
    raw_config["model"]["retention"] = {"kind": "boolean", "germ_intensity": 1.0, "n": 10}
    assert sampling_window(parse_config(raw_config)) == Window.box([0, 0], [10, 10])


def test_draw_patterns_is_reproducible(raw_config):
    config = parse_config(raw_config)
    first = draw_patterns(config, 3, RngStream(1))
    second = draw_patterns(config, 3, RngStream(1))

    assert all(a == b for a, b in zip(first, second))
    assert all(p.window == sampling_window(config) for p in first)


@pytest.mark.parametrize(
    "retention,provenance",
    [
        ({"kind": "constant", "p": 0.5, "r_bar": 0.1}, "constant"),
        ({"kind": "matern", "r": 0.1, "q": 1.0}, "matern-poisson"),
        ({"kind": "matern", "r": 0.1, "q": 0.5}, "matern"),
        ({"kind": "boolean", "germ_intensity": 5.0, "radii": [0.05]}, "boolean"),
        ({"kind": "boolean", "germ_intensity": 1.0, "n": 100}, "boolean-contracted-integral"),
    ],
)
def test_compute_bound_dispatch(raw_config, retention, provenance):
    raw_config["model"]["retention"] = retention
    bound = compute_bound(parse_config(raw_config), RngStream(1))

    assert bound.provenance == provenance
    assert bound.total_d2 <= bound.total_tv
    if "n" in retention:
        assert bound.extras["k_based_tv"] >= bound.total_tv


def test_strauss_bound_needs_patterns(raw_config):
    raw_config["model"]["process"] = {
        "kind": "strauss",
        "intensity": 0.5,
        "interaction": 0.5,
        "interaction_range": 0.05,
    }

    with pytest.raises(BoundPreconditionError):
        compute_bound(parse_config(raw_config), RngStream(1))


def test_certify_writes_reports(small_certify):
    config = parse_config(small_certify)
    summary = ExperimentManager(config).run_experiment()
    root = Path(config.output)

    assert summary.passed
    assert summary.verdict is Verdict.PASS
    assert (root / "point-000" / "bound.json").exists()

    distances = pd.read_csv(root / "point-000" / "distances.csv")
    assert distances["metric"].tolist() == ["tv", "d2"]
    assert set(distances["direction"]) == {"lower_bound"}

    certificates = json.loads((root / "point-000" / "certificate.json").read_text())
    assert {c["config_hash"] for c in certificates} == {summary.config_hash}

    manifest = json.loads((root / "manifest.json").read_text())
    assert manifest["verdict"] == "pass"
    assert manifest["seed"] == config.seed
    assert "output" not in manifest["config"]
    assert manifest["points"][0]["passed"]


def test_certify_is_reproducible(small_certify, tmp_path):
    small_certify["output"] = str(tmp_path / "first")
    ExperimentManager(parse_config(small_certify)).run_experiment()
    small_certify["output"] = str(tmp_path / "second")
    ExperimentManager(parse_config(small_certify)).run_experiment()

    assert _tree(tmp_path / "first") == _tree(tmp_path / "second")


def test_thread_count_does_not_change_results(small_certify, tmp_path, monkeypatch):
    small_certify["sweep"] = {"r": [0.05, 0.1]}
    small_certify["witness_replicates"] = 0

    small_certify["output"] = str(tmp_path / "serial")
    ExperimentManager(parse_config(small_certify)).run_experiment()

    monkeypatch.setenv(THREADS_ENV, "2")
    small_certify["output"] = str(tmp_path / "threaded")
    ExperimentManager(parse_config(small_certify)).run_experiment()

    assert _tree(tmp_path / "serial") == _tree(tmp_path / "threaded")


def test_negative_control_is_reported_separately(small_certify):
    # at most one point survives, the count law is far from Poisson
    small_certify["model"]["dimension"] = 1
    small_certify["model"]["window"] = {"lower": [0.0], "upper": [1.0]}
    small_certify["model"]["retention"]["r"] = 1.0
    small_certify["negative_control"] = {"factor": 0.0}
    small_certify["witness_replicates"] = 0
    config = parse_config(small_certify)
    summary = ExperimentManager(config).run_experiment()
    root = Path(config.output)

    certificates = json.loads((root / "point-000" / "certificate.json").read_text())
    plot = pd.read_csv(root / "plot_data.csv")

    assert summary.passed
    assert summary.results[0].negative_control is Verdict.FAIL
    assert [c.get("negative_control", False) for c in certificates] == [False, True]
    assert plot["metric"].tolist() == ["tv", "tv-negative-control"]


def test_failed_point_is_recorded(small_certify, mocker):
    small_certify["sweep"] = {"r": [0.05, 0.1]}
    small_certify["witness_replicates"] = 0
    real = compute_bound

    def _flaky(config, rng, patterns=None):
        if config.model.retention.r == 0.05:
            raise BoundPreconditionError("broken on purpose")
        return real(config, rng, patterns=patterns)

    mocker.patch("managers.experiment.compute_bound", side_effect=_flaky)
    config = parse_config(small_certify)
    summary = ExperimentManager(config).run_experiment()
    manifest = json.loads((Path(config.output) / "manifest.json").read_text())

    assert not summary.passed
    assert summary.verdict is Verdict.FAIL
    assert [p["passed"] for p in manifest["points"]] == [False, True]
    assert "broken on purpose" in manifest["points"][0]["cause"]
    assert manifest["verdict"] == "fail"


def test_rate_sweep(raw_config):
    raw_config["kind"] = "rate"
    raw_config["model"]["process"]["intensity"] = 1.0
    raw_config["model"]["retention"] = {"kind": "boolean", "germ_intensity": 1.0, "q": 1.0}
    raw_config["sweep"] = {"n": [1e2, 1e3, 1e4, 1e5, 1e6]}
    config = parse_config(raw_config)
    summary = ExperimentManager(config).run_experiment()
    table = pd.read_csv(Path(config.output) / "rate.csv")

    assert summary.passed
    assert table["n"].tolist() == [1e2, 1e3, 1e4, 1e5, 1e6]
    assert (table["tv"] <= table["tv_k_based"]).all()
    assert -1.3 <= summary.slope <= -0.7


def test_summaries_experiment(raw_config):
    raw_config["kind"] = "summaries"
    raw_config["replicates"] = 20
    raw_config["model"]["process"]["intensity"] = 50.0
    raw_config["model"]["retention"] = {"kind": "constant", "p": 1.0}
    raw_config["summaries"] = {"r_grid": [0.02, 0.05], "displacement": [0.1, 0.0], "isotropic": True}
    config = parse_config(raw_config)
    summary = ExperimentManager(config).run_experiment()
    frame = pd.read_csv(Path(config.output) / "point-000" / "summaries.csv")

    assert summary.passed
    assert list(frame.columns) == ["statistic", "r", "value", "stderr", "n"]
    assert frame["statistic"].tolist() == ["K", "K", "G", "G", "G2", "G2"]
    assert set(frame["n"]) == {20}


def test_identities_experiment(raw_config):
    raw_config["kind"] = "identities"
    raw_config["replicates"] = 500
    raw_config["model"]["retention"] = {"kind": "constant", "p": 0.4}
    raw_config["identities"] = {"checks": ["slivnyak", "moments", "density", "thinned_density"]}
    config = parse_config(raw_config)
    ExperimentManager(config).run_experiment()
    reports = json.loads((Path(config.output) / "point-000" / "identities.json").read_text())

    assert [r["name"] for r in reports] == [
        "slivnyak-mecke constant",
        "slivnyak-mecke total_count",
        "slivnyak-mecke empty_ball",
        "first moment",
        "second factorial moment",
        "poisson density normalization",
        "thinned poisson density",
    ]
    assert all(r["replicates"] == 500 for r in reports)


def test_run_bounds_writes_every_point(raw_config):
    raw_config["sweep"] = {"r": [0.05, 0.1]}
    config = parse_config(raw_config)
    reports = ExperimentManager(config).run_bounds()

    assert [r.extras["l1"] < 0.5 for r in reports] == [True, True]
    assert reports[0].total_tv < reports[1].total_tv
    assert (Path(config.output) / "point-001" / "bound.json").exists()


def test_summary_verdicts():
    status = PointResult.PointStatus(passed=True)
    passed = PointResult(index=0, params={}, status=status, verdict=Verdict.PASS)
    vague = PointResult(index=1, params={}, status=status, verdict=Verdict.UNINFORMATIVE)
    crashed = PointResult(index=2, params={}, status=PointResult.PointStatus(passed=False, cause="x"))

    assert ExperimentSummary("h", [passed]).verdict is Verdict.PASS
    assert ExperimentSummary("h", [passed, vague]).verdict is Verdict.UNINFORMATIVE
    assert ExperimentSummary("h", [passed, crashed]).verdict is Verdict.FAIL
    assert not ExperimentSummary("h", []).passed
    assert crashed.as_dict()["verdict"] is None
