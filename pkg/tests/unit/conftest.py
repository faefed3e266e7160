# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

from pathlib import Path

import numpy as np
import pytest
import yaml

from core.models import Window
from literals import THREADS_ENV
from workload import ReportWorkload

DEFAULT_CONFIG = yaml.safe_load(Path("./config.yaml").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def unit_square():
    return Window.unit(2)


@pytest.fixture
def workload(tmp_path):
    return ReportWorkload(tmp_path / "reports")


@pytest.fixture
def raw_config(tmp_path):
    """The default experiment, writing below the test's temporary directory."""
    raw = yaml.safe_load(yaml.safe_dump(DEFAULT_CONFIG))
    raw["output"] = str(tmp_path / "reports")
    return raw


@pytest.fixture(autouse=True)
def no_thread_override(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
