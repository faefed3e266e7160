#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import json
from pathlib import Path

import pandas as pd
import yaml

from literals import EXPERIMENTS_DIR
from managers.config import ExperimentConfig, parse_config

SEEDS = range(50)
MIN_PASSING_SEEDS = 47


def canned_raw(name: str) -> dict:
    return yaml.safe_load((Path(EXPERIMENTS_DIR) / f"{name}.yaml").read_text())


def canned_config(name: str, output: Path, **overrides) -> ExperimentConfig:
    raw = canned_raw(name)
    raw.update(overrides)
    raw["output"] = str(output)
    return parse_config(raw)


def read_manifest(output: Path) -> dict:
    return json.loads((output / "manifest.json").read_text())


def read_certificates(output: Path, index: int = 0) -> list[dict]:
    return json.loads((output / f"point-{index:03d}" / "certificate.json").read_text())


def read_summaries(output: Path, index: int = 0) -> pd.DataFrame:
    return pd.read_csv(output / f"point-{index:03d}" / "summaries.csv")
