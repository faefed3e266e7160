#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Experiment configuration models, loading, validation and hashing."""
import hashlib
import itertools
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ValidationError, root_validator, validator

from core.models import Norm, RadiusLaw, Window
from literals import (
    CONFIG_HASH_EXCLUDE,
    G2_TOLERANCE,
    MIN_COUNT_SAMPLES,
    MIN_KAPPA_REPLICATES,
    NEGATIVE_CONTROL_FACTOR,
    THREADS_ENV,
    DebugLevel,
)

logger = logging.getLogger(__name__)

SWEEP_KEYS = ("n", "r", "q", "p", "lambda", "gamma", "r_bar")
SUPPORTED_PIPELINES = {
    ("poisson", "constant"),
    ("poisson", "matern"),
    ("poisson", "boolean"),
    ("strauss", "matern"),
}


@dataclass(frozen=True)
class ConfigIssue:
    """One violated precondition, located by its dotted config path."""

    path: str
    message: str

    def __str__(self) -> str:
        """`path: message`."""
        return f"{self.path}: {self.message}"


class ConfigValidationError(Exception):
    """Generic exception for when an experiment configuration is invalid."""

    def __init__(self, issues: list[ConfigIssue]):
        self.issues = issues
        super().__init__("; ".join(str(issue) for issue in issues))


class WindowConfig(BaseModel):
    """Observation window as a box."""

    lower: list[float]
    upper: list[float]

    @root_validator(skip_on_failure=True)
    @classmethod
    def box_validator(cls, values):
        """Bounds share their dimension and enclose a positive volume."""
        lower, upper = values["lower"], values["upper"]
        if not lower or len(lower) != len(upper):
            raise ValueError("lower and upper must have the same, positive length")

        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise ValueError("every upper bound must exceed its lower bound")

        return values

    def build(self) -> Window:
        """The window value object."""
        return Window.box(self.lower, self.upper)


class ProcessConfig(BaseModel):
    """Point process to be thinned."""

    kind: Literal["poisson", "strauss"]
    intensity: float
    interaction: float | None = None
    interaction_range: float | None = None
    mcmc_steps: int | None = None
    kappa_replicates: int = MIN_KAPPA_REPLICATES

    @validator("intensity")
    @classmethod
    def intensity_validator(cls, value):
        """Intensities are non-negative."""
        if value < 0:
            raise ValueError(f"intensity must be non-negative, got {value}")

        return value

    @validator("interaction")
    @classmethod
    def interaction_validator(cls, value):
        """Strauss interaction lies in [0, 1]."""
        if value is not None and not 0 <= value <= 1:
            raise ValueError(f"interaction must lie in [0, 1], got {value}")

        return value

    @root_validator(skip_on_failure=True)
    @classmethod
    def strauss_validator(cls, values):
        """Strauss processes need a positive intensity, an interaction and a range."""
        if values["kind"] != "strauss":
            return values

        if values["intensity"] <= 0:
            raise ValueError("Strauss intensity must be positive")

        if values["interaction"] is None or values["interaction_range"] is None:
            raise ValueError("Strauss processes need interaction and interaction_range")

        if values["interaction_range"] < 0:
            raise ValueError("interaction_range must be non-negative")

        return values


class RetentionConfig(BaseModel):
    """Retention field applied to the process."""

    kind: Literal["constant", "matern", "boolean"]
    p: float | None = None
    q: float = 1.0
    r: float | None = None
    germ_intensity: float | None = None
    radii: list[float] | None = None
    probabilities: list[float] | None = None
    r_bar: float | None = None
    beta_sup: float = 0.0
    n: float | None = None

    @validator("p", "q")
    @classmethod
    def probability_validator(cls, value):
        """Retention levels are probabilities."""
        if value is not None and not 0 <= value <= 1:
            raise ValueError(f"must lie in [0, 1], got {value}")

        return value

    @validator("r", "germ_intensity", "r_bar", "beta_sup", "n")
    @classmethod
    def non_negative_validator(cls, value):
        """Radii, intensities and scales are non-negative."""
        if value is not None and value < 0:
            raise ValueError(f"must be non-negative, got {value}")

        return value

    @root_validator(skip_on_failure=True)
    @classmethod
    def kind_validator(cls, values):
        """Each kind carries its own parameters."""
        kind = values["kind"]
        if kind == "constant" and values["p"] is None:
            raise ValueError("constant retention needs p")

        if kind == "matern" and not values["r"]:
            raise ValueError("Matérn retention needs a positive r")

        if kind == "boolean":
            if values["germ_intensity"] is None:
                raise ValueError("Boolean retention needs germ_intensity")
            if values["n"] is None and not values["radii"]:
                raise ValueError("Boolean retention needs radii unless the contraction n is set")

        return values

    def radius_law(self) -> RadiusLaw:
        """Grain radius law; uniform weights when no probabilities are given."""
        radii = self.radii or [0.0]
        probabilities = self.probabilities or [1 / len(radii)] * len(radii)
        return RadiusLaw(radii=tuple(radii), probabilities=tuple(probabilities))


class ModelConfig(BaseModel):
    """Process, retention field, window and norm."""

    dimension: int
    norm: Norm = Norm.EUCLIDEAN
    window: WindowConfig
    halo: float | None = None
    process: ProcessConfig
    retention: RetentionConfig

    @validator("dimension")
    @classmethod
    def dimension_validator(cls, value):
        """Dimensions are positive."""
        if value < 1:
            raise ValueError(f"dimension must be positive, got {value}")

        return value

    @root_validator(skip_on_failure=True)
    @classmethod
    def window_dimension_validator(cls, values):
        """The window lives in the model's dimension."""
        if len(values["window"].lower) != values["dimension"]:
            raise ValueError(
                f"window has dimension {len(values['window'].lower)}, model has {values['dimension']}"
            )

        return values


class NegativeControlConfig(BaseModel):
    """Certify a deliberately shrunk bound next to the honest one."""

    factor: float = NEGATIVE_CONTROL_FACTOR

    @validator("factor")
    @classmethod
    def factor_validator(cls, value):
        """Shrinking factors lie in [0, 1)."""
        if not 0 <= value < 1:
            raise ValueError(f"factor must lie in [0, 1), got {value}")

        return value


class SummaryConfig(BaseModel):
    """Summary statistics to estimate."""

    r_grid: list[float]
    displacement: list[float] | None = None
    isotropic: bool = False

    @validator("r_grid")
    @classmethod
    def grid_validator(cls, value):
        """Argument grids are non-empty and positive."""
        if not value or any(r <= 0 for r in value):
            raise ValueError("r_grid must be a non-empty list of positive radii")

        return value


class IdentityConfig(BaseModel):
    """Identity checks to run on Monte Carlo replicates."""

    checks: list[Literal["slivnyak", "moments", "density", "thinned_density"]] = [
        "slivnyak",
        "moments",
        "density",
        "thinned_density",
    ]
    ball_radius: float = 0.1
    test_pattern_size: int = 2


class ExperimentConfig(BaseModel):
    """Complete, seeded description of one experiment."""

    name: str
    kind: Literal["certify", "rate", "identities", "summaries"] = "certify"
    seed: int
    replicates: int
    witness_replicates: int = 0
    threads: int = 1
    log_level: DebugLevel = "INFO"
    output: str = "reports"
    model: ModelConfig
    sweep: dict[str, list[float]] = {}
    negative_control: NegativeControlConfig | None = None
    summaries: SummaryConfig | None = None
    identities: IdentityConfig | None = None

    @validator("seed", "witness_replicates")
    @classmethod
    def non_negative_validator(cls, value):
        """Seeds and counts are non-negative."""
        if value < 0:
            raise ValueError(f"must be non-negative, got {value}")

        return value

    @validator("replicates", "threads")
    @classmethod
    def positive_validator(cls, value):
        """Replicate and thread counts are positive."""
        if value < 1:
            raise ValueError(f"must be positive, got {value}")

        return value

    @validator("sweep")
    @classmethod
    def sweep_validator(cls, value):
        """Sweeps range over known parameters with non-empty grids."""
        for key, grid in value.items():
            if key not in SWEEP_KEYS:
                raise ValueError(f"unknown sweep parameter {key}, expected one of {SWEEP_KEYS}")
            if not grid:
                raise ValueError(f"sweep grid for {key} is empty")

        return value


def sweep_points(config: ExperimentConfig) -> list[dict[str, float]]:
    """Cartesian product of the sweep grids, keys in sorted order; one empty point without sweep."""
    keys = sorted(config.sweep)
    return [dict(zip(keys, values)) for values in itertools.product(*(config.sweep[k] for k in keys))]


def _apply_parameters(raw: dict[str, Any], params: dict[str, float]) -> dict[str, Any]:
    model = raw["model"]
    process, retention = model["process"], model["retention"]
    for key, value in params.items():
        if key == "lambda":
            process["intensity"] = value
        elif key == "gamma":
            process["interaction"] = value
        elif key == "r" and retention["kind"] == "boolean":
            retention["radii"], retention["probabilities"] = [value], [1.0]
        elif key == "q" and retention["kind"] == "constant":
            retention["p"] = value
        else:
            retention[key] = value

    return raw


def point_config(config: ExperimentConfig, params: dict[str, float]) -> ExperimentConfig:
    """The configuration of one sweep point, with the sweep itself removed."""
    raw = json.loads(config.json())
    raw["sweep"] = {}
    return ExperimentConfig.parse_obj(_apply_parameters(raw, params))


def required_halo(config: ExperimentConfig) -> float:
    """Smallest halo around the window that the configured estimators and fields need."""
    model, retention = config.model, config.model.retention
    halo = 0.0
    if retention.kind == "matern":
        halo = retention.r
        if config.kind == "certify" and model.process.kind == "strauss":
            halo = retention.r * (3 + 2 * G2_TOLERANCE)

    if config.kind == "summaries" and config.summaries:
        reach = max(config.summaries.r_grid)
        if config.summaries.displacement is not None:
            length = float(model.norm.length(np.asarray(config.summaries.displacement)))
            reach += length * (1 + G2_TOLERANCE)
        halo = max(halo, reach)

    return halo


def sampling_halo(config: ExperimentConfig) -> float:
    """Configured halo, or the required one when none is set."""
    return required_halo(config) if config.model.halo is None else config.model.halo


def _point_issues(config: ExperimentConfig, prefix: str) -> list[ConfigIssue]:
    model = config.model
    process, retention = model.process, model.retention
    issues = []

    if config.kind == "certify" and (process.kind, retention.kind) not in SUPPORTED_PIPELINES:
        issues.append(
            ConfigIssue(
                f"{prefix}model",
                f"no bound pipeline for {process.kind} process with {retention.kind} retention",
            )
        )

    if retention.kind == "boolean":
        path = f"{prefix}model.retention"
        if retention.n is not None:
            lower = retention.n ** -model.dimension
            if retention.n < 1 or not lower <= retention.q <= 1:
                issues.append(
                    ConfigIssue(
                        f"{path}.q",
                        f"contracted Boolean cover needs n >= 1 and q in [n^-D, 1] = [{lower:.6g}, 1], got q={retention.q}",
                    )
                )
            if not retention.germ_intensity:
                issues.append(
                    ConfigIssue(f"{path}.germ_intensity", "contraction needs a positive germ intensity")
                )
        else:
            try:
                law = retention.radius_law()
            except ValueError as e:
                issues.append(ConfigIssue(f"{path}.radii", str(e)))
            else:
                r_bar = 2 * law.sup if retention.r_bar is None else retention.r_bar
                if r_bar < 2 * law.sup:
                    issues.append(
                        ConfigIssue(
                            f"{path}.r_bar",
                            f"neighbourhood radius {r_bar} is below twice the largest grain radius {law.sup}",
                        )
                    )

    if config.kind == "certify" and retention.kind == "constant" and retention.r_bar is None:
        issues.append(
            ConfigIssue(
                f"{prefix}model.retention.r_bar",
                "constant retention bounds need a neighbourhood radius r_bar",
            )
        )

    required = required_halo(config)
    if model.halo is not None and model.halo < required:
        issues.append(
            ConfigIssue(
                f"{prefix}model.halo",
                f"sampling window must contain the {required:.6g}-parallel set of the window, halo is {model.halo}",
            )
        )

    if process.kind == "strauss" and retention.kind == "matern" and process.interaction == 0:
        issues.append(
            ConfigIssue(
                f"{prefix}model.process.interaction",
                "hard-core Strauss has no finite conditional density bound",
            )
        )

    if process.kind == "strauss" and process.kappa_replicates < MIN_KAPPA_REPLICATES:
        issues.append(
            ConfigIssue(
                f"{prefix}model.process.kappa_replicates",
                f"needs at least {MIN_KAPPA_REPLICATES} replicates",
            )
        )

    return issues


def identity_settings(config: ExperimentConfig) -> IdentityConfig:
    """Configured identity checks, or the full default suite."""
    return config.identities or IdentityConfig()


def _identity_issues(config: ExperimentConfig) -> list[ConfigIssue]:
    process, retention = config.model.process, config.model.retention
    issues = []
    for check in identity_settings(config).checks:
        if check in ("slivnyak", "density", "thinned_density") and process.kind != "poisson":
            issues.append(
                ConfigIssue("identities.checks", f"{check} identities need a Poisson process")
            )
        elif check == "thinned_density" and retention.kind != "constant":
            issues.append(
                ConfigIssue(
                    "identities.checks",
                    "the thinned density has a closed form for constant retention only",
                )
            )

    return issues


def _experiment_issues(config: ExperimentConfig) -> list[ConfigIssue]:
    issues = []
    retention = config.model.retention

    if config.kind == "certify" and config.replicates < MIN_COUNT_SAMPLES:
        issues.append(
            ConfigIssue("replicates", f"certification needs at least {MIN_COUNT_SAMPLES} replicates")
        )

    if config.kind == "rate":
        if retention.kind != "boolean" or config.model.process.kind != "poisson":
            issues.append(ConfigIssue("model", "rate sweeps run on Boolean cover of a Poisson process"))
        if retention.n is None and "n" not in config.sweep:
            issues.append(ConfigIssue("sweep.n", "rate sweeps need a grid over n"))

    if config.kind == "summaries" and config.summaries is None:
        issues.append(ConfigIssue("summaries", "summary experiments need a summaries section"))

    if config.summaries and config.summaries.displacement is not None:
        if len(config.summaries.displacement) != config.model.dimension:
            issues.append(
                ConfigIssue("summaries.displacement", "displacement must have the model dimension")
            )

    if config.kind == "identities":
        issues.extend(_identity_issues(config))

    return issues


def validate_config(raw: dict[str, Any]) -> list[ConfigIssue]:
    """Itemized list of every violated precondition; empty when the config is valid."""
    try:
        config = ExperimentConfig.parse_obj(raw)
    except ValidationError as e:
        return [
            ConfigIssue(".".join(str(part) for part in error["loc"]), error["msg"])
            for error in e.errors()
        ]

    issues = _experiment_issues(config)
    points = sweep_points(config)
    for index, params in enumerate(points):
        prefix = f"sweep[{index}]:" if config.sweep else ""
        try:
            point = point_config(config, params)
        except ValidationError as e:
            issues.extend(
                ConfigIssue(
                    f"{prefix}{'.'.join(str(part) for part in error['loc'])}", error["msg"]
                )
                for error in e.errors()
            )
            continue

        issues.extend(_point_issues(point, prefix))

    for issue in issues:
        logger.debug(f"Config issue {issue}")

    return issues


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    """Validated config from raw mapping data.

    Raises:
        ConfigValidationError: listing every violation
    """
    issues = validate_config(raw)
    if issues:
        raise ConfigValidationError(issues)

    return ExperimentConfig.parse_obj(raw)


def load_config(path: str | Path) -> ExperimentConfig:
    """Reads and validates a YAML experiment configuration."""
    with open(path) as f:
        raw = yaml.safe_load(f) or {}

    if not isinstance(raw, dict):
        raise ConfigValidationError([ConfigIssue("<root>", "configuration must be a mapping")])

    return parse_config(raw)


def with_overrides(
    config: ExperimentConfig,
    seed: int | None = None,
    replicates: int | None = None,
    output: str | None = None,
    log_level: str | None = None,
    kind: str | None = None,
) -> ExperimentConfig:
    """Applies command line overrides and revalidates."""
    raw = json.loads(config.json())
    for key, value in (
        ("seed", seed),
        ("replicates", replicates),
        ("output", output),
        ("log_level", log_level),
        ("kind", kind),
    ):
        if value is not None:
            raw[key] = value

    return parse_config(raw)


def resolve_threads(config: ExperimentConfig) -> int:
    """Thread count, overridden by the environment when set."""
    override = os.environ.get(THREADS_ENV)
    if not override:
        return config.threads

    try:
        threads = int(override)
    except ValueError:
        logger.error(f"Ignoring non-integer {THREADS_ENV}={override}")
        return config.threads

    if threads < 1:
        logger.error(f"Ignoring non-positive {THREADS_ENV}={override}")
        return config.threads

    return threads


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of every field that affects the numbers."""
    data = json.loads(config.json(exclude=set(CONFIG_HASH_EXCLUDE)))
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()

