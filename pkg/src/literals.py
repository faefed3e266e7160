#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Collection of global literals for the thinning bounds toolkit."""

from dataclasses import dataclass
from enum import Enum
from typing import Literal

# --- STEIN FACTORS ---

M1_CONSTANT = 1.647
M2_CONSTANT = 11 / 6

# --- GEOMETRY ---

MC_GEOMETRY_SAMPLES = 1_000_000
MC_GEOMETRY_SEED = 20_240_601
QUADRATURE_TOLERANCE = 1e-8
QUADRATURE_LIMIT = 200

# --- PATTERNS / THINNING ---

ASSIGNMENT_MAX_POINTS = 512
PAIR_RADIUS_SLACK = 1e-9
ENUMERATION_MAX_POINTS = 20
MIN_STABLE_REPLICATES = 1_000
BOOLEAN_INNER_REPLICATES = 64

# --- SIMULATION ---

MIN_KAPPA_REPLICATES = 10_000
MIN_BURN_IN_STEPS = 100
BURN_IN_FACTOR = 10
ACCEPTANCE_RANGE = (0.05, 0.95)

# --- SUMMARIES ---

G2_TOLERANCE = 0.05
ANNULUS_BINS = 8
SUMMARY_MAX_PATTERNS = 2_000

# --- DISTANCES ---

MIN_COUNT_SAMPLES = 10_000
POISSON_TAIL_MASS = 1e-12
BOOTSTRAP_RESAMPLES = 1_000
CERTIFICATE_SE_MULTIPLIER = 3.0
NEGATIVE_CONTROL_FACTOR = 0.5

# --- RUNNER ---

THREADS_ENV = "THINNING_BOUNDS_THREADS"
CONFIG_PATH = "config.yaml"
EXPERIMENTS_DIR = "experiments"
CONFIG_HASH_EXCLUDE = ("output", "threads", "log_level")

# --- TYPES ---

DebugLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR"]
NormKind = Literal["euclidean", "sup"]


@dataclass
class VerdictLevel:
    label: str
    log_level: DebugLevel


class Verdict(Enum):
    PASS = VerdictLevel("pass", "INFO")
    UNINFORMATIVE = VerdictLevel("pass-uninformative", "WARNING")
    FAIL = VerdictLevel("fail", "ERROR")

    @property
    def passed(self) -> bool:
        """Whether the verdict counts towards a zero exit code."""
        return self is not Verdict.FAIL


class Direction(str, Enum):
    LOWER_BOUND = "lower_bound"
    EXACT = "exact"
    UPPER_BOUND = "upper_bound"


class Metric(str, Enum):
    TV = "tv"
    D2 = "d2"
