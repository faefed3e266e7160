#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Validated report models shared by the bounds, estimators and certification steps."""
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, root_validator, validator

from literals import CERTIFICATE_SE_MULTIPLIER, Direction, Metric, Verdict

logger = logging.getLogger(__name__)

FLOAT_SLACK = 1e-12


def _stderr(samples: np.ndarray) -> float:
    if len(samples) < 2:
        return 0.0

    return float(samples.std(ddof=1) / np.sqrt(len(samples)))


class ReportModel(BaseModel):
    """Immutable base for every report."""

    class Config:
        allow_mutation = False
        use_enum_values = False

    def to_json(self) -> str:
        """Stable JSON encoding, keys sorted."""
        return self.json(sort_keys=True, indent=2)


class BoundReport(ReportModel):
    """Itemized Poisson approximation bound for one model.

    The basic and strong dependence terms are weighted by M2 in the d2 total, the weak
    dependence term (beta integral plus twice the gamma integral) by M1.
    """

    basic_term: float
    strong_dependence_term: float
    beta_integral: float
    gamma_integral: float
    weak_dependence_term: float
    m1: float
    m2: float
    total_tv: float
    total_d2: float
    total_mass: float
    provenance: str
    config_hash: str = ""
    extras: dict[str, float] = {}

    @validator(
        "basic_term",
        "strong_dependence_term",
        "beta_integral",
        "gamma_integral",
        "weak_dependence_term",
        "total_mass",
    )
    @classmethod
    def non_negative_validator(cls, value):
        """Every bound term is non-negative."""
        if value < 0:
            raise ValueError(f"Bound terms must be non-negative, got {value}")

        return value

    @validator("m1", "m2")
    @classmethod
    def stein_factor_validator(cls, value):
        """Stein factors lie in (0, 1]."""
        if not 0 < value <= 1:
            raise ValueError(f"Stein factors must lie in (0, 1], got {value}")

        return value

    @root_validator(skip_on_failure=True)
    @classmethod
    def totals_validator(cls, values):
        """The d2 total never exceeds the TV total."""
        if values["total_d2"] > values["total_tv"] * (1 + FLOAT_SLACK) + FLOAT_SLACK:
            raise ValueError(
                f"d2 total {values['total_d2']} exceeds TV total {values['total_tv']}"
            )

        return values

    @property
    def informative(self) -> bool:
        """A TV bound of 1 or more carries no information."""
        return self.total_tv < 1

    def total(self, metric: Metric) -> float:
        """The bound total for `metric`."""
        return self.total_tv if metric is Metric.TV else self.total_d2


class MonteCarloEstimate(ReportModel):
    """Monte Carlo mean estimate with its standard error."""

    value: float
    stderr: float
    replicates: int
    flagged: bool = False
    note: str = ""


class EmpiricalDistance(ReportModel):
    """Empirical stand-in for a distance between two laws."""

    value: float
    stderr: float
    direction: Direction
    metric: Metric
    samples: int = 0

    @validator("value")
    @classmethod
    def unit_interval_validator(cls, value):
        """Distances here are bounded by 1."""
        if not -FLOAT_SLACK <= value <= 1 + FLOAT_SLACK:
            raise ValueError(f"Distance estimates must lie in [0, 1], got {value}")

        return min(max(value, 0.0), 1.0)

    @root_validator(skip_on_failure=True)
    @classmethod
    def exactness_validator(cls, values):
        """Only error-free values may be reported as exact."""
        if values["direction"] is Direction.EXACT and values["stderr"] != 0:
            raise ValueError("Exact distances carry no standard error")

        return values

    @property
    def exact(self) -> bool:
        """Whether the value is exact rather than a one-sided certificate."""
        return self.direction is Direction.EXACT

    def as_row(self) -> dict[str, object]:
        """Row for the distances CSV."""
        return {
            "metric": self.metric.value,
            "direction": self.direction.value,
            "value": self.value,
            "stderr": self.stderr,
            "exact": int(self.exact),
        }


class IdentityReport(ReportModel):
    """Two Monte Carlo (or closed form) sides of an identity that holds exactly."""

    name: str
    lhs: float
    rhs: float
    stderr: float
    replicates: int

    @classmethod
    def paired(cls, name: str, lhs: np.ndarray, rhs: np.ndarray) -> "IdentityReport":
        """Both sides evaluated on the same replicates."""
        lhs, rhs = np.asarray(lhs, dtype=np.float64), np.asarray(rhs, dtype=np.float64)
        return cls(
            name=name,
            lhs=float(lhs.mean()),
            rhs=float(rhs.mean()),
            stderr=_stderr(lhs - rhs),
            replicates=len(lhs),
        )

    @classmethod
    def against_constant(cls, name: str, lhs: np.ndarray, rhs: float) -> "IdentityReport":
        """Monte Carlo left side against a closed form right side."""
        lhs = np.asarray(lhs, dtype=np.float64)
        return cls(
            name=name,
            lhs=float(lhs.mean()),
            rhs=float(rhs),
            stderr=_stderr(lhs),
            replicates=len(lhs),
        )

    @classmethod
    def independent(cls, name: str, lhs: np.ndarray, rhs: np.ndarray) -> "IdentityReport":
        """Both sides estimated from independent replicates."""
        lhs, rhs = np.asarray(lhs, dtype=np.float64), np.asarray(rhs, dtype=np.float64)
        return cls(
            name=name,
            lhs=float(lhs.mean()),
            rhs=float(rhs.mean()),
            stderr=float(np.hypot(_stderr(lhs), _stderr(rhs))),
            replicates=min(len(lhs), len(rhs)),
        )

    @property
    def gap(self) -> float:
        """Difference of the two sides in standard error units."""
        if self.stderr == 0:
            return 0.0 if self.lhs == self.rhs else float("inf")

        return (self.lhs - self.rhs) / self.stderr

    def passed(self, threshold: float = CERTIFICATE_SE_MULTIPLIER) -> bool:
        """Whether the sides agree within `threshold` standard errors."""
        return abs(self.gap) < threshold


class SummaryEstimate(ReportModel):
    """Estimated summary function on an argument grid."""

    statistic: str
    r: list[float]
    values: list[float]
    stderr: list[float]
    replicates: int
    flagged: bool = False
    note: str = ""

    @root_validator(skip_on_failure=True)
    @classmethod
    def grid_validator(cls, values):
        """Values and errors align with the grid."""
        if not len(values["r"]) == len(values["values"]) == len(values["stderr"]):
            raise ValueError("Summary grid, values and errors must have the same length")

        return values

    def to_frame(self) -> pd.DataFrame:
        """CSV layout r,value,stderr,n."""
        return pd.DataFrame(
            {
                "r": self.r,
                "value": self.values,
                "stderr": self.stderr,
                "n": [self.replicates] * len(self.r),
            }
        )


class Certificate(ReportModel):
    """Outcome of comparing one empirical lower bound against one bound total."""

    config_hash: str
    metric: Metric
    bound: float
    estimate: float
    se: float
    verdict: str

    @validator("verdict")
    @classmethod
    def verdict_validator(cls, value):
        """Verdict labels come from the `Verdict` enum."""
        if value not in {v.value.label for v in Verdict}:
            raise ValueError(f"Unknown verdict {value}")

        return value

    @property
    def level(self) -> Verdict:
        """The verdict enum member."""
        return next(v for v in Verdict if v.value.label == self.verdict)
