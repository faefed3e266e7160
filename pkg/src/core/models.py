#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Collection of value objects for windows, patterns, metrics and process parameters."""
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)


class Norm(str, Enum):
    """Norm generating the metric on the underlying space."""

    EUCLIDEAN = "euclidean"
    SUP = "sup"

    @property
    def minkowski_p(self) -> float:
        """The Minkowski exponent used by kd-tree queries."""
        return 2.0 if self is Norm.EUCLIDEAN else np.inf

    @property
    def cdist_metric(self) -> str:
        """The matching `scipy.spatial.distance` metric name."""
        return "euclidean" if self is Norm.EUCLIDEAN else "chebyshev"

    def length(self, vectors: np.ndarray) -> np.ndarray:
        """Norm of each row of `vectors` (or of a single vector)."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if self is Norm.EUCLIDEAN:
            return np.sqrt(np.sum(vectors**2, axis=-1))

        return np.max(np.abs(vectors), axis=-1)


@dataclass(frozen=True)
class Halo:
    """Reference from a halo-extended window back to the window it surrounds."""

    inner: "Window"
    radius: float


@dataclass(frozen=True)
class Window:
    """Compact axis-aligned box, optionally recorded as the halo of an inner box."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    halo_of: Halo | None = None

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(x) for x in self.lower))
        object.__setattr__(self, "upper", tuple(float(x) for x in self.upper))

        if not self.lower or len(self.lower) != len(self.upper):
            raise ValueError(
                f"Window bounds must share a positive dimension, got {self.lower} and {self.upper}"
            )

        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"Window lower bounds {self.lower} exceed upper bounds {self.upper}")

    @classmethod
    def box(cls, lower: list[float] | tuple[float, ...], upper: list[float] | tuple[float, ...]):
        """Builds a plain box window."""
        return cls(lower=tuple(lower), upper=tuple(upper))

    @classmethod
    def unit(cls, dimension: int) -> "Window":
        """The unit cube [0, 1]^D."""
        return cls(lower=(0.0,) * dimension, upper=(1.0,) * dimension)

    @property
    def dimension(self) -> int:
        """Dimension D of the ambient space."""
        return len(self.lower)

    @property
    def lower_array(self) -> np.ndarray:
        """Lower corner as an array."""
        return np.array(self.lower, dtype=np.float64)

    @property
    def upper_array(self) -> np.ndarray:
        """Upper corner as an array."""
        return np.array(self.upper, dtype=np.float64)

    @property
    def side_lengths(self) -> np.ndarray:
        """Per-axis side lengths."""
        return self.upper_array - self.lower_array

    @property
    def volume(self) -> float:
        """Lebesgue volume of the box."""
        return float(np.prod(self.side_lengths))

    @property
    def admissible(self) -> bool:
        """Compact with positive volume."""
        return self.volume > 0

    def haloed(self, radius: float) -> "Window":
        """Extends the box by `radius` on every side, keeping a reference to this window.

        The extended box contains the r-parallel set of this window for every norm handled here.
        """
        if radius < 0:
            raise ValueError(f"Halo radius must be non-negative, got {radius}")

        return Window(
            lower=tuple(self.lower_array - radius),
            upper=tuple(self.upper_array + radius),
            halo_of=Halo(inner=self, radius=float(radius)),
        )

    def covers_halo(self, inner: "Window", radius: float) -> bool:
        """Checks that this window contains the `radius`-parallel box of `inner`."""
        if inner.dimension != self.dimension:
            return False

        return bool(
            np.all(self.lower_array <= inner.lower_array - radius)
            and np.all(self.upper_array >= inner.upper_array + radius)
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of the rows of `points` lying in the closed box."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, self.dimension)
        return np.all((points >= self.lower_array) & (points <= self.upper_array), axis=1)

    def scaled(self, factor: float) -> "Window":
        """Image of the window under x -> x / factor."""
        halo = None
        if self.halo_of:
            halo = Halo(inner=self.halo_of.inner.scaled(factor), radius=self.halo_of.radius / factor)

        return Window(
            lower=tuple(self.lower_array / factor),
            upper=tuple(self.upper_array / factor),
            halo_of=halo,
        )

    def as_dict(self) -> dict[str, list[float]]:
        """Plain representation used in configs and reports."""
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True, eq=False)
class PointPattern:
    """Finite simple point pattern, stored in canonical lexicographic order."""

    points: np.ndarray
    window: Window | None = None

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim != 2:
            raise ValueError(f"Points must be an (n, D) array, got shape {points.shape}")

        if self.window and points.shape[1] != self.window.dimension:
            raise ValueError(
                f"Points of dimension {points.shape[1]} do not match window dimension {self.window.dimension}"
            )

        if len(points):
            points = points[np.lexsort(points.T[::-1])]
            if np.any(np.all(np.diff(points, axis=0) == 0, axis=1)):
                raise ValueError("Point pattern is not simple, duplicated points found")

        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @classmethod
    def empty(cls, dimension: int, window: Window | None = None) -> "PointPattern":
        """The empty pattern in dimension D."""
        return cls(points=np.empty((0, dimension)), window=window)

    def __len__(self) -> int:
        """Number of points |ϱ|."""
        return self.points.shape[0]

    def __eq__(self, other: object) -> bool:
        """Patterns are equal as point sets."""
        if not isinstance(other, PointPattern):
            return NotImplemented

        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def dimension(self) -> int:
        """Dimension of the points."""
        return self.points.shape[1]

    def restrict(self, window: Window) -> "PointPattern":
        """Sub-pattern of the points lying in `window`."""
        return PointPattern(points=self.points[window.contains(self.points)], window=window)

    def subset(self, mask: np.ndarray) -> "PointPattern":
        """Sub-pattern selected by a boolean mask aligned with the canonical order."""
        return PointPattern(points=self.points[np.asarray(mask, dtype=bool)], window=self.window)

    def to_frame(self) -> pd.DataFrame:
        """Tabular form with columns x1..xD."""
        return pd.DataFrame(self.points, columns=[f"x{i + 1}" for i in range(self.dimension)])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, window: Window | None = None) -> "PointPattern":
        """Reads the x1..xD columns of a frame, ignoring any other columns."""
        columns = sorted(
            (c for c in frame.columns if str(c).startswith("x") and str(c)[1:].isdigit()),
            key=lambda c: int(str(c)[1:]),
        )
        if not columns:
            raise ValueError("Pattern frame has no x1..xD columns")

        return cls(points=frame[columns].to_numpy(dtype=np.float64), window=window)


@dataclass(frozen=True)
class BoundedMetric:
    """The capped metric d0(x, y) = min(||x - y||, cap)."""

    norm: Norm = Norm.EUCLIDEAN
    cap: float = 1.0

    def __call__(self, x: np.ndarray, y: np.ndarray) -> float:
        """Distance between two points."""
        return float(min(self.norm.length(np.asarray(x) - np.asarray(y)), self.cap))

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Matrix of capped distances between the rows of `a` and `b`."""
        return np.minimum(cdist(a, b, metric=self.norm.cdist_metric), self.cap)


@dataclass(frozen=True)
class RadiusLaw:
    """Finite discrete law of grain radii; a single atom gives a deterministic radius."""

    radii: tuple[float, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))

        if not self.radii or len(self.radii) != len(self.probabilities):
            raise ValueError("Radius law needs matching, non-empty radii and probabilities")

        if any(r < 0 for r in self.radii) or any(p < 0 for p in self.probabilities):
            raise ValueError("Radii and probabilities must be non-negative")

        if abs(sum(self.probabilities) - 1.0) > 1e-12:
            raise ValueError(f"Radius probabilities sum to {sum(self.probabilities)}, not 1")

    @classmethod
    def deterministic(cls, radius: float) -> "RadiusLaw":
        """Point mass at `radius`."""
        return cls(radii=(radius,), probabilities=(1.0,))

    @property
    def atoms(self) -> list[tuple[float, float]]:
        """(radius, probability) pairs with positive probability."""
        return [(r, p) for r, p in zip(self.radii, self.probabilities) if p > 0]

    @property
    def sup(self) -> float:
        """Essential supremum of the radius."""
        return max(r for r, _ in self.atoms)

    @property
    def is_deterministic(self) -> bool:
        """Whether the law is a point mass."""
        return len(self.atoms) == 1

    def moment(self, dimension: int) -> float:
        """E(R^D)."""
        return float(sum(p * r**dimension for r, p in self.atoms))

    def moment_radius(self, dimension: int) -> float:
        """The D-th moment radius (E R^D)^(1/D)."""
        return self.moment(dimension) ** (1 / dimension)


@dataclass(frozen=True)
class BooleanModel:
    """Germ-grain model with Poisson germs and i.i.d. ball grains."""

    germ_intensity: float
    radius_law: RadiusLaw
    norm: Norm = Norm.EUCLIDEAN

    def __post_init__(self):
        if self.germ_intensity < 0:
            raise ValueError(f"Germ intensity must be non-negative, got {self.germ_intensity}")


@dataclass(frozen=True)
class StraussParams:
    """Parameters of the Strauss density κ λ^|ϱ| γ^c(ϱ) on a window.

    An interaction of 0 selects the hard-core limit, which only the sampler supports.
    """

    intensity: float
    interaction: float
    interaction_range: float
    window: Window
    norm: Norm = Norm.EUCLIDEAN

    def __post_init__(self):
        if self.intensity <= 0:
            raise ValueError(f"Strauss intensity must be positive, got {self.intensity}")

        if not 0 <= self.interaction <= 1:
            raise ValueError(f"Strauss interaction must lie in [0, 1], got {self.interaction}")

        if self.interaction_range < 0:
            raise ValueError(f"Interaction range must be non-negative, got {self.interaction_range}")

    @property
    def hard_core(self) -> bool:
        """Whether close pairs are forbidden outright."""
        return self.interaction == 0


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by a master seed and a spawn key."""

    seed: int
    key: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"Seeds must be non-negative, got {self.seed}")

    def generator(self) -> np.random.Generator:
        """A fresh generator; the same stream always yields bit-identical draws."""
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.key))

    def substream(self, index: int) -> "RngStream":
        """Independent child stream number `index`."""
        return RngStream(seed=self.seed, key=self.key + (index,))


def as_generator(rng: "np.random.Generator | RngStream") -> np.random.Generator:
    """Accepts either a live generator or a stream description."""
    if isinstance(rng, RngStream):
        return rng.generator()

    return rng
