#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Base objects for report persistence."""
from abc import ABC, abstractmethod
from pathlib import Path


class ReportPaths:
    """Collection of expected paths for the reports of one experiment."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def manifest(self) -> Path:
        """Config hash, seed, resolved config and per-point statuses."""
        return self.root / "manifest.json"

    @property
    def plot_data(self) -> Path:
        """Tidy CSV, one row per sweep point per metric."""
        return self.root / "plot_data.csv"

    @property
    def rate_table(self) -> Path:
        """(n, bound) table of rate sweeps."""
        return self.root / "rate.csv"

    def point_dir(self, index: int) -> Path:
        """Directory of sweep point number `index`."""
        return self.root / f"point-{index:03d}"

    def bound(self, index: int) -> Path:
        """The itemized BoundReport JSON."""
        return self.point_dir(index) / "bound.json"

    def distances(self, index: int) -> Path:
        """Empirical distances CSV, metric,direction,value,stderr,exact."""
        return self.point_dir(index) / "distances.csv"

    def certificate(self, index: int) -> Path:
        """List of certificates."""
        return self.point_dir(index) / "certificate.json"

    def identities(self, index: int) -> Path:
        """Identity check reports."""
        return self.point_dir(index) / "identities.json"

    def summaries(self, index: int) -> Path:
        """Summary statistics CSV, statistic,r,value,stderr,n."""
        return self.point_dir(index) / "summaries.csv"


class WorkloadBase(ABC):
    """Base interface for reading and writing report files."""

    def __init__(self, root: str | Path):
        self.paths = ReportPaths(root)

    @abstractmethod
    def read(self, path: str | Path) -> list[str]:
        """Reads a report file.

        Args:
            path: the full filepath to read from

        Returns:
            List of string lines from the specified path
        """
        ...

    @abstractmethod
    def write(self, content: str, path: str | Path) -> None:
        """Writes content to a report file, creating parent directories.

        Args:
            content: string of content to write
            path: the full filepath to write to
        """
        ...

    @abstractmethod
    def exists(self, path: str | Path) -> bool:
        """Checks whether a report file is present."""
        ...
