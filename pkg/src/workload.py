#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Implementation of WorkloadBase on the local filesystem."""
import json
import logging
import threading
from pathlib import Path
from typing import Any

import pandas as pd
from typing_extensions import override

from core.workload import WorkloadBase

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


class ReportWorkload(WorkloadBase):
    """Filesystem report writer; every write goes through one lock."""

    def __init__(self, root: str | Path):
        super().__init__(root)
        self._lock = threading.Lock()

    @override
    def read(self, path: str | Path) -> list[str]:
        path = Path(path)
        if not path.exists():
            return []

        return path.read_text().split("\n")

    @override
    def write(self, content: str, path: str | Path) -> None:
        path = Path(path)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content)

        logger.debug(f"Wrote {path}")

    @override
    def exists(self, path: str | Path) -> bool:
        return Path(path).exists()

    # --- Report helpers ---

    def write_json(self, data: Any, path: str | Path) -> None:
        """Sorted-key JSON, newline terminated."""
        self.write(json.dumps(data, sort_keys=True, indent=2) + "\n", path)

    def write_frame(self, frame: pd.DataFrame, path: str | Path) -> None:
        """CSV without index, floats in a fixed format."""
        self.write(frame.to_csv(index=False, float_format=FLOAT_FORMAT), path)

    def read_json(self, path: str | Path) -> Any:
        """Parsed JSON content, None when the file is missing."""
        lines = self.read(path)
        if not lines:
            return None

        return json.loads("\n".join(lines))
