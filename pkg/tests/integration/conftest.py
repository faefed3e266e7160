# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

import pytest

from literals import THREADS_ENV


@pytest.fixture(autouse=True)
def no_thread_override(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
