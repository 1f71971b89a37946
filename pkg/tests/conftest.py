from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "ccbandit", "configs")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("CCBANDIT_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


def config_path(name: str) -> str:
    return os.path.abspath(os.path.join(CONFIG_DIR, name))
