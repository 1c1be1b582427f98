"""Shared fixtures: a small sensor, fixed seeds, and a temp workspace."""

import numpy as np
import pytest

from gelsim import SensorConfig


@pytest.fixture
def cfg():
    """Small sensor used by the fast unit tests."""
    return SensorConfig(width_px=160, height_px=120, pixel_pitch_mm=0.03)


@pytest.fixture
def rng():
    """Deterministic generator so property tests are reproducible."""
    return np.random.default_rng(1234)
