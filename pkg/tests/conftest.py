from __future__ import annotations

import numpy as np
import pytest

from turbkd import presets


@pytest.fixture
def rx():
    return presets.RECEIVER


@pytest.fixture
def sec():
    return presets.SECURITY


@pytest.fixture
def state15():
    return presets.OPTIMIZED_STATES[15]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
