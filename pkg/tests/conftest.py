import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent.parent))

from kan import SkewMap, make_profile
from surgery import Stage, default_da, default_push, make_layered
from torus import make_anosov

settings.register_profile("fast", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("debugger", max_examples=5, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))

np.seterr(all="warn")


@pytest.fixture(scope="session")
def base():
    return make_anosov(8, 7, 1, 1)


@pytest.fixture(scope="session")
def skew(base):
    return SkewMap(base, make_profile(base))


@pytest.fixture(scope="session")
def layered(skew):
    return make_layered(skew, default_da(), default_push(), Stage.F)


@pytest.fixture(scope="session")
def f0(layered):
    return layered.with_stage(Stage.F0)


@pytest.fixture(scope="session")
def f1(layered):
    return layered.with_stage(Stage.F1)


@pytest.fixture(scope="session")
def f(layered):
    return layered


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
