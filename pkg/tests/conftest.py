import functools
import math

import numpy as np
import pytest
from hypothesis import settings

from conical import jm
from conical.config import RunConfig
from conical.suites import en_set, run_suite

# first calls trigger JIT compilation, so wall-clock deadlines are meaningless
settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def en2():
    return en_set(3, 2)


@pytest.fixture(scope="session")
def jmp():
    return jm.JmParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


ALPHA = math.pi / 4


@functools.lru_cache(maxsize=None)
def default_suite(name):
    """Run a verification suite once per session at the default configuration."""
    return run_suite(name, RunConfig())


def direction_ratios(res):
    """Per (sample, N) ratio of the largest to the smallest energy over the direction grid."""
    table = res.tables["energy"]
    sid, n, e = (table.columns.index(c) for c in ("set_id", "N_or_Kmax", "energy"))
    groups = {}
    for row in table.rows:
        groups.setdefault((row[n], row[sid]), []).append(row[e])
    return {k: max(v) / min(v) for k, v in groups.items()}
