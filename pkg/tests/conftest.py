import os
from pathlib import Path

import numpy as np
import pytest

from gdsur.dgp import SystemParams, build_block_var, simulate
from gdsur.numerics import RngStream

# Persist the fixed-b reference tables next to the repo so repeated test
# sessions reuse them (they are regenerable from the seed).
os.environ.setdefault(
    "GDSUR_CACHE_DIR", str(Path(__file__).resolve().parent.parent / ".gdsur-cache")
)


@pytest.fixture
def rng():
    return RngStream(123456)


@pytest.fixture
def small_panel():
    """EBD panel at desk scale, shared by estimator and test smoke checks."""
    stream = RngStream(777)
    spec = build_block_var("EBD", 2, 5, rng=stream.child(0))
    params = SystemParams(n=5, r=2, alpha=np.zeros(5), beta=np.ones(10))
    return simulate(spec, params, 400, 500, rng=stream.child(1))


@pytest.fixture
def gexog_panel():
    stream = RngStream(778)
    spec = build_block_var("GEXOG", 2, 3, rng=stream.child(0))
    params = SystemParams(n=3, r=2, alpha=np.zeros(3), beta=np.ones(6))
    return simulate(spec, params, 300, 500, rng=stream.child(1))
