import os
import time

# allow real multi-threaded renders even on single-core machines, so thread-count tests are not vacuous
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from splatnav.synth import builtin_world, synthesize
from splatnav.topomap import TopomapConfig, build_topomap

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

WORLDS = ("corridor", "l_room", "two_room")


@pytest.fixture(scope="session")
def worlds():
    """Synthesised built-in worlds, keyed by name."""
    return {name: synthesize(builtin_world(name)) for name in WORLDS}


@pytest.fixture(scope="session")
def world_graphs(worlds):
    """Topological maps of every built-in world with default thresholds, plus build seconds."""
    out = {}
    for name, res in worlds.items():
        t0 = time.perf_counter()
        g = build_topomap(res.scene, res.spec.start_position(), TopomapConfig())
        out[name] = (g, time.perf_counter() - t0)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
