"""Pytest configuration and fixtures."""

import numpy as np
import pytest

from meshdiff.graph import make_graph_sample
from meshdiff.verify import random_sample


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Keep the parameter cache and config lookup out of the user's home."""
    monkeypatch.setenv("MESHDIFF_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.delenv("MESHDIFF_CONFIG", raising=False)


@pytest.fixture
def two_node_graph():
    """Two free nodes one unit apart, unit diffusivity, u0 = (1, 0)."""
    return make_graph_sample(
        positions=[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        edges=[[0, 1]],
        boundary_mask=[False, False],
        diffusivity=[1.0, 1.0],
        u0=[1.0, 0.0],
    )


@pytest.fixture
def path_graph():
    """Path 0-1-2 at x = 0, 1, 3 with node 0 pinned."""
    return make_graph_sample(
        positions=[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
        edges=[[0, 1], [1, 2]],
        boundary_mask=[True, False, False],
        diffusivity=[1.0, 1.0, 1.0],
        u0=[0.0, 1.0, 0.5],
    )


@pytest.fixture
def small_graph():
    """Random 10-node kNN graph with boundary and interior nodes."""
    return random_sample(10, seed=3)


@pytest.fixture
def tetrahedron_obj(tmp_path):
    path = tmp_path / "tet.obj"
    path.write_text(
        "# closed tetrahedron\n"
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
        "f 1 3 2\nf 1 2 4\nf 2 3 4\nf 3 1 4\n"
    )
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
