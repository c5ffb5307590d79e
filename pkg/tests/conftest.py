import os

import numpy as np
import pytest

from warpspec.sim import MachineConfig
from warpspec.tile_ir import parse_kernel

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "src", "warpspec", "fixtures")


def fixture_path(name):
    return os.path.normpath(os.path.join(FIXTURES, name))


def load(name):
    with open(fixture_path(name)) as f:
        return parse_kernel(f.read())


def rand_inputs(graph, seed=0):
    rng = np.random.default_rng(seed)
    return {p.name: rng.integers(-3, 4, (p.type.rows, p.type.cols))
            for p in graph.params[:-1]}


def same(got, want):
    return all(np.array_equal(got[k], want[k]) for k in want)


@pytest.fixture
def mc():
    return MachineConfig()


@pytest.fixture
def gemm():
    return load("gemm.k")


@pytest.fixture
def attention():
    return load("attention.k")
