import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lattice_core import Environment, GraphMode  # noqa: E402


@pytest.fixture
def make_env():
    """Factory for seeded environments: make_env(seed, p=0.5, d=1, mode='semi')"""

    def build(seed: int, p: float = 0.5, d: int = 1, mode: str = "semi", n_max: int = 1_000_000) -> Environment:
        return Environment(seed=seed, p=p, mode=GraphMode.from_name(mode, d), n_max=n_max)

    return build


@pytest.fixture
def semi1() -> GraphMode:
    return GraphMode.semi(1)


@pytest.fixture
def semi2() -> GraphMode:
    return GraphMode.semi(2)
