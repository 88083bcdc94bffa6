import numpy as np
import pytest

from skelnas.skeleton import SkeletonGraph, load_skeleton


@pytest.fixture(scope="session")
def skel():
    return load_skeleton()


@pytest.fixture(scope="session")
def tiny_graph():
    """Six joints, two body parts; small enough for finite-difference checks."""
    return SkeletonGraph(
        vertex_count=6,
        edges=((0, 1), (1, 2), (0, 3), (3, 4), (4, 5)),
        central_joint=0,
        trunk_pair=(0, 1),
        parts={"upper": (0, 1, 2), "lower": (3, 4, 5)},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
