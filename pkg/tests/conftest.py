from fractions import Fraction

import numpy as np
import pytest

from gibbsroute import IntensityDensity, ModelParams, PointConfig, Window, build_grid


@pytest.fixture
def line():
    return Window(1.0, 1)


@pytest.fixture
def uniform_line(line):
    return IntensityDensity.uniform(line, 1.0)


@pytest.fixture
def ref_grid(line):
    return build_grid(line, Fraction(1, 9))


@pytest.fixture
def ref_mu(uniform_line, ref_grid):
    return uniform_line.as_grid_measure(ref_grid)


@pytest.fixture
def three_users(line):
    """Small asymmetric instance with 64 configurations at k_max = 2."""
    return PointConfig(3.0, np.array([[0.2], [-0.6], [0.7]]), line)


@pytest.fixture
def tiny_params():
    return ModelParams(gamma=1.0, beta=0.5, k_max=2)
