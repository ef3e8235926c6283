import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsroute.domain import GridMeasure, GridMeasureK, IntensityDensity, Window, build_grid
from gibbsroute.empirical import TrajectorySetting
from gibbsroute.gibbs import ModelParams
from gibbsroute.variational import (NotAdmissible, check_admissible, entropy_I, eval_functionals, eval_J,
                                    functional_M, poisson_weights, random_admissible_setting, rel_entropy)

LINE = Window(1.0, 1)


def _mu(delta=Fraction(1, 3), mass=1.0):
    g = build_grid(LINE, delta)
    return g, IntensityDensity.uniform(LINE, mass).as_grid_measure(g)


def _forced(g, mu, m_max=3):
    zero = np.zeros(g.n_cells)
    return TrajectorySetting(g, [GridMeasureK(g, 1, mu.masses)],
                             [GridMeasure(g, mu.masses)] + [GridMeasure(g, zero) for _ in range(m_max)])


def test_relative_entropy_examples():
    rho = np.array([0.2, 0.3, 0.5])
    assert rel_entropy(rho, rho) == 0
    assert rel_entropy(np.zeros(3), rho) == pytest.approx(1.0)
    assert rel_entropy(np.array([0.1, 0, 0]), np.array([0, 1.0, 1.0])) == math.inf


def test_poisson_weights_sum_to_one():
    c, tail = poisson_weights(2.0, 10)
    assert c.sum() + tail == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("mass", [1.0, 2.5])
def test_forced_setting(mass):
    g, mu = _mu(mass=mass)
    psi = _forced(g, mu)
    assert check_admissible(psi, mu).as_tuple() == (0.0, 0.0, 0.0)
    fv = eval_functionals(psi, mu, ModelParams(gamma=1.0, beta=1.0, k_max=1))
    assert fv.I == pytest.approx(0.0, abs=1e-14)
    assert fv.M == 0 and fv.I_alt == pytest.approx(0.0, abs=1e-14)


def test_doubled_transmitters_residual():
    g, mu = _mu(Fraction(1))
    psi = _forced(g, mu)
    psi.nu[0] = GridMeasureK(g, 1, 2 * mu.masses)
    res = check_admissible(psi, mu)
    assert res.transmitters == pytest.approx(float(mu.total)) and not res.passed
    with pytest.raises(NotAdmissible):
        eval_functionals(psi, mu, ModelParams(k_max=1))


def test_congestion_functional():
    g, mu = _mu()
    psi = _forced(g, mu)
    psi.mum[2] = GridMeasure(g, [0.5, 0.0, 0.0])
    assert functional_M(psi, ModelParams().eta) == pytest.approx(1.0)


@pytest.mark.parametrize("k_max", [1, 2, 3])
def test_uniform_strategy_entropy_floor(k_max):
    g, mu = _mu(Fraction(1, 9), 1.7)
    m, mW = mu.masses, float(mu.total)
    nu = []
    for k in range(1, k_max + 1):
        arr = m
        for _ in range(k - 1):
            arr = np.multiply.outer(arr, m / mW)
        nu.append(GridMeasureK(g, k, arr / k_max))
    assert eval_J(nu, mu) == pytest.approx(-mW * math.log(k_max), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]))
def test_entropy_forms_agree_and_respect_floor(seed, k_max):
    g, mu = _mu(Fraction(1, 3), 1.3)
    psi = random_admissible_setting(g, mu, k_max, np.random.default_rng(seed))
    I, I_alt = entropy_I(psi, mu)
    assert abs(I - I_alt) <= 1e-9
    assert I + float(mu.total) * math.log(k_max) >= -1e-12


def test_entropy_is_convex():
    g, mu = _mu(Fraction(1, 3))
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = (random_admissible_setting(g, mu, 2, rng) for _ in range(2))
        mid = a.mix(b, 0.5)
        lhs = entropy_I(mid, mu)[0]
        assert lhs <= 0.5 * entropy_I(a, mu)[0] + 0.5 * entropy_I(b, mu)[0] + 1e-9


def test_objective_monotone_in_parameters():
    g, mu = _mu()
    psi = random_admissible_setting(g, mu, 2, np.random.default_rng(1))
    objs = [eval_functionals(psi, mu, ModelParams(gamma=gm, beta=b, k_max=2)).objective
            for gm, b in [(0, 0), (1, 0), (1, 1), (2, 1)]]
    assert objs == sorted(objs)


def test_unresolved_tail_rejected():
    g, mu = _mu()
    psi = _forced(g, mu)
    psi.tail = 0.1
    with pytest.raises(ValueError):
        entropy_I(psi, mu)
