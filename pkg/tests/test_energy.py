import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsroute.domain import PointConfig, Window
from gibbsroute.energy import (ORIGIN, CongestionPenalty, HopEnergies, Trajectory, TrajectoryConfig,
                               apply_replacement, delta_energy, energy_S, inflow_and_M, interference_field,
                               sir)

LINE = Window(1.0, 1)


@pytest.fixture
def pair():
    return PointConfig(2.0, np.array([[-0.5], [0.5]]), LINE)


def test_single_user_field_and_sir():
    pc = PointConfig(1.0, np.array([[0.4]]), LINE)
    f = interference_field(pc, 2.0)
    assert f(0) == 1.0
    assert sir(0, ORIGIN, f, pc, 2.0) == pytest.approx(1.0)
    cfg = TrajectoryConfig.direct(HopEnergies(pc, 2.0))
    assert energy_S(cfg) == pytest.approx(1.0)


def test_symmetric_pair(pair):
    f = interference_field(pair, 2.0)
    assert f(ORIGIN) == pytest.approx(1.0)
    assert sir(0, ORIGIN, f, pair, 2.0) == pytest.approx(1.0)
    cfg = TrajectoryConfig.direct(HopEnergies(pair, 2.0))
    assert cfg.S == pytest.approx(2.0)


def _random_config(seed, n=5, lam=3.0):
    rng = np.random.default_rng(seed)
    return PointConfig(lam, rng.uniform(-1, 1, size=(n, 1)), LINE)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 4))
def test_sir_bounded_by_lambda(seed, alpha):
    pc = _random_config(seed)
    f = interference_field(pc, alpha)
    assert all(f(i) > 0 for i in range(pc.N)) and f(ORIGIN) > 0
    for tx in range(pc.N):
        for rx in list(range(pc.N)) + [ORIGIN]:
            assert sir(tx, rx, f, pc, alpha) <= pc.lam * (1 + 1e-12)


def test_extra_hop_changes_S_by_hop_terms(pair):
    hop = HopEnergies(pair, 2.0)
    cfg = TrajectoryConfig.direct(hop)
    f = interference_field(pair, 2.0)
    inv = lambda tx, rx: 1.0 / sir(tx, rx, f, pair, 2.0)
    dS, _ = apply_replacement(cfg, Trajectory(0, (1,)))
    assert dS == pytest.approx(inv(0, 1) + inv(1, ORIGIN) - inv(0, ORIGIN))


def test_inflow_and_congestion():
    eta = CongestionPenalty()
    trajs = [Trajectory(0), Trajectory(1), Trajectory(2)]
    assert inflow_and_M(trajs, 3, eta) == ([0, 0, 0], 0)
    trajs = [Trajectory(0), Trajectory(1, (0,)), Trajectory(2, (0,))]
    inflow, M = inflow_and_M(trajs, 3, eta)
    assert inflow[0] == 2 and M == 2
    assert inflow_and_M([Trajectory(0, (1,)), Trajectory(1)], 2, eta)[1] == 0


def test_delta_energy_cases():
    pc = _random_config(1, n=3)
    cfg = TrajectoryConfig([Trajectory(0), Trajectory(1, (0,)), Trajectory(2, (0,))], HopEnergies(pc, 2.0))
    assert delta_energy(cfg, 1, Trajectory(1, (0,))) == (0.0, 0)
    # move one relay from user 0 (m=2) to the unused user 1
    assert delta_energy(cfg, 2, Trajectory(2, (1,)))[1] == -2


def test_incremental_matches_recompute():
    pc = _random_config(7, n=6)
    cfg = TrajectoryConfig.direct(HopEnergies(pc, 2.0))
    rng = random.Random(0)
    for _ in range(1000):
        u = rng.randrange(pc.N)
        relays = tuple(rng.randrange(pc.N) for _ in range(rng.randrange(3)))
        apply_replacement(cfg, Trajectory(u, relays))
    S, M = cfg.recompute()
    assert cfg.S == pytest.approx(S, abs=1e-8) and cfg.M == M


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_inflow_conservation_and_S_floor(seed):
    pc = _random_config(seed, n=4)
    rng = random.Random(seed)
    trajs = [Trajectory(i, tuple(rng.randrange(4) for _ in range(rng.randrange(3)))) for i in range(4)]
    cfg = TrajectoryConfig(trajs, HopEnergies(pc, 2.0))
    assert sum(cfg.inflow) == sum(t.k - 1 for t in trajs)
    assert cfg.S >= sum(t.k for t in trajs) / pc.lam


def test_congestion_invariant_under_relabelling():
    pts = np.array([[0.1], [0.1], [-0.3]])
    pc = PointConfig(3.0, pts, LINE)
    hop = HopEnergies(pc, 2.0)
    a = TrajectoryConfig([Trajectory(0, (2,)), Trajectory(1), Trajectory(2)], hop)
    b = TrajectoryConfig([Trajectory(0), Trajectory(1, (2,)), Trajectory(2)], hop)
    assert a.M == b.M and a.S == pytest.approx(b.S)


def test_penalty_must_be_superlinear():
    with pytest.raises(ValueError):
        CongestionPenalty(lambda m: 3 * m, "linear")
    cubic = CongestionPenalty(lambda m: m ** 3, "cubic")
    assert cubic(4) == 64 and math.isclose(cubic.table(3)[3], 27)
