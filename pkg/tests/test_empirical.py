import random
from fractions import Fraction

import numpy as np
import pytest

from gibbsroute.domain import GridMeasure, PointConfig, Window, build_grid, coarsen
from gibbsroute.empirical import (TrajectorySetting, bl_distance, bl_points, read_setting_csv,
                                  setting_distance, trajectory_setting_of, write_setting_csv)
from gibbsroute.energy import HopEnergies, Trajectory, TrajectoryConfig

LINE = Window(1.0, 1)


def _random_tconfig(n=5, k_max=3, seed=0, lam=4):
    rng = np.random.default_rng(seed)
    pc = PointConfig(lam, rng.uniform(-0.99, 0.99, size=(n, 1)), LINE)
    r = random.Random(seed)
    trajs = [Trajectory(i, tuple(r.randrange(n) for _ in range(r.randrange(k_max)))) for i in range(n)]
    return pc, TrajectoryConfig(trajs, HopEnergies(pc, 2.0))


def test_all_direct_setting(three_users):
    g = build_grid(LINE, Fraction(1, 3))
    cfg = TrajectoryConfig.direct(HopEnergies(three_users, 2.0))
    s = trajectory_setting_of(cfg, three_users, g, k_max=2)
    L = three_users.empirical(g).masses
    assert np.array_equal(s.nu[0].masses, L) and np.array_equal(s.mum[0].masses, L)
    assert s.nu[1].total == 0 and all(m.total == 0 for m in s.mum[1:])


@pytest.mark.parametrize("seed", range(5))
def test_discrete_constraints_hold_exactly(seed):
    pc, cfg = _random_tconfig(seed=seed)
    g = build_grid(LINE, Fraction(1, 9))
    s = trajectory_setting_of(cfg, pc, g, exact=True)
    n_over_lam = Fraction(pc.N) / Fraction(pc.lam)
    assert sum(nk.total for nk in s.nu) == n_over_lam
    assert sum(s.users_from_loads().masses) == n_over_lam
    assert list(s.loads().masses) == list(s.relays().masses)
    assert s.m_max == (s.k_max - 1) * pc.N


@pytest.mark.parametrize("seed", range(3))
def test_setting_commutes_with_coarsening(seed):
    pc, cfg = _random_tconfig(seed=seed)
    fine, coarse = build_grid(LINE, Fraction(1, 9)), build_grid(LINE, Fraction(1, 3))
    a = trajectory_setting_of(cfg, pc, fine, exact=True).coarsen(coarse)
    b = trajectory_setting_of(cfg, pc, coarse, exact=True)
    for x, y in zip(a.nu, b.nu):
        assert np.array_equal(x.to_dense(), y.to_dense())
    for x, y in zip(a.mum, b.mum):
        assert list(x.masses) == list(y.masses)


def test_bl_distance_examples():
    assert bl_points(np.array([[0.0], [0.5]]), np.array([1.0, -1.0])) == pytest.approx(0.5)
    assert bl_points(np.array([[0.0], [3.0]]), np.array([1.0, -1.0])) == pytest.approx(2.0)
    g = build_grid(LINE, Fraction(1, 3))
    a, b = GridMeasure(g, [1, 0, 0]), GridMeasure(g, [0, 1, 0])
    assert bl_distance(a, a) == 0
    assert bl_distance(a, b) == pytest.approx(2 / 3)


def test_bl_distance_triangle_inequality():
    g = build_grid(LINE, Fraction(1, 9))
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b, c = (GridMeasure(g, rng.random(9) * (rng.random(9) < 0.6)) for _ in range(3))
        assert bl_distance(a, c) <= bl_distance(a, b) + bl_distance(b, c) + 1e-9


def _empty_setting(g, k_max=2, m_max=4):
    from gibbsroute.domain import GridMeasureK

    nu = [GridMeasureK(g, k) for k in range(1, k_max + 1)]
    mum = [GridMeasure(g, np.zeros(g.n_cells)) for _ in range(m_max + 1)]
    return TrajectorySetting(g, nu, mum)


def test_setting_distance_weights_loads():
    g = build_grid(LINE, Fraction(1, 3))
    a, b = _empty_setting(g), _empty_setting(g)
    assert setting_distance(a, a).d0 == 0
    b.mum[3] = GridMeasure(g, [0.0, 0.4, 0.0])
    x = bl_distance(a.mum[3], b.mum[3])
    assert setting_distance(a, b).d0 == pytest.approx(x / 8)
    assert setting_distance(b, a).d0 == pytest.approx(setting_distance(a, b).d0)


def test_setting_csv_roundtrip(tmp_path):
    pc, cfg = _random_tconfig(seed=2)
    g = build_grid(LINE, Fraction(1, 3))
    s = trajectory_setting_of(cfg, pc, g)
    write_setting_csv(tmp_path / "s.csv", s, "abc")
    assert (tmp_path / "s.csv").read_text().startswith("# config_hash=abc\nkind,index,c0,c1,c2,mass\n")
    back = read_setting_csv(tmp_path / "s.csv", g)
    for x, y in zip(s.nu, back.nu):
        assert np.allclose(x.to_dense(), y.to_dense())
    for m in range(min(s.m_max, back.m_max) + 1):
        assert np.allclose(s.mum[m].masses, back.mum[m].masses)


def test_setting_mix_is_convex_combination():
    pc, cfg = _random_tconfig(seed=3)
    g = build_grid(LINE, Fraction(1, 3))
    s = trajectory_setting_of(cfg, pc, g)
    half = s.mix(s, 0.5)
    assert np.allclose(half.nu[1].to_dense(), s.nu[1].to_dense())
    assert coarsen(half.nu[0], build_grid(LINE, 1)).total == pytest.approx(s.nu[0].total)
