"""Empirical trajectory settings, bounded-Lipschitz distances and the setting CSV format."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .domain import Grid, GridMeasure, GridMeasureK, PointConfig, coarsen, locate_cells
from .energy import TrajectoryConfig


class TrajectorySetting:
    """((nu_k)_{k=1..k_max}, (mu_m)_{m=0..m_max}) on one grid.

    ``tail`` is mass assigned to m > m_max; admissible empirical settings keep it at 0.
    """

    def __init__(self, grid: Grid, nu: Sequence[GridMeasureK], mum: Sequence[GridMeasure], tail: float = 0.0):
        for k, nk in enumerate(nu, start=1):
            if nk.k != k or nk.grid != grid:
                raise ValueError(f"nu[{k - 1}] must be a k={k} measure on the setting grid")
        if any(m.grid != grid for m in mum):
            raise ValueError("mu_m measures must live on the setting grid")
        self.grid = grid
        self.nu = list(nu)
        self.mum = list(mum)
        self.tail = tail

    @property
    def k_max(self) -> int:
        return len(self.nu)

    @property
    def m_max(self) -> int:
        return len(self.mum) - 1

    def transmitters(self) -> GridMeasure:
        """sum_k pi_0 nu_k."""
        return GridMeasure(self.grid, sum(nk.marginal(0).masses for nk in self.nu))

    def relays(self) -> GridMeasure:
        """M = sum_k sum_{l>=1} pi_l nu_k."""
        acc = np.zeros(self.grid.n_cells, dtype=self.nu[0].marginal(0).masses.dtype)
        for nk in self.nu:
            for l in range(1, nk.k):
                acc = acc + nk.marginal(l).masses
        return GridMeasure(self.grid, acc)

    def users_from_loads(self) -> GridMeasure:
        """sum_m mu_m."""
        return GridMeasure(self.grid, sum(m.masses for m in self.mum))

    def loads(self) -> GridMeasure:
        """sum_m m mu_m."""
        acc = self.mum[0].masses * 0
        for m, mm in enumerate(self.mum):
            acc = acc + m * mm.masses
        return GridMeasure(self.grid, acc)

    def coarsen(self, target) -> "TrajectorySetting":
        return TrajectorySetting(
            coarsen(self.nu[0], target).grid,
            [coarsen(nk, target) for nk in self.nu],
            [coarsen(mm, target) for mm in self.mum],
            self.tail,
        )

    def padded(self, m_max: int) -> "TrajectorySetting":
        if m_max <= self.m_max:
            return self
        extra = [GridMeasure(self.grid, np.zeros(self.grid.n_cells)) for _ in range(m_max - self.m_max)]
        return TrajectorySetting(self.grid, self.nu, self.mum + extra, self.tail)

    def mix(self, other: "TrajectorySetting", t: float) -> "TrajectorySetting":
        """(1 - t) self + t other."""
        if other.k_max != self.k_max or other.grid != self.grid:
            raise ValueError("settings differ in shape")
        m_max = max(self.m_max, other.m_max)
        a, b = self.padded(m_max), other.padded(m_max)
        nu = [GridMeasureK(self.grid, k + 1, (1 - t) * x.to_dense() + t * y.to_dense())
              for k, (x, y) in enumerate(zip(a.nu, b.nu))]
        mum = [GridMeasure(self.grid, (1 - t) * x.masses + t * y.masses) for x, y in zip(a.mum, b.mum)]
        return TrajectorySetting(self.grid, nu, mum, (1 - t) * a.tail + t * b.tail)


@dataclass
class CountSetting:
    """Integer-valued (lambda-scaled) coarsened setting of one trajectory configuration."""

    grid: Grid
    k_max: int
    users: np.ndarray  # users per cell
    nu: dict  # k -> {cell tuple: count}
    mum: dict  # m -> per-cell counts

    def hops(self) -> int:
        return sum((k - 1) * c for k, d in self.nu.items() for c in d.values())

    def incoming(self) -> np.ndarray:
        out = np.zeros(self.grid.n_cells, dtype=np.int64)
        for k, d in self.nu.items():
            for key, c in d.items():
                for cell in key[1:]:
                    out[cell] += c
        return out


def empirical_counts(tconfig: TrajectoryConfig, points: PointConfig, grid: Grid) -> CountSetting:
    cells = locate_cells(points.points, grid)
    k_max = max((t.k for t in tconfig.trajectories), default=1)
    nu: dict = {}
    for t in tconfig.trajectories:
        key = (int(cells[t.user]),) + tuple(int(cells[r]) for r in t.relays)
        d = nu.setdefault(t.k, {})
        d[key] = d.get(key, 0) + 1
    mum: dict = {}
    for i, m in enumerate(tconfig.inflow):
        arr = mum.setdefault(m, np.zeros(grid.n_cells, dtype=np.int64))
        arr[cells[i]] += 1
    users = np.bincount(cells, minlength=grid.n_cells)
    return CountSetting(grid, k_max, users, nu, mum)


def trajectory_setting_of(tconfig: TrajectoryConfig, points: PointConfig, grid: Grid,
                          k_max: Optional[int] = None, exact: bool = False) -> TrajectorySetting:
    """Psi_lambda(s): R_{lambda,k} and P_{lambda,m} coarsened to the grid.

    With ``exact`` the masses are Fractions count/lambda (lambda must be rational).
    """
    counts = empirical_counts(tconfig, points, grid)
    k_max = k_max or counts.k_max
    if counts.k_max > k_max:
        raise ValueError("configuration uses more hops than k_max")
    n = grid.n_cells
    lam = Fraction(points.lam).limit_denominator(10**12) if exact else float(points.lam)
    dtype = object if exact else float

    def scaled(arr):
        out = np.empty(arr.shape, dtype=dtype)
        flat = out.reshape(-1)
        for j, v in enumerate(arr.reshape(-1)):
            flat[j] = (Fraction(int(v)) / lam) if exact else v / lam
        return out

    nu = []
    for k in range(1, k_max + 1):
        d = counts.nu.get(k, {})
        if k <= GridMeasureK.DENSE_MAX_K:
            arr = np.zeros((n,) * k, dtype=np.int64)
            for key, c in d.items():
                arr[key] = c
            nu.append(GridMeasureK(grid, k, scaled(arr)))
        else:
            nu.append(GridMeasureK(grid, k, sparse={key: (Fraction(c) / lam if exact else c / lam)
                                                    for key, c in d.items()}))
    m_max = (k_max - 1) * points.N
    mum = []
    for m in range(m_max + 1):
        arr = counts.mum.get(m, np.zeros(n, dtype=np.int64))
        mum.append(GridMeasure(grid, scaled(arr)))
    return TrajectorySetting(grid, nu, mum, 0.0)


# -- bounded-Lipschitz distance ------------------------------------------------


def _support_points(measure):
    if isinstance(measure, GridMeasure):
        idx = np.flatnonzero(measure.masses != 0)
        return {(int(i),): float(measure.masses[i]) for i in idx}, measure.grid.centers(), 1
    return {key: float(v) for key, v in measure.items()}, measure.grid.centers(), measure.k


def bl_points(xs: np.ndarray, weights: np.ndarray) -> float:
    """sup { sum_j w_j f(x_j) : |f| <= 1, Lip(f) <= 1 } for signed weights on points xs.

    Restricting f to the support is exact: any admissible values there extend
    to the whole space (McShane extension, then clipping to [-1, 1]).
    """
    n = len(weights)
    if n == 0 or not np.any(weights):
        return 0.0
    if n == 1:
        return abs(float(weights[0]))
    dist = np.linalg.norm(xs[:, None, :] - xs[None, :, :], axis=-1)
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    rows = np.arange(len(ii))
    A = coo_matrix((np.concatenate([np.ones(len(ii)), -np.ones(len(ii))]),
                    (np.concatenate([rows, rows]), np.concatenate([ii, jj]))), shape=(len(ii), n))
    res = linprog(-np.asarray(weights, dtype=float), A_ub=A.tocsr(), b_ub=dist[ii, jj],
                  bounds=[(-1.0, 1.0)] * n, method="highs")
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, float(-res.fun))


def bl_distance(a, b) -> float:
    """Bounded-Lipschitz distance between two grid measures of the same k and grid."""
    if a.k != b.k or a.grid != b.grid:
        raise ValueError("measures differ in k or grid")
    pa, centers, k = _support_points(a)
    pb, _, _ = _support_points(b)
    keys = sorted(set(pa) | set(pb))
    w = np.array([pa.get(key, 0.0) - pb.get(key, 0.0) for key in keys])
    xs = np.array([np.concatenate([centers[i] for i in key]) for key in keys]) if keys else np.zeros((0, k))
    return bl_points(xs, w)


@dataclass(frozen=True)
class SettingDistance:
    d_nu: tuple
    d_mum: tuple

    @property
    def d0(self) -> float:
        return sum(self.d_nu) + sum(2.0**-m * x for m, x in enumerate(self.d_mum))


def setting_distance(a: TrajectorySetting, b: TrajectorySetting) -> SettingDistance:
    """d_0 = sum_k d_k(nu_k) + sum_m 2^-m d_1(mu_m)."""
    if a.grid != b.grid or a.k_max != b.k_max:
        raise ValueError("settings differ in grid or k_max")
    m_max = max(a.m_max, b.m_max)
    a, b = a.padded(m_max), b.padded(m_max)
    d_nu = tuple(bl_distance(x, y) for x, y in zip(a.nu, b.nu))
    d_mum = tuple(bl_distance(x, y) for x, y in zip(a.mum, b.mum))
    return SettingDistance(d_nu, d_mum)


# -- CSV ---------------------------------------------------------------------


def write_setting_csv(path, setting: TrajectorySetting, config_hash: str = "", tol: float = 0.0) -> None:
    """Rows (kind, index, c0..c_{k_max-1}, mass); unused cell columns are left empty."""
    kmax = setting.k_max
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["kind", "index"] + [f"c{j}" for j in range(kmax)] + ["mass"])
        for k, nk in enumerate(setting.nu, start=1):
            for key, v in nk.items():
                if abs(float(v)) > tol:
                    w.writerow(["nu", k] + list(key) + [""] * (kmax - k) + [repr(float(v))])
        for m, mm in enumerate(setting.mum):
            for (i,), v in mm.items():
                if abs(float(v)) > tol:
                    w.writerow(["mum", m, i] + [""] * (kmax - 1) + [repr(float(v))])


def read_setting_csv(path, grid: Grid) -> TrajectorySetting:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    kmax = len(header) - 3
    nu_sparse = [dict() for _ in range(kmax)]
    mum_rows: dict = {}
    for r in body:
        kind, idx, mass = r[0], int(r[1]), float(r[-1])
        cells = tuple(int(c) for c in r[2:-1] if c != "")
        if kind == "nu":
            nu_sparse[idx - 1][cells] = mass
        else:
            mum_rows.setdefault(idx, {})[cells[0]] = mass
    nu = [GridMeasureK(grid, k + 1, sparse=d) for k, d in enumerate(nu_sparse)]
    m_max = max(mum_rows) if mum_rows else 0
    mum = []
    for m in range(m_max + 1):
        arr = np.zeros(grid.n_cells)
        for i, v in mum_rows.get(m, {}).items():
            arr[i] = v
        mum.append(GridMeasure(grid, arr))
    return TrajectorySetting(grid, nu, mum)
