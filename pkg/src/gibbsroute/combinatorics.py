"""Exact cardinalities of coarse-grained trajectory classes, and their exponential rates."""

from __future__ import annotations

import csv
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np

from .domain import Grid, GridMeasure, PointConfig, locate_cells
from .empirical import CountSetting, TrajectorySetting
from .gibbs import DEFAULT_ENUMERATION_BUDGET, BudgetExceeded, n_user_options, user_options
from .variational import entropy_I


@lru_cache(maxsize=None)
def factorial(n: int) -> int:
    return math.factorial(n)


def multinomial(top: int, parts: Iterable[int]) -> int:
    parts = list(parts)
    if sum(parts) != top or any(p < 0 for p in parts):
        raise ValueError(f"parts {parts} do not sum to {top}")
    out = factorial(top)
    for p in parts:
        out //= factorial(p)
    return out


@dataclass(frozen=True)
class CountTerms:
    N0: int
    N1: int
    N2: int
    N3: int
    N4: int

    @property
    def J(self) -> int:
        """Number of configurations in the class fixed by routes and loads."""
        return self.N1 * self.N2 * self.N3

    @property
    def K(self) -> int:
        """Number of configurations in the class fixed by routes only."""
        return self.N1 * self.N4


def _validate(cs: CountSetting) -> None:
    users = np.zeros(cs.grid.n_cells, dtype=np.int64)
    for d in cs.nu.values():
        for key, c in d.items():
            if c < 0 or int(c) != c:
                raise ValueError("route counts must be nonnegative integers")
            users[key[0]] += c
    if not np.array_equal(users, np.asarray(cs.users)):
        raise ValueError("route counts do not match the users per cell")
    if cs.mum:
        by_m = sum(np.asarray(a) for a in cs.mum.values())
        loads = sum(m * np.asarray(a) for m, a in cs.mum.items())
        if not np.array_equal(by_m, users):
            raise ValueError("load classes do not partition the users of each cell")
        if not np.array_equal(loads, cs.incoming()):
            raise ValueError("load classes do not account for the incoming hops")


def count_terms(cs: CountSetting, N: Optional[int] = None) -> CountTerms:
    """N0..N4 as exact integers for an integer (lambda-scaled) class."""
    _validate(cs)
    n = cs.grid.n_cells
    N = int(np.sum(cs.users)) if N is None else N
    routes_from = [[] for _ in range(n)]
    for d in cs.nu.values():
        for key, c in d.items():
            routes_from[key[0]].append(int(c))
    incoming = cs.incoming()
    N1 = N2 = N3 = N4 = 1
    for c in range(n):
        u = int(cs.users[c])
        N1 *= multinomial(u, routes_from[c])
        N4 *= u ** int(incoming[c])
        if cs.mum:
            N2 *= multinomial(u, [int(a[c]) for a in cs.mum.values()])
            denom = 1
            for m, a in cs.mum.items():
                denom *= factorial(m) ** int(a[c])
            N3 *= factorial(int(incoming[c])) // denom
    return CountTerms(N ** cs.hops(), N1, N2, N3, N4)


def count_setting_of(setting: TrajectorySetting, lam) -> Optional[CountSetting]:
    """lambda * setting as integer counts, or None if any scaled mass is not an integer."""
    lam = Fraction(lam)

    def as_int(v):
        x = Fraction(v) * lam if not isinstance(v, float) else Fraction(v).limit_denominator(10**9) * lam
        return int(x) if x.denominator == 1 else None

    nu = {}
    for nk in setting.nu:
        d = {}
        for key, v in nk.items():
            c = as_int(v)
            if c is None:
                return None
            if c:
                d[key] = c
        if d:
            nu[nk.k] = d
    mum = {}
    for m, mm in enumerate(setting.mum):
        arr = np.zeros(setting.grid.n_cells, dtype=np.int64)
        for (i,), v in mm.items():
            c = as_int(v)
            if c is None:
                return None
            arr[i] = c
        if arr.any():
            mum[m] = arr
    users = np.zeros(setting.grid.n_cells, dtype=np.int64)
    for d in nu.values():
        for key, c in d.items():
            users[key[0]] += c
    return CountSetting(setting.grid, setting.k_max, users, nu, mum)


def class_key(cs: CountSetting, with_loads: bool = True) -> tuple:
    routes = tuple(sorted((key, int(c)) for d in cs.nu.values() for key, c in d.items() if c))
    if not with_loads:
        return routes
    loads = tuple(sorted((m, int(i), int(a[i])) for m, a in cs.mum.items() for i in np.flatnonzero(a)))
    return routes, loads


@dataclass
class ClassCensus:
    counts: dict  # class key -> number of configurations
    settings: dict  # class key -> CountSetting
    total: int


def class_census(config: PointConfig, grid: Grid, k_max: int, with_loads: bool = True,
                 budget: int = DEFAULT_ENUMERATION_BUDGET) -> ClassCensus:
    """Group every trajectory configuration by its coarse-grained class."""
    N = config.N
    total = n_user_options(N, k_max) ** N
    if total > budget:
        raise BudgetExceeded(f"{total} configurations exceed the enumeration budget {budget}")
    cells = [int(c) for c in locate_cells(config.points, grid)]
    options = user_options(N, k_max)
    route = [[(cells[i],) + tuple(cells[r] for r in o) for o in options] for i in range(N)]
    counts: Counter = Counter()
    settings = {}
    for choice in itertools.product(range(len(options)), repeat=N):
        routes = Counter(route[i][j] for i, j in enumerate(choice))
        key_r = tuple(sorted(routes.items()))
        if with_loads:
            inflow = [0] * N
            for j in choice:
                for r in options[j]:
                    inflow[r] += 1
            key = (key_r, tuple(sorted(Counter((m, cells[i]) for i, m in enumerate(inflow)).items())))
        else:
            key = key_r
        if key not in counts:
            settings[key] = _setting_from_key(grid, k_max, key, with_loads)
        counts[key] += 1
    # re-key to the canonical form used by class_key
    out_counts, out_settings = {}, {}
    for key, c in counts.items():
        cs = settings[key]
        ck = class_key(cs, with_loads)
        out_counts[ck] = c
        out_settings[ck] = cs
    return ClassCensus(out_counts, out_settings, total)


def _setting_from_key(grid: Grid, k_max: int, key, with_loads: bool) -> CountSetting:
    key_r, key_m = key if with_loads else (key, ())
    n = grid.n_cells
    nu: dict = {}
    users = np.zeros(n, dtype=np.int64)
    for r, c in key_r:
        nu.setdefault(len(r), {})[r] = c
        users[r[0]] += c
    mum: dict = {}
    for (m, cell), c in key_m:
        mum.setdefault(m, np.zeros(n, dtype=np.int64))[cell] += c
    return CountSetting(grid, k_max, users, nu, mum)


def brute_force_class_count(config: PointConfig, grid: Grid, target, k_max: int,
                            budget: int = DEFAULT_ENUMERATION_BUDGET) -> int:
    """Configurations whose coarse-grained setting equals ``target`` (CountSetting or
    TrajectorySetting with masses in (1/lambda) Z)."""
    if isinstance(target, TrajectorySetting):
        target = count_setting_of(target, config.lam)
        if target is None:
            return 0
    with_loads = bool(target.mum)
    census = class_census(config, grid, k_max, with_loads, budget)
    return census.counts.get(class_key(target, with_loads), 0)


# -- rates -------------------------------------------------------------------


def _cumulative_round(values: np.ndarray) -> np.ndarray:
    """Integers whose partial sums are the rounded partial sums of ``values``."""
    s = np.rint(np.cumsum(values)).astype(np.int64)
    return np.diff(np.concatenate([[0], s]))


def round_setting(psi: TrajectorySetting, lam: int) -> CountSetting:
    """An integer class close to lam * psi that satisfies the discrete constraints exactly.

    Routes are rounded cumulatively in order of hop count, which keeps the total
    number of hops within k_max - 1 of lam * M(W). Load classes are then rounded
    per cell and nudged between neighbouring m until they carry the incoming hops.
    """
    grid, n = psi.grid, psi.grid.n_cells
    keys, vals = [], []
    for nk in psi.nu:
        for key, v in nk.items():
            keys.append(key)
            vals.append(float(v) * lam)
    counts = _cumulative_round(np.asarray(vals))
    if np.any(counts < 0):
        raise ValueError("rounding produced a negative count")
    nu: dict = {}
    users = np.zeros(n, dtype=np.int64)
    incoming = np.zeros(n, dtype=np.int64)
    for key, c in zip(keys, counts):
        if c:
            nu.setdefault(len(key), {})[key] = int(c)
            users[key[0]] += c
            for cell in key[1:]:
                incoming[cell] += c
    m_vals = np.arange(psi.m_max + 1)
    target = np.array([mm.masses.astype(float) for mm in psi.mum]) * lam  # (m, n)
    mum_arr = np.zeros_like(target, dtype=np.int64)
    for c in range(n):
        col = _largest_remainder(target[:, c], int(users[c]))
        diff = int(incoming[c]) - int(m_vals @ col)
        while diff:
            step = 1 if diff > 0 else -1
            # move one user from m to m + step where the class is most over-filled
            best, best_score = None, None
            for m in range(len(col)):
                j = m + step
                if col[m] == 0 or not 0 <= j < len(col):
                    continue
                score = (col[m] - target[m, c]) - (col[j] - target[j, c])
                if best_score is None or score > best_score:
                    best, best_score = m, score
            if best is None:
                raise ValueError(f"cannot carry {incoming[c]} hops with {users[c]} users in cell {c}")
            col[best] -= 1
            col[best + step] += 1
            diff -= step
        mum_arr[:, c] = col
    mum = {m: mum_arr[m] for m in range(len(mum_arr)) if mum_arr[m].any()}
    return CountSetting(grid, psi.k_max, users, nu, mum)


def _largest_remainder(x: np.ndarray, total: int) -> np.ndarray:
    x = np.maximum(x, 0.0)
    if x.sum() > 0:
        x = x * (total / x.sum())
    base = np.floor(x).astype(np.int64)
    short = total - int(base.sum())
    order = np.argsort(-(x - base), kind="stable")
    base[order[:short]] += 1
    return base


@dataclass(frozen=True)
class RateRow:
    lam: int
    delta: Fraction
    rate: float  # (1/lam) log(N1 N2 N3 / N0)
    minus_I: float
    hops_per_lam: float
    M_W: float

    @property
    def gap(self) -> float:
        return abs(self.rate - self.minus_I)

    @property
    def hops_gap(self) -> float:
        return abs(self.hops_per_lam - self.M_W)


RATE_FIELDS = ["lambda", "delta", "rate", "minus_I", "gap", "hops_per_lambda", "M_W", "hops_gap"]


def rate_comparison(psi: TrajectorySetting, mu: GridMeasure, lambdas: Iterable[int],
                    delta=None) -> list:
    """Counting rate of lambda-rounded copies of psi against -I(psi), coarsened to ``delta``."""
    if delta is not None and Fraction(delta) != psi.grid.delta:
        from .domain import coarsen

        psi = psi.coarsen(Fraction(delta))
        mu = coarsen(mu, Fraction(delta))
    I, _ = entropy_I(psi, mu)
    M_W = float(psi.relays().total)
    rows = []
    for lam in lambdas:
        lam = int(lam)
        cs = round_setting(psi, lam)
        t = count_terms(cs)
        log_ratio = math.log(t.J) - math.log(t.N0) if t.N0 > 1 else math.log(t.J)
        rows.append(RateRow(lam, psi.grid.delta, log_ratio / lam, -I, cs.hops() / lam, M_W))
    return rows


def write_rate_csv(path, rows: list, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(RATE_FIELDS)
        for r in rows:
            w.writerow([r.lam, str(r.delta), repr(r.rate), repr(r.minus_I), repr(r.gap),
                        repr(r.hops_per_lam), repr(r.M_W), repr(r.hops_gap)])
