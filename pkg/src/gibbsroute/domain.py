"""Window geometry, intensity measures, Poisson sampling and the triadic grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

# Sampled points are kept away from every cell face down to this triadic level.
MAX_LEVEL = 10
_FACE_TOL = 1e-10

Number = Union[float, Fraction]


def path_loss(distance, alpha: float):
    """min(1, r^-alpha); works on scalars and arrays."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be nonnegative")
    with np.errstate(divide="ignore"):
        out = np.where(d <= 1.0, 1.0, np.power(np.maximum(d, 1.0), -alpha))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Window:
    """The cube [-r, r]^d with the base station at the origin."""

    r: float = 1.0
    d: int = 1

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("window half-side r must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("dimension d must be a positive integer")

    @property
    def volume(self) -> float:
        return (2.0 * self.r) ** self.d

    @property
    def origin(self) -> np.ndarray:
        return np.zeros(self.d)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.abs(x) <= self.r))


def triadic_level(delta: Number) -> int:
    """Return n with delta == 3**-n, or raise."""
    frac = Fraction(delta).limit_denominator(3**30) if isinstance(delta, float) else Fraction(delta)
    if frac <= 0 or frac.numerator != 1:
        raise ValueError(f"delta={delta} is not of the form 3^-n")
    n = 0
    den = frac.denominator
    while den % 3 == 0:
        den //= 3
        n += 1
    if den != 1:
        raise ValueError(f"delta={delta} is not of the form 3^-n")
    if isinstance(delta, float) and abs(delta - 3.0**-n) > 1e-12 * 3.0**-n:
        raise ValueError(f"delta={delta} is not of the form 3^-n")
    return n


@dataclass(frozen=True)
class Grid:
    """Partition of the window into delta^-d congruent cubes of side 2 r delta.

    Cells are numbered lexicographically by their centres, first coordinate
    most significant.
    """

    window: Window
    level: int

    @property
    def delta(self) -> Fraction:
        return Fraction(1, 3**self.level)

    @property
    def per_axis(self) -> int:
        return 3**self.level

    @property
    def n_cells(self) -> int:
        return self.per_axis**self.window.d

    @property
    def side(self) -> float:
        return 2.0 * self.window.r / self.per_axis

    @property
    def cell_volume(self) -> float:
        return self.side**self.window.d

    def axis_centers(self) -> np.ndarray:
        m = self.per_axis
        return -self.window.r + (2 * np.arange(m) + 1) * (self.window.r / m)

    def centers(self) -> np.ndarray:
        """Array (n_cells, d) of cell centres in cell-index order."""
        ax = self.axis_centers()
        mesh = np.meshgrid(*([ax] * self.window.d), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def multi_index(self, cell: int) -> tuple:
        return tuple(int(j) for j in np.unravel_index(cell, (self.per_axis,) * self.window.d))

    def origin_cell(self) -> int:
        mid = (self.per_axis - 1) // 2
        return int(np.ravel_multi_index((mid,) * self.window.d, (self.per_axis,) * self.window.d))

    def coarse_map(self, coarse: "Grid") -> np.ndarray:
        """For each cell of self, the index of the containing cell of `coarse`."""
        if coarse.window != self.window or coarse.level > self.level:
            raise ValueError("coarse grid must share the window and be no finer")
        f = 3 ** (self.level - coarse.level)
        shape = (self.per_axis,) * self.window.d
        idx = np.unravel_index(np.arange(self.n_cells), shape)
        cidx = tuple(j // f for j in idx)
        return np.ravel_multi_index(cidx, (coarse.per_axis,) * self.window.d)


def build_grid(window: Window, delta: Number) -> Grid:
    return Grid(window, triadic_level(delta))


def _face_distance(x: np.ndarray, window: Window, level: int) -> np.ndarray:
    u = (np.asarray(x, dtype=float) + window.r) / (2.0 * window.r / 3**level)
    return np.abs(u - np.round(u))


def on_face(x, window: Window, max_level: int = MAX_LEVEL) -> np.ndarray:
    """Boolean per point: does some coordinate sit on a cell face of some level <= max_level?"""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    hit = np.zeros(x.shape[0], dtype=bool)
    for level in range(max_level + 1):
        hit |= np.any(_face_distance(x, window, level) <= _FACE_TOL, axis=1)
    return hit


def locate_cell(x, grid: Grid) -> int:
    """Index of the unique cell containing x.  Points on faces are rejected."""
    x = np.asarray(x, dtype=float).reshape(-1)
    w = grid.window
    if x.shape[0] != w.d:
        raise ValueError("point dimension does not match the window")
    if np.any(np.abs(x) > w.r):
        raise ValueError(f"point {x} lies outside the window")
    if np.any(_face_distance(x, w, grid.level) <= _FACE_TOL):
        raise ValueError(f"point {x} lies on a cell boundary; cell membership is undefined")
    j = np.floor((x + w.r) / grid.side).astype(int)
    return int(np.ravel_multi_index(tuple(j), (grid.per_axis,) * w.d))


def locate_cells(points: np.ndarray, grid: Grid) -> np.ndarray:
    """Vectorised locate_cell for an (N, d) array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return np.zeros(0, dtype=int)
    w = grid.window
    if np.any(np.abs(pts) > w.r):
        raise ValueError("some point lies outside the window")
    if np.any(_face_distance(pts, w, grid.level) <= _FACE_TOL):
        raise ValueError("some point lies on a cell boundary")
    j = np.floor((pts + w.r) / grid.side).astype(int)
    return np.ravel_multi_index(tuple(j.T), (grid.per_axis,) * w.d)


class IntensityDensity:
    """Absolutely continuous intensity measure mu on the window.

    Three flavours: uniform (closed-form cell masses), tabulated (piecewise
    constant on some triadic grid) and a general density callback, whose cell
    masses come from midpoint quadrature with one triadic refinement.
    """

    def __init__(
        self,
        window: Window,
        density: Callable[[np.ndarray], np.ndarray],
        total_mass: Optional[float] = None,
        bound: Optional[float] = None,
        *,
        _kind: str = "callback",
        _table: Optional[tuple] = None,
    ):
        self.window = window
        self.density = density
        self.kind = _kind
        self._table = _table
        self.bound = bound
        if _kind == "callback":
            probe = build_grid(window, Fraction(1, 3 ** min(4, max(1, 8 // window.d))))
            vals = np.asarray(density(_refined_midpoints(probe)), dtype=float)
            if np.any(vals < 0):
                raise ValueError("intensity density must be nonnegative")
            if total_mass is None:
                total_mass = float(vals.mean() * window.volume)
        if total_mass is None or total_mass <= 0:
            raise ValueError("mu(W) must be positive")
        self.total_mass = float(total_mass)

    @classmethod
    def uniform(cls, window: Window, total_mass: float = 1.0) -> "IntensityDensity":
        rho = total_mass / window.volume
        return cls(
            window,
            lambda x: np.full(np.atleast_2d(x).shape[0], rho),
            total_mass,
            bound=rho,
            _kind="uniform",
        )

    @classmethod
    def tabulated(cls, grid: Grid, cell_masses: Sequence[float]) -> "IntensityDensity":
        masses = np.asarray(cell_masses, dtype=float)
        if masses.shape != (grid.n_cells,):
            raise ValueError("need one mass per grid cell")
        if np.any(masses < 0):
            raise ValueError("intensity density must be nonnegative")
        dens = masses / grid.cell_volume

        def density(x):
            pts = np.atleast_2d(x)
            j = np.clip(np.floor((pts + grid.window.r) / grid.side).astype(int), 0, grid.per_axis - 1)
            return dens[np.ravel_multi_index(tuple(j.T), (grid.per_axis,) * grid.window.d)]

        return cls(grid.window, density, float(masses.sum()), bound=float(dens.max()),
                   _kind="tabulated", _table=(grid, masses))

    @classmethod
    def from_callback(cls, window: Window, density, bound: float,
                      total_mass: Optional[float] = None) -> "IntensityDensity":
        return cls(window, density, total_mass, bound=bound)

    def cell_masses(self, grid: Grid) -> np.ndarray:
        if grid.window != self.window:
            raise ValueError("grid window differs from the intensity window")
        if self.kind == "uniform":
            return np.full(grid.n_cells, self.total_mass / grid.n_cells)
        if self.kind == "tabulated":
            tgrid, masses = self._table
            if grid.level <= tgrid.level:
                return np.bincount(tgrid.coarse_map(grid), weights=masses, minlength=grid.n_cells)
            parent = grid.coarse_map(tgrid)
            share = 3 ** ((grid.level - tgrid.level) * grid.window.d)
            return masses[parent] / share
        vals = np.asarray(self.density(_refined_midpoints(grid)), dtype=float)
        sub = 3**grid.window.d
        return vals.reshape(grid.n_cells, sub).mean(axis=1) * grid.cell_volume

    def as_grid_measure(self, grid: Grid) -> "GridMeasure":
        return GridMeasure(grid, self.cell_masses(grid))


def _refined_midpoints(grid: Grid) -> np.ndarray:
    """Midpoints of the 3^d sub-cells of every cell, grouped by parent cell."""
    d = grid.window.d
    centers = grid.centers()
    offs = (np.arange(3) - 1) * (grid.side / 3.0)
    mesh = np.meshgrid(*([offs] * d), indexing="ij")
    sub = np.stack([g.ravel() for g in mesh], axis=-1)
    return (centers[:, None, :] + sub[None, :, :]).reshape(-1, d)


@dataclass(frozen=True)
class PointConfig:
    """A realised user set with intensity scale lambda; the origin is the base station."""

    lam: float
    points: np.ndarray
    window: Window = field(default_factory=Window)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.window.d)
        pts = pts.reshape(-1, self.window.d)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if pts.shape[0] and np.any(np.abs(pts) > self.window.r):
            raise ValueError("points must lie in the window")

    @property
    def N(self) -> int:
        return int(self.points.shape[0])

    def empirical(self, grid: Grid) -> "GridMeasure":
        """L_lambda coarsened to the grid: cell counts divided by lambda."""
        counts = np.bincount(locate_cells(self.points, grid), minlength=grid.n_cells)
        return GridMeasure(grid, counts / self.lam)


def _sample_positions(mu: IntensityDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    w = mu.window
    if n == 0:
        return np.zeros((0, w.d))
    if mu.kind == "uniform":
        return rng.uniform(-w.r, w.r, size=(n, w.d))
    if mu.kind == "tabulated":
        tgrid, masses = mu._table
        cells = rng.choice(tgrid.n_cells, size=n, p=masses / masses.sum())
        lo = tgrid.centers()[cells] - tgrid.side / 2
        return lo + rng.uniform(0.0, tgrid.side, size=(n, w.d))
    if mu.bound is None:
        raise ValueError("sampling from a density callback needs an upper bound")
    out = []
    while len(out) < n:
        cand = rng.uniform(-w.r, w.r, size=(2 * (n - len(out)) + 8, w.d))
        keep = rng.uniform(0.0, mu.bound, size=cand.shape[0]) < mu.density(cand)
        out.extend(cand[keep])
    return np.asarray(out[:n])


def sample_ppp(lam: float, mu: IntensityDensity, window: Optional[Window] = None,
               seed: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> PointConfig:
    """Poisson point process with intensity lam * mu.

    The count is Poisson(lam mu(W)), positions are i.i.d. with law mu/mu(W).
    Points that land on a triadic cell face are redrawn.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    window = window or mu.window
    if window != mu.window:
        raise ValueError("window does not match the intensity measure")
    if rng is None:
        rng = np.random.default_rng(seed)
    n = int(rng.poisson(lam * mu.total_mass))
    pts = _sample_positions(mu, n, rng)
    bad = on_face(pts, window) if n else np.zeros(0, dtype=bool)
    while np.any(bad):
        pts[bad] = _sample_positions(mu, int(bad.sum()), rng)
        bad = on_face(pts, window)
    return PointConfig(lam, pts, window)


class GridMeasure:
    """Nonnegative measure on the cells of a grid (masses may be Fractions)."""

    def __init__(self, grid: Grid, masses):
        arr = np.asarray(masses)
        if arr.dtype != object:
            arr = arr.astype(float)
        if arr.shape != (grid.n_cells,):
            raise ValueError(f"expected {grid.n_cells} cell masses, got shape {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("grid measure masses must be nonnegative")
        self.grid = grid
        self.masses = arr

    k = 1

    @property
    def total(self):
        return self.masses.sum()

    def __repr__(self):
        return f"GridMeasure(delta={self.grid.delta}, total={self.total})"

    def items(self) -> Iterator[tuple]:
        for i in np.flatnonzero(self.masses != 0):
            yield (int(i),), self.masses[i]

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Support centres (n, d) and masses, for metric computations."""
        idx = np.flatnonzero(self.masses != 0)
        return self.grid.centers()[idx], self.masses[idx].astype(float)


class GridMeasureK:
    """Nonnegative measure on k-tuples of cells.

    Dense array of shape (n,)*k for k <= 3; a sparse {cell tuple: mass} map
    for larger k.
    """

    DENSE_MAX_K = 3

    def __init__(self, grid: Grid, k: int, masses=None, *, sparse: Optional[dict] = None):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.grid = grid
        self.k = k
        n = grid.n_cells
        if k <= self.DENSE_MAX_K:
            if sparse is not None:
                arr = np.zeros((n,) * k)
                for key, v in sparse.items():
                    arr[key] += v
                masses = arr
            if masses is None:
                masses = np.zeros((n,) * k)
            arr = np.asarray(masses)
            if arr.dtype != object:
                arr = arr.astype(float)
            if arr.shape != (n,) * k:
                raise ValueError(f"expected shape {(n,) * k}, got {arr.shape}")
            if np.any(arr < 0):
                raise ValueError("masses must be nonnegative")
            self.masses = arr
            self.sparse = None
        else:
            if masses is not None:
                arr = np.asarray(masses)
                sparse = {tuple(int(i) for i in idx): arr[idx] for idx in zip(*np.nonzero(arr))}
            sparse = {tuple(key): v for key, v in (sparse or {}).items() if v != 0}
            if any(v < 0 for v in sparse.values()):
                raise ValueError("masses must be nonnegative")
            self.masses = None
            self.sparse = sparse

    @property
    def is_dense(self) -> bool:
        return self.sparse is None

    @property
    def total(self):
        if self.is_dense:
            return self.masses.sum()
        return sum(self.sparse.values())

    def items(self) -> Iterator[tuple]:
        if self.is_dense:
            for idx in zip(*np.nonzero(self.masses)):
                yield tuple(int(i) for i in idx), self.masses[idx]
        else:
            yield from self.sparse.items()

    def marginal(self, l: int) -> GridMeasure:
        """The l-th marginal pi_l, l = 0..k-1."""
        if not 0 <= l < self.k:
            raise ValueError("marginal index out of range")
        if self.is_dense:
            axes = tuple(a for a in range(self.k) if a != l)
            return GridMeasure(self.grid, self.masses.sum(axis=axes) if axes else self.masses)
        out = np.zeros(self.grid.n_cells)
        for key, v in self.sparse.items():
            out[key[l]] += v
        return GridMeasure(self.grid, out)

    def to_dense(self) -> np.ndarray:
        if self.is_dense:
            return self.masses
        arr = np.zeros((self.grid.n_cells,) * self.k)
        for key, v in self.sparse.items():
            arr[key] += v
        return arr

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Support tuples as concatenated centres in R^{dk}, and masses."""
        centers = self.grid.centers()
        keys, vals = [], []
        for key, v in self.items():
            keys.append(np.concatenate([centers[i] for i in key]))
            vals.append(float(v))
        dim = self.k * self.grid.window.d
        if not keys:
            return np.zeros((0, dim)), np.zeros(0)
        return np.asarray(keys), np.asarray(vals)

    def __repr__(self):
        return f"GridMeasureK(k={self.k}, delta={self.grid.delta}, total={self.total})"


def _coarsen_array(arr: np.ndarray, per_axis: int, d: int, k: int, factor: int) -> np.ndarray:
    m_c = per_axis // factor
    spatial = arr.reshape((per_axis,) * (d * k))
    split = spatial.reshape(tuple(x for _ in range(d * k) for x in (m_c, factor)))
    summed = split.sum(axis=tuple(range(1, 2 * d * k, 2)))
    return summed.reshape((m_c**d,) * k)


def coarsen(measure, target: Union[Grid, Number]):
    """Sum cell masses onto a coarser triadic grid (the conditional expectation on F_delta)."""
    grid = measure.grid
    coarse = target if isinstance(target, Grid) else build_grid(grid.window, target)
    if coarse.window != grid.window:
        raise ValueError("grids live on different windows")
    if coarse.level > grid.level:
        raise ValueError(f"cannot coarsen delta={grid.delta} to the finer delta={coarse.delta}")
    if coarse.level == grid.level:
        return measure
    factor = 3 ** (grid.level - coarse.level)
    d = grid.window.d
    if isinstance(measure, GridMeasure):
        return GridMeasure(coarse, _coarsen_array(measure.masses, grid.per_axis, d, 1, factor))
    if measure.is_dense:
        return GridMeasureK(coarse, measure.k,
                            _coarsen_array(measure.masses, grid.per_axis, d, measure.k, factor))
    cmap = grid.coarse_map(coarse)
    acc: dict = {}
    for key, v in measure.sparse.items():
        ck = tuple(int(cmap[i]) for i in key)
        acc[ck] = acc.get(ck, 0) + v
    return GridMeasureK(coarse, measure.k, sparse=acc)
