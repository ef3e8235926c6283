"""Hop cost kernel g(x, y) on grid cell centres."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Grid, GridMeasure, path_loss


@dataclass(frozen=True)
class HopKernel:
    """g(x, y) = int l(|z - y|) mu(dz) / l(|x - y|) on centre pairs, plus the column g(., o).

    The trajectory cost is f_k(x_0..x_{k-1}) = sum_l g(x_{l-1}, x_l) with x_k = o.
    """

    grid: Grid
    pair: np.ndarray  # (n, n)
    end: np.ndarray  # (n,)
    field: np.ndarray  # int l(|z - y|) mu(dz) at each centre
    field_origin: float

    def f_tensor(self, k: int) -> np.ndarray:
        """f_k on all k-tuples of cells, as a dense (n,)*k array."""
        n = self.grid.n_cells
        out = np.zeros((n,) * k)
        for l in range(1, k):
            shape = [1] * k
            shape[l - 1] = n
            shape[l] = n
            out = out + self.pair.reshape(shape)
        shape = [1] * k
        shape[k - 1] = n
        return out + self.end.reshape(shape)

    def f_tuple(self, cells) -> float:
        total = 0.0
        for a, b in zip(cells, cells[1:]):
            total += self.pair[a, b]
        return total + self.end[cells[-1]]


def hop_kernel(grid: Grid, mu: GridMeasure, alpha: float) -> HopKernel:
    """Cell-centre quadrature of the interference numerator, divided by the hop path loss."""
    if mu.grid != grid:
        raise ValueError("intensity measure lives on a different grid")
    c = grid.centers()
    w = mu.masses.astype(float)
    dist = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    loss = path_loss(dist, alpha)
    field = loss.T @ w  # field[y] = sum_z l(|z - y|) mu(z)
    field_o = float(path_loss(np.linalg.norm(c, axis=1), alpha) @ w)
    pair = field[None, :] / loss
    end = field_o / path_loss(np.linalg.norm(c, axis=1), alpha)
    for arr in (pair, end, field):
        arr.setflags(write=False)
    return HopKernel(grid, pair, end, field, field_o)
