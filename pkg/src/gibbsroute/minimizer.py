"""Minimizers of the limiting variational problem on a grid.

At beta = 0 the minimizing routeing strategy is an explicit tilted product
measure; for beta > 0 the tilt C solves a fixed-point equation which is
iterated with damping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .domain import Grid, GridMeasure, GridMeasureK
from .empirical import TrajectorySetting
from .gibbs import ModelParams
from .kernel import HopKernel, hop_kernel
from .variational import poisson_cutoff, poisson_loads

TENSOR_LIMIT = 10**6


class NotConverged(RuntimeError):
    pass


@dataclass
class TiltedStrategy:
    """nu_k(x_0..x_{k-1}) = alpha(x_0) prod_l w(x_l) exp(-gamma f_k), with alpha = mu A.

    ``marginals[k-1][l]`` holds pi_l nu_k as a cell vector.
    """

    grid: Grid
    A: np.ndarray
    nu: list
    marginals: list
    back: list

    @property
    def k_max(self) -> int:
        return len(self.marginals)

    def relays(self) -> np.ndarray:
        return sum((m for ms in self.marginals for m in ms[1:]), np.zeros(self.grid.n_cells))

    def transmitters(self) -> np.ndarray:
        return sum(ms[0] for ms in self.marginals)


def _tilted(grid: Grid, mu: np.ndarray, kernel: HopKernel, gamma: float, w: np.ndarray,
            k_max: int, build_tensors: bool = True) -> TiltedStrategy:
    supp = mu > 0
    Kb = np.exp(-gamma * kernel.pair)
    K = Kb * w[None, :]
    e = np.exp(-gamma * kernel.end)
    back = [e]
    for _ in range(1, k_max):
        back.append(K @ back[-1])
    Z = sum(back)
    A = np.where(supp, 1.0 / np.where(supp, Z, 1.0), 0.0)
    alpha = mu * A

    fwd = [alpha]
    for _ in range(1, k_max):
        fwd.append(fwd[-1] @ K)
    marginals = [[fwd[l] * back[k - 1 - l] for l in range(k)] for k in range(1, k_max + 1)]

    nu = []
    if build_tensors:
        n = grid.n_cells
        for k in range(1, k_max + 1):
            if n**k > TENSOR_LIMIT:
                raise ValueError(f"nu_{k} has {n ** k} cells; only marginals are available at this size")
            arr = alpha.reshape((n,) + (1,) * (k - 1))
            for l in range(1, k):
                shape = [1] * k
                shape[l - 1] = shape[l] = n
                arr = arr * K.reshape(shape)
            shape = [1] * k
            shape[k - 1] = n
            nu.append(GridMeasureK(grid, k, arr * e.reshape(shape)))
    return TiltedStrategy(grid, A, nu, marginals, back)


@dataclass
class Beta0Solution:
    strategy: TiltedStrategy
    gamma: float
    value: float  # inf (J + gamma S) = sum mu log A
    residual: float

    @property
    def nu(self) -> list:
        return self.strategy.nu

    @property
    def A(self) -> np.ndarray:
        return self.strategy.A

    @property
    def M(self) -> GridMeasure:
        return GridMeasure(self.strategy.grid, self.strategy.relays())

    def setting(self, mu: GridMeasure, m_max: Optional[int] = None) -> TrajectorySetting:
        """The minimizer together with its Poisson loads."""
        loads = poisson_mum(self.M, mu, m_max)
        return TrajectorySetting(self.strategy.grid, self.nu, loads.mum)


def solve_beta0(grid: Grid, mu: GridMeasure, params: ModelParams,
                kernel: Optional[HopKernel] = None, build_tensors: bool = True) -> Beta0Solution:
    """Unique minimizer of J + gamma S over routeing strategies."""
    if params.beta != 0:
        raise ValueError("solve_beta0 needs beta = 0")
    kernel = kernel or hop_kernel(grid, mu, params.alpha)
    m = mu.masses.astype(float)
    w = m / m.sum()
    strat = _tilted(grid, m, kernel, params.gamma, w, params.k_max, build_tensors)
    supp = m > 0
    value = float(np.sum(m[supp] * np.log(strat.A[supp])))
    residual = product_form_residual(strat, m, w, kernel, params.gamma) if build_tensors else math.nan
    return Beta0Solution(strat, params.gamma, value, residual)


def product_form_residual(strat: TiltedStrategy, mu: np.ndarray, w: np.ndarray,
                          kernel: HopKernel, gamma: float) -> float:
    """sup | nu_k - mu A (x) w^(k-1) exp(-gamma f_k) | with f_k summed from scratch."""
    n = strat.grid.n_cells
    worst = 0.0
    for nk in strat.nu:
        k = nk.k
        ref = (mu * strat.A).reshape((n,) + (1,) * (k - 1))
        for l in range(1, k):
            shape = [1] * k
            shape[l] = n
            ref = ref * w.reshape(shape)
        ref = ref * np.exp(-gamma * kernel.f_tensor(k))
        worst = max(worst, float(np.max(np.abs(nk.to_dense() - ref))))
    return worst


@dataclass
class PoissonLoads:
    mum: list
    defect: float  # largest per-cell mass beyond m_max


def poisson_mum(M: GridMeasure, mu: GridMeasure, m_max: Optional[int] = None) -> PoissonLoads:
    """Cellwise Poisson(M/mu) load profile, the unique optimal (mu_m) for a given M."""
    Mv, mv = M.masses.astype(float), mu.masses.astype(float)
    if np.any((Mv > 0) & (mv <= 0)):
        raise ValueError("M charges a cell where mu vanishes")
    rho = np.divide(Mv, mv, out=np.zeros_like(mv), where=mv > 0)
    rho_max = float(rho.max()) if rho.size else 0.0
    if m_max is None:
        m_max = poisson_cutoff(rho_max)
    loads = poisson_loads(Mv, mv, m_max)
    defect = float(np.max(mv - loads.sum(axis=0))) if mv.size else 0.0
    return PoissonLoads([GridMeasure(M.grid, row) for row in loads], max(defect, 0.0))


# -- beta > 0 ------------------------------------------------------------------


@dataclass
class TiltFunctions:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


@dataclass
class ELState:
    M_tilde: np.ndarray
    M: np.ndarray
    Gamma: np.ndarray
    residual: float  # sup over supp(mu) of |1/C - Gamma|
    iterations: int
    history: list = field(default_factory=list)


@dataclass
class FixedPointResult:
    tilts: TiltFunctions
    state: ELState
    converged: bool
    setting: TrajectorySetting
    admissibility: tuple


class LoadSeries:
    """phi(a) = E[m] and log normaliser under weights a^m e^{-beta eta(m)} / m!."""

    def __init__(self, beta: float, eta, a_max: float):
        m_max = poisson_cutoff(max(a_max, 1e-300), eps=1e-18) + 4
        self.m = np.arange(m_max + 1)
        self.base = -gammaln(self.m + 1) - beta * eta.table(m_max)

    def log_terms(self, a: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            la = np.log(a)
        lt = self.base[:, None] + self.m[:, None] * la[None, :]
        lt[0] = self.base[0]
        return lt

    def phi(self, a: np.ndarray) -> np.ndarray:
        lt = self.log_terms(a)
        p = np.exp(lt - logsumexp(lt, axis=0))
        return (self.m[:, None] * p).sum(axis=0)


def _gamma_map(mu: np.ndarray, Kb: np.ndarray, e: np.ndarray, Mt: np.ndarray, k_max: int) -> np.ndarray:
    """Gamma(M_tilde, x): expected insertions at x per unit relay weight, by forward-backward sums."""
    K = Kb * Mt[None, :]
    back = [e]
    for _ in range(1, k_max):
        back.append(K @ back[-1])
    Z = sum(back)
    alpha = np.divide(mu, Z, out=np.zeros_like(mu), where=mu > 0)
    tail = np.cumsum(np.stack(back), axis=0)  # tail[j] = sum_{i<=j} back_i
    out = np.zeros_like(mu)
    pre = alpha
    for l in range(1, k_max):
        # paths x_0 -> .. -> x at position l; the weight of x itself is left out
        out += (pre @ Kb) * tail[k_max - 1 - l]
        pre = pre @ K
    return out


def solve_C_fixed_point(grid: Grid, mu: GridMeasure, params: ModelParams, damping: float = 0.5,
                        tol: float = 1e-10, max_iter: int = 10_000, C0: Optional[np.ndarray] = None,
                        kernel: Optional[HopKernel] = None) -> FixedPointResult:
    """Damped iteration C <- (1-d) C + d / Gamma(C M(C)) with M = mu phi(1 / (C mu(W)))."""
    if params.k_max < 2:
        raise ValueError("the load tilt C is only defined when relays exist (k_max >= 2)")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    kernel = kernel or hop_kernel(grid, mu, params.alpha)
    m = mu.masses.astype(float)
    supp = m > 0
    mW = float(m.sum())
    Kb = np.exp(-params.gamma * kernel.pair)
    e = np.exp(-params.gamma * kernel.end)

    C = np.full(grid.n_cells, 1.0 / mW) if C0 is None else np.array(C0, dtype=float)
    C[~supp] = 1.0
    if np.any(C[supp] <= 0):
        raise ValueError("initial C must be positive")

    def loads_of(C):
        a = 1.0 / (C * mW)
        series = LoadSeries(params.beta, params.eta, float(a[supp].max()))
        return np.where(supp, m * series.phi(a), 0.0)

    best = None
    history = []
    for it in range(1, max_iter + 1):
        M = loads_of(C)
        G = _gamma_map(m, Kb, e, C * M, params.k_max)
        res = float(np.max(np.abs(1.0 / C[supp] - G[supp])))
        history.append(res)
        if best is None or res < best[0]:
            best = (res, C.copy(), M, G, it)
        if res <= tol or not np.isfinite(res):
            break
        C_new = np.where(supp, 1.0 / np.where(supp, G, 1.0), 1.0)
        C = (1 - damping) * C + damping * C_new

    res, C, M, G, it = best
    converged = res <= tol
    return _assemble(grid, m, kernel, params, C, M, G, res, it, history, converged)


def _assemble(grid, m, kernel, params, C, M, G, res, it, history, converged) -> FixedPointResult:
    supp = m > 0
    mW = float(m.sum())
    Mt = np.where(supp, C * M, 0.0)
    strat = _tilted(grid, m, kernel, params.gamma, Mt, params.k_max)
    a = np.where(supp, 1.0 / (C * mW), 0.0)
    series = LoadSeries(params.beta, params.eta, float(a[supp].max()))
    lt = series.log_terms(np.where(supp, a, 1.0))
    logB = -logsumexp(lt, axis=0)
    loads = np.where(supp[None, :], m[None, :] * np.exp(lt + logB[None, :]), 0.0)
    mum = [GridMeasure(grid, row) for row in loads]
    B = np.where(supp, np.exp(logB), 0.0)
    setting = TrajectorySetting(grid, strat.nu, mum)
    from .variational import check_admissible

    adm = check_admissible(setting, GridMeasure(grid, m))
    state = ELState(Mt, M, G, res, it, history)
    return FixedPointResult(TiltFunctions(strat.A, B, np.where(supp, C, np.nan)), state, converged,
                            setting, adm.as_tuple())


def probe_fixed_points(grid: Grid, mu: GridMeasure, params: ModelParams, starts: int = 4,
                       seed: int = 0, spread: float = 1.0, **kw) -> tuple:
    """Run the solver from ``starts`` random initial C; return the results and the largest
    sup-distance between converged C's (0 when all starts agree)."""
    rng = np.random.default_rng(seed)
    mW = float(mu.total)
    results = []
    for s in range(starts):
        C0 = None if s == 0 else np.exp(rng.uniform(-spread, spread, grid.n_cells)) / mW
        results.append(solve_C_fixed_point(grid, mu, params, C0=C0, **kw))
    Cs = [np.nan_to_num(r.tilts.C) for r in results if r.converged]
    spreads = [float(np.max(np.abs(a - b))) for i, a in enumerate(Cs) for b in Cs[i + 1:]]
    return results, max(spreads, default=0.0)
