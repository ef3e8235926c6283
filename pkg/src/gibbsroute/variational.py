"""Relative entropy, admissibility and the limiting functionals I, S, M, J."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, xlogy
from scipy.stats import poisson

from .domain import Grid, GridMeasure, GridMeasureK
from .empirical import TrajectorySetting
from .gibbs import ModelParams
from .kernel import HopKernel

ADMISSIBLE_TOL = 1e-10


class NotAdmissible(ValueError):
    def __init__(self, residuals: "Residuals"):
        super().__init__(f"setting is not admissible: residuals {residuals.as_tuple()}")
        self.residuals = residuals


def _masses(x) -> np.ndarray:
    if isinstance(x, GridMeasure):
        return x.masses.astype(float)
    if isinstance(x, GridMeasureK):
        return x.to_dense().astype(float)
    return np.asarray(x, dtype=float)


def entropy_H(nu, rho) -> float:
    """sum nu log(nu / rho) with 0 log 0 = 0; +inf when nu charges a rho-null cell."""
    a, b = _masses(nu), _masses(rho)
    if a.shape != b.shape:
        raise ValueError("measures live on different supports")
    pos = a > 0
    if np.any(pos & (b <= 0)):
        return math.inf
    return float(np.sum(xlogy(a[pos], a[pos]) - xlogy(a[pos], b[pos])))


def rel_entropy(nu, rho) -> float:
    """H(nu | rho) - nu(V) + rho(V), the relative entropy of finite measures."""
    h = entropy_H(nu, rho)
    if math.isinf(h):
        return h
    return h - float(_masses(nu).sum()) + float(_masses(rho).sum())


def _product(first: np.ndarray, rest: np.ndarray, k: int) -> np.ndarray:
    out = first
    for _ in range(k - 1):
        out = np.multiply.outer(out, rest)
    return out


def _entropy_vs_product(nk: GridMeasureK, first: np.ndarray, rest: np.ndarray) -> float:
    """H(nu_k | first (x) rest^(k-1)) without materialising the reference for sparse nu_k."""
    if nk.is_dense:
        return entropy_H(nk.masses.astype(float), _product(first, rest, nk.k))
    total = 0.0
    for key, v in nk.items():
        v = float(v)
        ref = first[key[0]] * math.prod(rest[i] for i in key[1:])
        if v > 0:
            if ref <= 0:
                return math.inf
            total += v * math.log(v / ref)
    return total


def _product_mass(first: np.ndarray, rest: np.ndarray, k: int) -> float:
    return float(first.sum()) * float(rest.sum()) ** (k - 1)


def poisson_weights(mu_W: float, m_max: int) -> tuple:
    """c_m = Poisson(1/(e mu(W))) weights for m <= m_max and the exact tail mass beyond."""
    rate = 1.0 / (math.e * mu_W)
    m = np.arange(m_max + 1)
    c = np.exp(-rate + m * math.log(rate) - gammaln(m + 1))
    return c, float(poisson.sf(m_max, rate))


@dataclass(frozen=True)
class Residuals:
    transmitters: float
    users: float
    loads: float
    tol: float = ADMISSIBLE_TOL

    @property
    def passed(self) -> bool:
        return max(self.as_tuple()) <= self.tol

    def as_tuple(self) -> tuple:
        return (self.transmitters, self.users, self.loads)


def check_admissible(psi: TrajectorySetting, mu: GridMeasure, tol: float = ADMISSIBLE_TOL) -> Residuals:
    """Sup-norm residuals of the three admissibility constraints."""
    if mu.grid != psi.grid:
        raise ValueError("mu and the setting live on different grids")
    m = mu.masses.astype(float)
    r1 = np.max(np.abs(psi.transmitters().masses.astype(float) - m))
    r2 = np.max(np.abs(psi.users_from_loads().masses.astype(float) - m)) + abs(psi.tail)
    r3 = np.max(np.abs(psi.loads().masses.astype(float) - psi.relays().masses.astype(float)))
    return Residuals(float(r1), float(r2), float(r3), tol)


@dataclass(frozen=True)
class FunctionalValues:
    I: float
    I_alt: float
    S: float
    M: float
    J: float
    gamma: float
    beta: float

    @property
    def objective(self) -> float:
        return self.I + self.gamma * self.S + self.beta * self.M

    def as_row(self) -> dict:
        return {"I": self.I, "I_alt": self.I_alt, "S": self.S, "M": self.M, "J": self.J,
                "gamma": self.gamma, "beta": self.beta, "objective": self.objective}


def functional_S(nu: Sequence[GridMeasureK], kernel: HopKernel) -> float:
    """sum_k <nu_k, f_k> with cell-centre quadrature."""
    total = 0.0
    for nk in nu:
        if nk.is_dense:
            total += float(np.sum(nk.masses.astype(float) * kernel.f_tensor(nk.k)))
        else:
            total += sum(float(v) * kernel.f_tuple(key) for key, v in nk.items())
    return total


def functional_M(psi: TrajectorySetting, eta) -> float:
    tab = eta.table(psi.m_max)
    return float(sum(tab[m] * float(mm.total) for m, mm in enumerate(psi.mum)))


def _relay_masses(nu: Sequence[GridMeasureK]) -> np.ndarray:
    acc = np.zeros(nu[0].grid.n_cells)
    for nk in nu:
        for l in range(1, nk.k):
            acc += nk.marginal(l).masses.astype(float)
    return acc


def entropy_I(psi: TrajectorySetting, mu: GridMeasure) -> tuple:
    """(I, I_alt): the relative-entropy form and the form produced by the counting asymptotics."""
    if psi.tail:
        raise ValueError("I needs the full (mu_m); this setting has unresolved tail mass")
    mu_arr = mu.masses.astype(float)
    mu_W = float(mu_arr.sum())
    M_arr = _relay_masses(psi.nu)
    M_W = float(M_arr.sum())
    c, c_tail = poisson_weights(mu_W, psi.m_max)

    I = 0.0
    for nk in psi.nu:
        h = _entropy_vs_product(nk, mu_arr, M_arr, )
        if math.isinf(h):
            I = math.inf
            break
        I += h - float(nk.total) + _product_mass(mu_arr, M_arr, nk.k)
    for m, mm in enumerate(psi.mum):
        I += rel_entropy(mm.masses.astype(float), mu_arr * c[m])
    I += mu_W * c_tail
    I += mu_W * (1.0 - sum(M_W ** (k - 1) for k in range(1, psi.k_max + 1))) - 1.0 / math.e

    I_alt = 0.0
    for nk in psi.nu:
        I_alt += _entropy_vs_product(nk, mu_arr, mu_arr)
    I_alt -= entropy_H(M_arr, mu_arr)
    for m, mm in enumerate(psi.mum):
        I_alt += entropy_H(mm.masses.astype(float), mu_arr * c[m])
    I_alt -= 1.0 / math.e
    if math.isinf(I) or math.isnan(I_alt):
        I_alt = math.inf
    return I, I_alt


def check_strategy(nu: Sequence[GridMeasureK], mu: GridMeasure, tol: float = ADMISSIBLE_TOL) -> float:
    res = float(np.max(np.abs(sum(nk.marginal(0).masses.astype(float) for nk in nu) - mu.masses)))
    if res > tol:
        raise ValueError(f"not an asymptotic routeing strategy: sum_k pi_0 nu_k differs from mu by {res:.3g}")
    return res


def eval_J(nu: Sequence[GridMeasureK], mu: GridMeasure, tol: float = ADMISSIBLE_TOL) -> float:
    """Entropy of a routeing strategy, with the loads integrated out."""
    check_strategy(nu, mu, tol)
    mu_arr = mu.masses.astype(float)
    mu_W = float(mu_arr.sum())
    M_W = float(_relay_masses(nu).sum())
    total = 0.0
    for nk in nu:
        h = _entropy_vs_product(nk, mu_arr, mu_arr)
        if math.isinf(h):
            return math.inf
        total += h - float(nk.total) + mu_W**nk.k
    total -= sum(mu_W**k for k in range(2, len(nu) + 1))
    return total + M_W * math.log(mu_W)


def eval_functionals(psi: TrajectorySetting, mu: GridMeasure, params: ModelParams,
                     kernel: Optional[HopKernel] = None, tol: float = ADMISSIBLE_TOL) -> FunctionalValues:
    res = check_admissible(psi, mu, tol)
    if not res.passed:
        raise NotAdmissible(res)
    if kernel is None:
        from .kernel import hop_kernel

        kernel = hop_kernel(psi.grid, mu, params.alpha)
    I, I_alt = entropy_I(psi, mu)
    return FunctionalValues(I, I_alt, functional_S(psi.nu, kernel), functional_M(psi, params.eta),
                            eval_J(psi.nu, mu, tol), params.gamma, params.beta)


# -- random test settings --------------------------------------------------------


def poisson_cutoff(rho_max: float, eps: float = 1e-18) -> int:
    """Smallest m_max whose Poisson(rho_max) tail beyond it is below eps (at least 8)."""
    m = max(8, int(rho_max) + 1)
    while poisson.sf(m, rho_max) > eps:
        m += 1
    return m


def random_strategy(grid: Grid, mu: GridMeasure, k_max: int, rng: np.random.Generator,
                    spread: float = 1.0) -> list:
    """Positive nu_k on tuples inside supp(mu), rescaled so that sum_k pi_0 nu_k = mu cellwise."""
    n = grid.n_cells
    support = mu.masses > 0
    raw = []
    for k in range(1, k_max + 1):
        w = rng.gamma(1.0 / spread, size=(n,) * k)
        mask = _product(support.astype(float), support.astype(float), k)
        raw.append(w * mask)
    row = sum(r.reshape(n, -1).sum(axis=1) for r in raw)
    scale = np.divide(mu.masses, row, out=np.zeros(n), where=row > 0)
    return [GridMeasureK(grid, k, r * scale.reshape((n,) + (1,) * (k - 1)))
            for k, r in enumerate(raw, start=1)]


def poisson_loads(M: np.ndarray, mu: np.ndarray, m_max: int) -> np.ndarray:
    """(m_max+1, n) array mu * Poisson(M/mu)(m), zero where mu vanishes."""
    rho = np.divide(M, mu, out=np.zeros_like(mu), where=mu > 0)
    m = np.arange(m_max + 1)[:, None]
    with np.errstate(divide="ignore"):
        logp = -rho[None, :] + xlogy(m, rho[None, :]) - gammaln(m + 1)
    return mu[None, :] * np.exp(logp)


def random_admissible_setting(grid: Grid, mu: GridMeasure, k_max: int, rng: np.random.Generator,
                              jitter: float = 0.5, spread: float = 1.0) -> TrajectorySetting:
    """Random strategy plus loads: a jittered cellwise Poisson profile repaired through mu_0 and mu_1."""
    nu = random_strategy(grid, mu, k_max, rng, spread)
    mu_arr = mu.masses.astype(float)
    M = _relay_masses(nu)
    rho = np.divide(M, mu_arr, out=np.zeros_like(mu_arr), where=mu_arr > 0)
    m_max = poisson_cutoff(float(rho.max()) if rho.size else 0.0)
    base = poisson_loads(M, mu_arr, m_max)
    for _ in range(100):
        loads = base.copy()
        loads[2:] *= rng.uniform(1 - jitter, 1 + jitter, size=loads[2:].shape)
        m = np.arange(m_max + 1)[:, None]
        loads[1] = M - (m[2:] * loads[2:]).sum(axis=0)
        loads[0] = mu_arr - loads[1:].sum(axis=0)
        if np.all(loads >= 0):
            mum = [GridMeasure(grid, row) for row in loads]
            return TrajectorySetting(grid, nu, mum)
        jitter /= 2
    raise RuntimeError("could not repair the random loads to a nonnegative profile")
