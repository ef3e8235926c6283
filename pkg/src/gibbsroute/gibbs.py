"""A priori measure, exact Gibbs enumeration and the beta = 0 transfer sums."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .domain import PointConfig
from .energy import CongestionPenalty, HopEnergies, Trajectory

DEFAULT_ENUMERATION_BUDGET = 10**6


class BudgetExceeded(RuntimeError):
    """Raised instead of silently truncating an exhaustive enumeration."""


@dataclass(frozen=True)
class ModelParams:
    gamma: float = 1.0
    beta: float = 0.0
    k_max: int = 2
    alpha: float = 2.0
    eta: CongestionPenalty = field(default_factory=CongestionPenalty)

    def __post_init__(self):
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be nonnegative")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError("k_max must be a finite positive integer")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def with_(self, **kw) -> "ModelParams":
        vals = dict(gamma=self.gamma, beta=self.beta, k_max=self.k_max, alpha=self.alpha, eta=self.eta)
        vals.update(kw)
        return ModelParams(**vals)


def apriori_log_weight(traj: Trajectory, N: int) -> float:
    """log of 1/N^(k-1)."""
    if N < 1:
        raise ValueError("need at least one user")
    return -(traj.k - 1) * math.log(N)


def user_options(N: int, k_max: int) -> list:
    """All relay tuples of one user, ordered by hop count and then lexicographically."""
    out = []
    for k in range(1, k_max + 1):
        out.extend(itertools.product(range(N), repeat=k - 1))
    return out


def n_user_options(N: int, k_max: int) -> int:
    return sum(N ** (k - 1) for k in range(1, k_max + 1))


@dataclass
class ExactGibbs:
    """The Gibbs distribution on a tiny instance, by full enumeration.

    Configurations are indexed in mixed radix over the users, first user most
    significant; ``index[c, i]`` is the option number of user i.
    """

    N: int
    options: list
    index: np.ndarray
    log_apriori: np.ndarray
    S: np.ndarray
    M: np.ndarray
    log_weights: np.ndarray
    log_Z: float
    probabilities: np.ndarray

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)

    def __len__(self):
        return self.index.shape[0]

    def config_index(self, relays_per_user) -> int:
        pos = {opt: j for j, opt in enumerate(self.options)}
        c = 0
        for relays in relays_per_user:
            c = c * len(self.options) + pos[tuple(relays)]
        return c

    def configuration(self, c: int) -> tuple:
        return tuple(self.options[j] for j in self.index[c])

    def user_marginal(self, user: int) -> np.ndarray:
        return np.bincount(self.index[:, user], weights=self.probabilities, minlength=len(self.options))

    def conditional(self, user: int, others) -> np.ndarray:
        """Law of the user's option given the other users' relay tuples."""
        rows = []
        for j, opt in enumerate(self.options):
            rel = list(others)
            rel[user] = opt
            rows.append(self.log_weights[self.config_index(rel)])
        lw = np.asarray(rows)
        return np.exp(lw - logsumexp(lw))


def exact_gibbs(config: PointConfig, params: ModelParams, hop: Optional[HopEnergies] = None,
                budget: int = DEFAULT_ENUMERATION_BUDGET) -> ExactGibbs:
    N = config.N
    if N < 1:
        raise ValueError("need at least one user")
    n_opt = n_user_options(N, params.k_max)
    total = n_opt**N
    if total > budget:
        raise BudgetExceeded(f"{total} configurations exceed the enumeration budget {budget}")
    hop = hop or HopEnergies(config, params.alpha)
    options = user_options(N, params.k_max)
    logN = math.log(N)
    opt_apriori = np.array([-len(o) * logN for o in options])
    opt_S = np.array([[hop.trajectory(i, o) for o in options] for i in range(N)])
    opt_use = np.zeros((n_opt, N), dtype=np.int64)
    for j, o in enumerate(options):
        for r in o:
            opt_use[j, r] += 1
    grids = np.meshgrid(*([np.arange(n_opt)] * N), indexing="ij")
    index = np.stack([g.ravel() for g in grids], axis=1)
    log_apriori = opt_apriori[index].sum(axis=1)
    S = np.zeros(total)
    for i in range(N):
        S += opt_S[i][index[:, i]]
    inflow = opt_use[index].sum(axis=1)
    eta_tab = params.eta.table(int(inflow.max()) if inflow.size else 0)
    M = eta_tab[inflow].sum(axis=1)
    logw = log_apriori - params.gamma * S - params.beta * M
    log_Z = float(logsumexp(logw))
    return ExactGibbs(N, options, index, log_apriori, S, M, logw, log_Z, np.exp(logw - log_Z))


class TransferTables:
    """Log-domain path sums for the beta = 0 product form.

    ``log_back[j][a]`` is the log of the total weight of all (j+1)-hop
    continuations from user a to the origin, a priori factors included:
    back_0 = v, back_j = T back_{j-1} with T[a, b] = exp(-gamma / SIR(a->b)) / N
    and v[b] = exp(-gamma / SIR(b->o)).
    """

    def __init__(self, hop: HopEnergies, gamma: float, k_max: int):
        N = hop.N
        self.N, self.k_max, self.gamma = N, k_max, gamma
        self.log_T = -gamma * hop.pair_array - math.log(N)
        back = [-gamma * hop.end_array]
        for _ in range(1, k_max):
            back.append(logsumexp(self.log_T + back[-1][None, :], axis=1))
        self.log_back = back
        self.log_factor = logsumexp(np.stack(back), axis=0)

    def sample(self, user: int, rng) -> tuple:
        """Draw the user's relay tuple from its exact beta = 0 law (forward pass)."""
        lk = np.array([b[user] for b in self.log_back])
        k = _draw_log(lk, rng) + 1
        relays = []
        cur = user
        for remaining in range(k - 1, 0, -1):
            lw = self.log_T[cur] + self.log_back[remaining - 1]
            cur = _draw_log(lw, rng)
            relays.append(cur)
        return tuple(relays)


def _draw_log(logw: np.ndarray, rng) -> int:
    p = np.exp(logw - logw.max())
    c = np.cumsum(p)
    u = rng.random() * c[-1]
    return int(min(np.searchsorted(c, u, side="right"), len(c) - 1))


def factorized_log_partition_beta0(config: PointConfig, params: ModelParams,
                                   hop: Optional[HopEnergies] = None) -> float:
    """(1/lambda) log Z at beta = 0, as a sum of per-user transfer sums."""
    if params.beta != 0:
        raise ValueError("the factorised partition function needs beta = 0")
    if config.N == 0:
        return 0.0
    hop = hop or HopEnergies(config, params.alpha)
    tables = TransferTables(hop, params.gamma, params.k_max)
    return math.fsum(tables.log_factor) / config.lam
