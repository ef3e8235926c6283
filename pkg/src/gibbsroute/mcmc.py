"""Metropolis and single-user Gibbs samplers, and simulated annealing."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .domain import PointConfig
from .energy import HopEnergies, Trajectory, TrajectoryConfig, delta_M
from .gibbs import ModelParams, TransferTables, n_user_options, user_options

log = logging.getLogger(__name__)

DEFAULT_CONDITIONAL_BUDGET = 10**5
CHECK_EVERY = 10**4
TRACE_FIELDS = ("step", "gamma_t", "beta_t", "S", "M", "accepted")


def replica_rng(seed: int, replica: int = 0) -> random.Random:
    """Independent stream per (seed, replica)."""
    state = np.random.SeedSequence([int(seed), int(replica)]).generate_state(2, dtype=np.uint64)
    return random.Random(int(state[0]) << 64 | int(state[1]))


@dataclass
class ChainState:
    config: TrajectoryConfig
    rng: random.Random
    step: int = 0
    accepted: int = 0
    fallbacks: int = 0

    @property
    def energies(self) -> tuple:
        return self.config.S, self.config.M

    def check(self, tol: float = 1e-8) -> None:
        S, M = self.config.recompute()
        if abs(S - self.config.S) > tol * max(1.0, abs(S)) or abs(M - self.config.M) > tol * max(1.0, abs(M)):
            raise AssertionError(f"cached energies drifted: ({self.config.S}, {self.config.M}) vs ({S}, {M})")


@dataclass(frozen=True)
class AnnealSchedule:
    """gamma_t = c0 log(1 + t) capped at gamma_max, beta_t = (beta/gamma) gamma_t.

    ``constant`` pins (gamma_t, beta_t) to the model's (gamma, beta).
    """

    c0: float
    gamma_max: float
    ratio: float
    constant: Optional[tuple] = None

    @classmethod
    def logarithmic(cls, params: ModelParams, c0: float, gamma_max: Optional[float] = None):
        if params.gamma <= 0:
            raise ValueError("annealing needs gamma > 0 to fix the ratio beta/gamma")
        if c0 <= 0:
            raise ValueError("c0 must be positive")
        return cls(c0, 50.0 * params.gamma if gamma_max is None else gamma_max, params.beta / params.gamma)

    @classmethod
    def fixed(cls, params: ModelParams):
        return cls(0.0, params.gamma, 0.0, constant=(params.gamma, params.beta))

    def at(self, t: int) -> tuple:
        if self.constant is not None:
            return self.constant
        g = min(self.c0 * math.log1p(t), self.gamma_max)
        return g, self.ratio * g


def default_c0(config: PointConfig) -> float:
    """The lambda / N^2 scaling for the logarithmic schedule."""
    return config.lam / max(config.N, 1) ** 2


def _propose(rng: random.Random, N: int, k_max: int) -> tuple:
    user = rng.randrange(N)
    k = rng.randrange(k_max) + 1
    return user, tuple(rng.randrange(N) for _ in range(k - 1))


def metropolis_step(state: ChainState, params: ModelParams, gamma: Optional[float] = None,
                    beta: Optional[float] = None) -> ChainState:
    """One Metropolis update with the a priori law as proposal, so only energy deltas enter."""
    gamma = params.gamma if gamma is None else gamma
    beta = params.beta if beta is None else beta
    cfg = state.config
    user, relays = _propose(state.rng, cfg.N, params.k_max)
    _metropolis_accept(state, user, relays, gamma, beta)
    state.step += 1
    return state


def _metropolis_accept(state: ChainState, user: int, relays: tuple, gamma: float, beta: float) -> bool:
    cfg = state.config
    old = cfg.trajectories[user].relays
    if relays == old:
        state.accepted += 1
        return True
    dS = cfg.hop.trajectory(user, relays) - cfg.traj_S[user]
    dM = delta_M(cfg.inflow, old, relays, cfg.eta)
    expo = -gamma * dS - beta * dM
    if expo >= 0 or state.rng.random() < math.exp(expo):
        cfg.replace(user, relays, dS, dM)
        state.accepted += 1
        return True
    return False


def metropolis_transition_prob(a: tuple, b: tuple, N: int, params: ModelParams, S_a: float, S_b: float,
                               M_a: float, M_b: float) -> float:
    """Kernel probability P(a -> b) for a != b, configurations given as relay tuples per user."""
    diff = [i for i in range(N) if a[i] != b[i]]
    if len(diff) != 1:
        return 0.0
    k_new = len(b[diff[0]]) + 1
    q = (1.0 / N) * (1.0 / params.k_max) * float(N) ** -(k_new - 1)
    return q * min(1.0, math.exp(-params.gamma * (S_b - S_a) - params.beta * (M_b - M_a)))


def conditional_log_weights(config: TrajectoryConfig, user: int, params: ModelParams,
                            gamma: Optional[float] = None, beta: Optional[float] = None) -> tuple:
    """Unnormalised log full-conditional of one user over all its options."""
    gamma = params.gamma if gamma is None else gamma
    beta = params.beta if beta is None else beta
    N = config.N
    options = user_options(N, params.k_max)
    base = list(config.inflow)
    for r in config.trajectories[user].relays:
        base[r] -= 1
    logN = math.log(N)
    lw = np.empty(len(options))
    for j, opt in enumerate(options):
        dM = delta_M(base, (), opt, config.eta) if beta else 0.0
        lw[j] = -len(opt) * logN - gamma * config.hop.trajectory(user, opt) - beta * dM
    return options, lw


def gibbs_resample_user(state: ChainState, user: int, params: ModelParams,
                        tables: Optional[TransferTables] = None, method: str = "auto",
                        budget: int = DEFAULT_CONDITIONAL_BUDGET) -> ChainState:
    """Redraw one user's trajectory from its exact full conditional.

    At beta = 0 the conditional does not depend on the other users and is
    drawn by a forward pass over the transfer tables; otherwise the user's
    options are enumerated.  Over budget at beta > 0 the update falls back to
    a Metropolis step and the fallback is counted on the state.
    """
    cfg = state.config
    use_transfer = method == "transfer" or (method == "auto" and params.beta == 0)
    if use_transfer:
        if params.beta != 0:
            raise ValueError("transfer sampling is exact only at beta = 0")
        if tables is None:
            tables = TransferTables(cfg.hop, params.gamma, params.k_max)
        relays = tables.sample(user, state.rng)
    else:
        if n_user_options(cfg.N, params.k_max) > budget:
            if params.beta == 0:
                return gibbs_resample_user(state, user, params, tables, "transfer", budget)
            if state.fallbacks == 0:
                log.warning("conditional enumeration over budget; falling back to Metropolis")
            state.fallbacks += 1
            u, relays = user, _propose_for(state.rng, cfg.N, params.k_max)
            _metropolis_accept(state, u, relays, params.gamma, params.beta)
            state.step += 1
            return state
        options, lw = conditional_log_weights(cfg, user, params)
        p = np.exp(lw - lw.max())
        c = np.cumsum(p)
        j = int(min(np.searchsorted(c, state.rng.random() * c[-1], side="right"), len(c) - 1))
        relays = options[j]
    old = cfg.trajectories[user].relays
    if relays != old:
        dS = cfg.hop.trajectory(user, relays) - cfg.traj_S[user]
        dM = delta_M(cfg.inflow, old, relays, cfg.eta)
        cfg.replace(user, relays, dS, dM)
    state.accepted += 1
    state.step += 1
    return state


def _propose_for(rng: random.Random, N: int, k_max: int) -> tuple:
    k = rng.randrange(k_max) + 1
    return tuple(rng.randrange(N) for _ in range(k - 1))


@dataclass
class ChainResult:
    trace: list
    acceptance_rate: float
    best_config: tuple
    best_S: float
    best_M: float
    best_objective: float
    final_config: TrajectoryConfig
    fallbacks: int = 0
    burn_in: int = 0
    samples: list = field(default_factory=list)

    def summary(self) -> dict:
        post = self.trace[self.burn_in:] or self.trace
        S = np.array([r["S"] for r in post])
        M = np.array([r["M"] for r in post])
        return {
            "acceptance_rate": self.acceptance_rate,
            "mean_S": float(S.mean()),
            "mean_M": float(M.mean()),
            "best_S": self.best_S,
            "best_M": self.best_M,
            "best_objective": self.best_objective,
            "final_S": self.final_config.S,
            "final_M": float(self.final_config.M),
            "fallbacks": self.fallbacks,
        }


def run_chain(config: PointConfig, params: ModelParams, steps: int, seed: int, thin: int = 1,
              schedule: Optional[AnnealSchedule] = None, sampler: str = "metropolis",
              replica: int = 0, init: Optional[TrajectoryConfig] = None,
              hop: Optional[HopEnergies] = None, burn_in: float = 0.2,
              record_samples: bool = False, check_every: int = CHECK_EVERY) -> ChainResult:
    """Run one chain; fixed parameters unless an annealing schedule is given.

    The trace holds one row per ``thin`` steps.  Best-so-far is judged by the
    model's gamma S + beta M, whatever schedule drives the acceptance.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if thin < 1:
        raise ValueError("thin must be at least 1")
    hop = hop or HopEnergies(config, params.alpha)
    cfg = init.copy() if init is not None else TrajectoryConfig.direct(hop, params.eta)
    state = ChainState(cfg, replica_rng(seed, replica))
    schedule = schedule or AnnealSchedule.fixed(params)
    tables = None
    if sampler == "gibbs" and params.beta == 0 and schedule.constant is not None:
        tables = TransferTables(hop, params.gamma, params.k_max)
    elif sampler not in ("metropolis", "gibbs"):
        raise ValueError(f"unknown sampler {sampler!r}")

    def objective(S, M):
        return params.gamma * S + params.beta * M

    best_key, best_S, best_M = cfg.key(), cfg.S, cfg.M
    best_M = float(best_M)
    best_obj = objective(best_S, best_M)
    trace, samples = [], []
    N, k_max, rng = cfg.N, params.k_max, state.rng
    for t in range(steps):
        g_t, b_t = schedule.at(t)
        if sampler == "metropolis":
            user, relays = _propose(rng, N, k_max)
            acc = _metropolis_accept(state, user, relays, g_t, b_t)
            state.step += 1
        else:
            user = rng.randrange(N)
            step_params = params if schedule.constant is not None else params.with_(gamma=g_t, beta=b_t)
            before = state.accepted
            gibbs_resample_user(state, user, step_params, tables)
            acc = state.accepted > before
        obj = objective(cfg.S, cfg.M)
        if obj < best_obj:
            best_obj, best_S, best_M, best_key = obj, cfg.S, float(cfg.M), cfg.key()
        if t % thin == 0:
            trace.append({"step": t + 1, "gamma_t": g_t, "beta_t": b_t, "S": cfg.S, "M": float(cfg.M),
                          "accepted": bool(acc)})
            if record_samples:
                samples.append(cfg.key())
        if check_every and (t + 1) % check_every == 0:
            state.check()
    return ChainResult(trace, state.accepted / steps, best_key, best_S, best_M, best_obj, cfg,
                       state.fallbacks, int(len(trace) * burn_in), samples)


def empirical_distribution(config: PointConfig, params: ModelParams, steps: int, seed: int,
                           burn_in: float = 0.2, sampler: str = "metropolis") -> dict:
    """Visit frequencies of configurations after burn-in (every step counted)."""
    res = run_chain(config, params, steps, seed, thin=1, sampler=sampler, burn_in=burn_in,
                    record_samples=True, check_every=0)
    counts: dict = {}
    for key in res.samples[int(steps * burn_in):]:
        counts[key] = counts.get(key, 0) + 1
    return counts


def run_replicas(config: PointConfig, params: ModelParams, steps: int, seed: int, replicas: int,
                 workers: int = 1, **kw) -> list:
    """Independent chains, one RNG stream per replica index."""
    if workers <= 1 or replicas <= 1:
        return [run_chain(config, params, steps, seed, replica=r, **kw) for r in range(replicas)]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(run_chain, config, params, steps, seed, replica=r, **kw) for r in range(replicas)]
        return [f.result() for f in futs]


def write_trace(path, rows: Iterable[dict], config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"fields": list(TRACE_FIELDS), "config_hash": config_hash}) + "\n")
        for row in rows:
            fh.write(json.dumps({k: row[k] for k in TRACE_FIELDS}) + "\n")
