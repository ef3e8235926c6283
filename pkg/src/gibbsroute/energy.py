"""Interference, SIR and the energies of trajectory configurations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .domain import PointConfig, path_loss

ORIGIN = -1  # receiver key for the base station


class CongestionPenalty:
    """eta: N_0 -> R, bounded below and superlinear.  Values are memoised."""

    def __init__(self, eta: Optional[Callable[[int], float]] = None, name: str = "quadratic",
                 check_upto: int = 64):
        self.fn = eta or (lambda m: m * (m - 1))
        self.name = name if eta is not None else "quadratic"
        self._table: list = []
        self._extend(check_upto)
        ratios = [self._table[m] / m for m in range(1, check_upto + 1)]
        if any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise ValueError("eta(m)/m must increase (superlinear congestion penalty required)")

    def _extend(self, m: int):
        while len(self._table) <= m:
            self._table.append(self.fn(len(self._table)))

    def __call__(self, m: int):
        if m >= len(self._table):
            self._extend(m)
        return self._table[m]

    def table(self, m_max: int) -> np.ndarray:
        self._extend(m_max)
        return np.asarray(self._table[: m_max + 1], dtype=float)

    def __repr__(self):
        return f"CongestionPenalty({self.name})"


class Trajectory(NamedTuple):
    """Route of one message: user -> relays... -> origin, with k = len(relays) + 1 hops."""

    user: int
    relays: tuple = ()

    @property
    def k(self) -> int:
        return len(self.relays) + 1


@dataclass(frozen=True)
class InterferenceField:
    """(1/lambda) sum_j l(|X_j - x|) at every user position and at the origin."""

    at_users: np.ndarray
    at_origin: float

    def __call__(self, rx: int) -> float:
        return self.at_origin if rx == ORIGIN else float(self.at_users[rx])


def interference_field(config: PointConfig, alpha: float) -> InterferenceField:
    if config.N == 0:
        raise ValueError("interference field of an empty configuration")
    pts = config.points
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    at_users = path_loss(dist, alpha).sum(axis=0) / config.lam
    at_origin = float(path_loss(np.linalg.norm(pts, axis=1), alpha).sum() / config.lam)
    at_users.setflags(write=False)
    return InterferenceField(at_users, at_origin)


def _position(config: PointConfig, key: int) -> np.ndarray:
    return np.zeros(config.window.d) if key == ORIGIN else config.points[key]


def sir(tx: int, rx: int, field: InterferenceField, config: PointConfig, alpha: float) -> float:
    """Signal-to-interference ratio of a hop from user tx to rx (a user index or ORIGIN)."""
    dist = float(np.linalg.norm(config.points[tx] - _position(config, rx)))
    return path_loss(dist, alpha) / field(rx)


class HopEnergies:
    """Reciprocal SIR of every possible hop, precomputed once per point configuration.

    ``pair[a][b]`` is 1/SIR(X_a -> X_b) and ``end[a]`` is 1/SIR(X_a -> o).  Both
    are plain nested lists so single-hop lookups in the samplers stay cheap.
    """

    def __init__(self, config: PointConfig, alpha: float, field: Optional[InterferenceField] = None):
        field = field or interference_field(config, alpha)
        pts = config.points
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        pair = field.at_users[None, :] / path_loss(dist, alpha)
        end = field.at_origin / path_loss(np.linalg.norm(pts, axis=1), alpha)
        self.config = config
        self.alpha = alpha
        self.field = field
        self.pair_array = pair
        self.end_array = end
        self.pair = pair.tolist()
        self.end = end.tolist()
        self.N = config.N

    def trajectory(self, user: int, relays: Sequence[int]) -> float:
        """Interference energy of one trajectory, summed hop by hop in path order."""
        total = 0.0
        prev = user
        for r in relays:
            total += self.pair[prev][r]
            prev = r
        return total + self.end[prev]


class TrajectoryConfig:
    """One trajectory per user, with cached inflow counts and energies.

    Single-owner mutable state; every mutation goes through ``replace``.
    """

    def __init__(self, trajectories: Sequence[Trajectory], hop: HopEnergies,
                 eta: Optional[CongestionPenalty] = None):
        self.hop = hop
        self.eta = eta or CongestionPenalty()
        n = hop.N
        if len(trajectories) != n:
            raise ValueError("need exactly one trajectory per user")
        self.trajectories = []
        for i, t in enumerate(trajectories):
            t = Trajectory(int(t.user), tuple(int(r) for r in t.relays))
            if t.user != i:
                raise ValueError(f"trajectory {i} belongs to user {t.user}")
            if any(not 0 <= r < n for r in t.relays):
                raise ValueError(f"relay index out of range in trajectory {i}")
            self.trajectories.append(t)
        self.inflow, self.M = inflow_and_M(self.trajectories, n, self.eta)
        self.traj_S = [hop.trajectory(t.user, t.relays) for t in self.trajectories]
        self.S = math.fsum(self.traj_S)

    @classmethod
    def direct(cls, hop: HopEnergies, eta: Optional[CongestionPenalty] = None) -> "TrajectoryConfig":
        return cls([Trajectory(i) for i in range(hop.N)], hop, eta)

    @property
    def N(self) -> int:
        return len(self.trajectories)

    def copy(self) -> "TrajectoryConfig":
        new = object.__new__(TrajectoryConfig)
        new.hop, new.eta = self.hop, self.eta
        new.trajectories = list(self.trajectories)
        new.inflow = list(self.inflow)
        new.traj_S = list(self.traj_S)
        new.S, new.M = self.S, self.M
        return new

    def key(self) -> tuple:
        return tuple(t.relays for t in self.trajectories)

    def replace(self, user: int, relays: tuple, dS: float, dM) -> None:
        old = self.trajectories[user]
        for r in old.relays:
            self.inflow[r] -= 1
        for r in relays:
            self.inflow[r] += 1
        self.trajectories[user] = Trajectory(user, relays)
        self.traj_S[user] += dS
        self.S += dS
        self.M += dM

    def recompute(self) -> tuple:
        """(S, M) from scratch, for consistency checks."""
        _, M = inflow_and_M(self.trajectories, self.N, self.eta)
        S = math.fsum(self.hop.trajectory(t.user, t.relays) for t in self.trajectories)
        return S, M


def energy_S(config: TrajectoryConfig) -> float:
    """Sum over all hops of all trajectories of 1/SIR, recomputed from scratch."""
    return math.fsum(config.hop.trajectory(t.user, t.relays) for t in config.trajectories)


def inflow_and_M(trajectories: Sequence[Trajectory], n: int,
                 eta: Optional[CongestionPenalty] = None) -> tuple:
    """Incoming-hop counts m_i (multiplicities counted) and M = sum_i eta(m_i)."""
    eta = eta or CongestionPenalty()
    inflow = [0] * n
    for t in trajectories:
        for r in t.relays:
            inflow[r] += 1
    return inflow, sum(eta(m) for m in inflow)


def delta_M(inflow: Sequence[int], old_relays: Sequence[int], new_relays: Sequence[int],
            eta: CongestionPenalty):
    change: dict = {}
    for r in old_relays:
        change[r] = change.get(r, 0) - 1
    for r in new_relays:
        change[r] = change.get(r, 0) + 1
    dM = 0
    for r, c in change.items():
        if c:
            m = inflow[r]
            dM += eta(m + c) - eta(m)
    return dM


def delta_energy(config: TrajectoryConfig, user: int, replacement: Trajectory) -> tuple:
    """(dS, dM) incurred by swapping in `replacement` for the user's trajectory."""
    if not 0 <= user < config.N or replacement.user != user:
        raise ValueError(f"replacement belongs to user {replacement.user}, not {user}")
    relays = tuple(replacement.relays)
    old = config.trajectories[user]
    if relays == old.relays:
        return 0.0, 0
    dS = config.hop.trajectory(user, relays) - config.traj_S[user]
    return dS, delta_M(config.inflow, old.relays, relays, config.eta)


def apply_replacement(config: TrajectoryConfig, replacement: Trajectory) -> tuple:
    dS, dM = delta_energy(config, replacement.user, replacement)
    config.replace(replacement.user, tuple(replacement.relays), dS, dM)
    return dS, dM
