"""Exact jump-process simulation for reaction networks.

The simulator realizes the random time change construction directly:
each reaction channel owns a unit-rate internal clock, advanced by the
integrated propensity, with the next firing level drawn as a unit
exponential (modified next reaction method).  The same construction
yields two couplings used by the estimators:

* split coupling (simulate_coupled_pair): two chains from neighbouring
  states share the common part min(rate1, rate2) of every channel and
  fire the residual parts separately, so the chains synchronize as much
  as their rates allow while each marginal stays exact;
* common clocks (SharedClockTable): two chains at perturbed parameters
  consume identical per-channel firing levels, the coupling used by the
  finite-difference baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ExplosionError, ModelContractError
from .models import CrnModel

__all__ = [
    "CrnPath",
    "CoupledPairPath",
    "SharedClockTable",
    "simulate_crn_path",
    "simulate_coupled_pair",
    "simulate_crn_path_shared_clocks",
    "DEFAULT_JUMP_CAP",
]

DEFAULT_JUMP_CAP = 10_000_000


@dataclass(frozen=True, eq=False)
class CrnPath:
    """Piecewise-constant trajectory on [0, horizon].

    states[0] is the initial state; states[j+1] is the state right
    after the j-th jump.  reaction_counts[k] is the number of firings
    of channel k over the whole horizon.
    """

    horizon: float
    jump_times: np.ndarray      # (n_jumps,) strictly increasing
    reaction_ids: np.ndarray    # (n_jumps,) int
    states: np.ndarray          # (n_jumps+1, d) int
    reaction_counts: np.ndarray  # (m,) int

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: float) -> np.ndarray:
        """State at time t in [0, horizon] (right-continuous)."""
        idx = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.states[idx]


@dataclass(frozen=True, eq=False)
class CoupledPairPath:
    primary: CrnPath    # started at x
    shifted: CrnPath    # started at x + shift, driven by shared randomness


def _record_guard(x, n_jumps, jump_cap):
    if np.any(x < 0):
        raise ModelContractError(
            f"state went negative after jump {n_jumps}: admissibility violated"
        )
    if n_jumps > jump_cap:
        raise ExplosionError(f"jump count exceeded cap {jump_cap}")


def _check_rates(lam, m):
    if lam.shape != (m,):
        raise ModelContractError(f"propensities returned shape {lam.shape}, expected ({m},)")
    if np.any(lam < 0):
        raise ModelContractError("negative propensity encountered")


def simulate_crn_path(model: CrnModel, theta, x0, horizon: float,
                      rng: np.random.Generator,
                      jump_cap: int = DEFAULT_JUMP_CAP) -> CrnPath:
    """Exact draw of the reaction-network CTMC on [0, horizon]."""
    m = model.m
    zeta = model.zeta
    prop = model.propensities
    x = np.asarray(x0, dtype=np.int64).copy()
    if x.shape != (model.d,):
        raise ModelContractError(f"x0 has shape {x.shape}, expected ({model.d},)")
    if np.any(x < 0):
        raise ModelContractError("x0 must be componentwise nonnegative")
    next_levels = rng.exponential(size=m)
    integrated = np.zeros(m)
    t = 0.0
    jump_times: list[float] = []
    reaction_ids: list[int] = []
    states = [x.copy()]
    while True:
        lam = np.asarray(prop(x, theta), dtype=float)
        _check_rates(lam, m)
        waits = np.full(m, np.inf)
        np.divide(next_levels - integrated, lam, out=waits, where=lam > 0.0)
        k = int(np.argmin(waits))
        wait = waits[k]
        if t + wait >= horizon:
            integrated += lam * (horizon - t)
            break
        t += wait
        integrated += lam * wait
        x = x + zeta[k]
        _record_guard(x, len(jump_times), jump_cap)
        next_levels[k] += rng.exponential()
        jump_times.append(t)
        reaction_ids.append(k)
        states.append(x.copy())
    ids = np.asarray(reaction_ids, dtype=np.int64)
    return CrnPath(
        horizon=horizon,
        jump_times=np.asarray(jump_times, dtype=float),
        reaction_ids=ids,
        states=np.asarray(states, dtype=np.int64),
        reaction_counts=np.bincount(ids, minlength=m),
    )


def simulate_coupled_pair(model: CrnModel, theta, x, k: int, t_start: float,
                          rng: np.random.Generator,
                          shift: np.ndarray | None = None,
                          jump_cap: int = DEFAULT_JUMP_CAP) -> CoupledPairPath:
    """Split-coupled pair (chain from x, chain from x + zeta_k) on [0, T - t_start].

    Per reaction j, three independent unit-rate clocks drive the common
    rate min(rate_j^1, rate_j^2) (fires both chains) and the two
    residual rates (fire one chain each).  Each marginal is an exact
    CTMC draw from its own start; the coupling only reduces the
    variance of differences.  `shift` overrides zeta_k (test hook).
    """
    if not 0 <= k < model.m:
        raise ModelContractError(f"reaction index {k} out of range for m={model.m}")
    duration = model.T - t_start
    if not duration > 0:
        raise ModelContractError(f"t_start {t_start} must lie before T={model.T}")
    m = model.m
    zeta = model.zeta
    prop = model.propensities
    x1 = np.asarray(x, dtype=np.int64).copy()
    x2 = x1 + (zeta[k] if shift is None else np.asarray(shift, dtype=np.int64))
    if np.any(x1 < 0) or np.any(x2 < 0):
        raise ModelContractError("coupled pair started outside the nonnegative orthant")

    n_channels = 3 * m
    next_levels = rng.exponential(size=n_channels)
    integrated = np.zeros(n_channels)
    rates = np.empty(n_channels)
    t = 0.0
    jumps1: list[tuple[float, int]] = []
    jumps2: list[tuple[float, int]] = []
    states1 = [x1.copy()]
    states2 = [x2.copy()]
    n_fired = 0
    while True:
        lam1 = np.asarray(prop(x1, theta), dtype=float)
        lam2 = np.asarray(prop(x2, theta), dtype=float)
        _check_rates(lam1, m)
        _check_rates(lam2, m)
        common = np.minimum(lam1, lam2)
        rates[0::3] = common
        rates[1::3] = lam1 - common
        rates[2::3] = lam2 - common
        waits = np.full(n_channels, np.inf)
        np.divide(next_levels - integrated, rates, out=waits, where=rates > 0.0)
        c = int(np.argmin(waits))
        wait = waits[c]
        if t + wait >= duration:
            integrated += rates * (duration - t)
            break
        t += wait
        integrated += rates * wait
        j, kind = divmod(c, 3)
        if kind != 2:
            x1 = x1 + zeta[j]
            jumps1.append((t, j))
            states1.append(x1.copy())
        if kind != 1:
            x2 = x2 + zeta[j]
            jumps2.append((t, j))
            states2.append(x2.copy())
        n_fired += 1
        _record_guard(np.minimum(x1, x2), n_fired, jump_cap)
        next_levels[c] += rng.exponential()

    def pack(jumps, states):
        ids = np.asarray([j for _, j in jumps], dtype=np.int64)
        return CrnPath(
            horizon=duration,
            jump_times=np.asarray([s for s, _ in jumps], dtype=float),
            reaction_ids=ids,
            states=np.asarray(states, dtype=np.int64),
            reaction_counts=np.bincount(ids, minlength=m),
        )

    return CoupledPairPath(primary=pack(jumps1, states1), shifted=pack(jumps2, states2))


class SharedClockTable:
    """Lazily drawn per-channel unit-exponential firing levels.

    Two chains built over the same table consume identical level
    sequences per channel, which is the common-random-numbers coupling
    for parameter finite differences.
    """

    def __init__(self, n_channels: int, rng: np.random.Generator, chunk: int = 16):
        self._rng = rng
        self._chunk = chunk
        self._levels: list[list[float]] = [[] for _ in range(n_channels)]

    def level(self, channel: int, index: int) -> float:
        levels = self._levels[channel]
        while len(levels) <= index:
            base = levels[-1] if levels else 0.0
            levels.extend((base + np.cumsum(self._rng.exponential(size=self._chunk))).tolist())
        return levels[index]


def simulate_crn_path_shared_clocks(model: CrnModel, theta, x0, horizon: float,
                                    clocks: SharedClockTable,
                                    jump_cap: int = DEFAULT_JUMP_CAP) -> CrnPath:
    """Same dynamics as simulate_crn_path, but firing levels come from `clocks`."""
    m = model.m
    zeta = model.zeta
    prop = model.propensities
    x = np.asarray(x0, dtype=np.int64).copy()
    if np.any(x < 0):
        raise ModelContractError("x0 must be componentwise nonnegative")
    cursors = np.zeros(m, dtype=np.int64)
    next_levels = np.array([clocks.level(j, 0) for j in range(m)])
    integrated = np.zeros(m)
    t = 0.0
    jump_times: list[float] = []
    reaction_ids: list[int] = []
    states = [x.copy()]
    while True:
        lam = np.asarray(prop(x, theta), dtype=float)
        _check_rates(lam, m)
        waits = np.full(m, np.inf)
        np.divide(next_levels - integrated, lam, out=waits, where=lam > 0.0)
        k = int(np.argmin(waits))
        wait = waits[k]
        if t + wait >= horizon:
            integrated += lam * (horizon - t)
            break
        t += wait
        integrated += lam * wait
        x = x + zeta[k]
        _record_guard(x, len(jump_times), jump_cap)
        cursors[k] += 1
        next_levels[k] = clocks.level(k, int(cursors[k]))
        jump_times.append(t)
        reaction_ids.append(k)
        states.append(x.copy())
    ids = np.asarray(reaction_ids, dtype=np.int64)
    return CrnPath(
        horizon=horizon,
        jump_times=np.asarray(jump_times, dtype=float),
        reaction_ids=ids,
        states=np.asarray(states, dtype=np.int64),
        reaction_counts=np.bincount(ids, minlength=m),
    )
