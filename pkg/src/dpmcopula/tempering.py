"""Prior parallel tempering over a ladder of DP total-mass values.

Chain slots own their M and their RNG stream; whole chain states move
between slots on an accepted swap. Slot 0 (smallest M) is the target chain.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import stats
from .diagnostics import row_log_likelihood
from .kernel import Model
from .sampler import ChainState, gibbs_sweep, init_chain


@dataclass(frozen=True)
class TemperingLadder:
    m_values: tuple[float, ...]

    def __post_init__(self):
        m = tuple(float(x) for x in self.m_values)
        if not m:
            raise ValueError("ladder needs at least one total-mass value")
        if any(not x > 0 for x in m):
            raise ValueError("total-mass values must be positive")
        if any(b <= a for a, b in zip(m, m[1:])):
            raise ValueError("ladder must be strictly increasing")
        object.__setattr__(self, "m_values", m)

    @property
    def size(self) -> int:
        return len(self.m_values)

    @classmethod
    def arithmetic(cls, start: float, step: float, count: int) -> "TemperingLadder":
        return cls(tuple(start + step * k for k in range(count)))


def stick_log_prior(log_1mv: np.ndarray, M: float) -> float:
    """sum_h log Beta(v_h; 1, M) = H log M + (M - 1) sum_h log(1 - v_h)."""
    if log_1mv.size == 0:
        return 0.0
    return float(log_1mv.size * math.log(M) + (M - 1.0) * np.sum(log_1mv))


def swap_log_ratio(state_a: ChainState, state_b: ChainState, m_a: float, m_b: float) -> float:
    """Log acceptance ratio for exchanging the states of slots with masses m_a, m_b.

    Every base-measure and likelihood term travels with its state, so only
    the stick-fraction priors differ between the two configurations.
    """
    if state_a.z.shape != state_b.z.shape:
        raise ValueError("chains do not share a data layout")
    if m_a == m_b:
        return 0.0
    return (
        stick_log_prior(state_b.log_1mv, m_a) + stick_log_prior(state_a.log_1mv, m_b)
        - stick_log_prior(state_a.log_1mv, m_a) - stick_log_prior(state_b.log_1mv, m_b)
    )


@dataclass
class SwapStats:
    attempts: np.ndarray
    accepts: np.ndarray

    @classmethod
    def empty(cls, n_chains: int) -> "SwapStats":
        n = max(n_chains - 1, 0)
        return cls(np.zeros(n, dtype=int), np.zeros(n, dtype=int))

    @property
    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.attempts > 0, self.accepts / np.maximum(self.attempts, 1), np.nan)

    @property
    def gaps(self) -> list[int]:
        """Adjacent pairs that were tried but never accepted (ladder too sparse there)."""
        return [k for k in range(self.attempts.size) if self.attempts[k] > 0 and self.accepts[k] == 0]

    def to_csv(self, m_values: Sequence[float]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "m_low", "m_high", "attempts", "accepts", "rate"])
        for k in range(self.attempts.size):
            rate = self.rates[k]
            w.writerow([f"{k}-{k + 1}", m_values[k], m_values[k + 1], int(self.attempts[k]),
                        int(self.accepts[k]), "" if np.isnan(rate) else repr(float(rate))])
        return buf.getvalue()


def attempt_swaps(states: list[ChainState], m_values: Sequence[float], iteration: int, rng,
                  swap_stats: SwapStats | None = None) -> list[ChainState]:
    """Try adjacent exchanges: pairs (0,1),(2,3),... on even iterations, (1,2),(3,4),... on odd."""
    for k in range(iteration % 2, len(states) - 1, 2):
        log_ratio = swap_log_ratio(states[k], states[k + 1], m_values[k], m_values[k + 1])
        accept = log_ratio >= 0 or math.log(rng.random()) < log_ratio
        if swap_stats is not None:
            swap_stats.attempts[k] += 1
            swap_stats.accepts[k] += int(accept)
        if accept:
            states[k], states[k + 1] = states[k + 1], states[k]
    return states


@dataclass(eq=False)
class Draw:
    """Target-chain snapshot kept after burn-in."""

    iteration: int
    weights: np.ndarray          # renormalised over instantiated components
    means: np.ndarray            # (H, d)
    sigmas: np.ndarray           # (H, d, d)
    nus: np.ndarray | None
    row_loglik: np.ndarray       # (N,) copula-scale row log density


@dataclass(eq=False)
class RunResult:
    m_values: tuple[float, ...]
    n_iter: int
    burn_in: int
    draws: list[Draw]
    imputation_iters: list[int]
    imputations: list[np.ndarray]
    occupied: np.ndarray         # (n_iter, K), per slot
    loglik: np.ndarray           # (n_iter, K), per slot
    swap_stats: SwapStats
    states: list[ChainState] = field(default_factory=list)

    @property
    def row_loglik(self) -> np.ndarray:
        return np.array([d.row_loglik for d in self.draws])

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "chain", "M", "occupied", "loglik"])
        for it in range(self.n_iter):
            for k, m in enumerate(self.m_values):
                w.writerow([it + 1, k, m, int(self.occupied[it, k]), repr(float(self.loglik[it, k]))])
        return buf.getvalue()


def snapshot(model: Model, state: ChainState, iteration: int) -> Draw:
    w = state.w
    w = w / w.sum()
    nus = np.array([c.nu for c in state.clusters]) if model.kernel == "t" else None
    return Draw(
        iteration=iteration,
        weights=w,
        means=np.stack([c.mean for c in state.clusters]),
        sigmas=np.stack([c.sigma for c in state.clusters]),
        nus=nus,
        row_loglik=row_log_likelihood(model, state),
    )


def run(model: Model, ladder: TemperingLadder | Sequence[float], n_iter: int, burn_in: int, seed: int,
        thin: int = 1, n_init_clusters: int = 5, re_factory: Callable[[], object] | None = None,
        callback: Callable[[int, list[ChainState]], None] | None = None,
        keep_draws: bool = True) -> RunResult:
    """Run the tempered sampler and collect post-burn-in target-chain output.

    RNG stream 0 drives swap decisions and stream k + 1 drives chain slot k.
    ``callback(iteration, states)`` runs after each iteration's swaps.
    """
    if not isinstance(ladder, TemperingLadder):
        ladder = TemperingLadder(tuple(ladder))
    if not 0 <= burn_in < n_iter:
        raise ValueError("burn-in must be nonnegative and below the iteration count")
    if thin < 1:
        raise ValueError("thin must be at least 1")
    m_values = ladder.m_values
    n_chains = ladder.size
    swap_rng = stats.make_rng(seed, 0)
    rngs = [stats.make_rng(seed, k + 1) for k in range(n_chains)]
    states = [
        init_chain(model, m, rngs[k], n_init_clusters, re_factory() if re_factory else None)
        for k, m in enumerate(m_values)
    ]
    swap_stats = SwapStats.empty(n_chains)
    occupied = np.zeros((n_iter, n_chains), dtype=int)
    loglik = np.zeros((n_iter, n_chains))
    draws, imp_iters, imps = [], [], []
    for it in range(1, n_iter + 1):
        for k in range(n_chains):
            gibbs_sweep(model, states[k], m_values[k], rngs[k])
        attempt_swaps(states, m_values, it, swap_rng, swap_stats)
        for k, s in enumerate(states):
            occupied[it - 1, k] = s.n_occupied
            loglik[it - 1, k] = s.loglik
        if it > burn_in:
            target = states[0]
            imp_iters.append(it)
            imps.append(target.imputed.copy())
            if keep_draws and (it - burn_in) % thin == 0:
                draws.append(snapshot(model, target, it))
        if callback is not None:
            callback(it, states)
    return RunResult(m_values, n_iter, burn_in, draws, imp_iters, imps, occupied, loglik, swap_stats, states)
