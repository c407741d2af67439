"""Chain primitives shared by every sampler.

States, reproducible RNG streams, the Metropolis-Hastings acceptance
kernel, the single-chain driver, and an exact stationarity oracle on
finite state spaces.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One splitmix64 round; used to derive substream ids."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class InvalidStateError(ValueError):
    """The chain is sitting at a zero-density (or non-finite) state."""


class ProposalError(ValueError):
    """A proposal kernel produced non-finite coordinates."""


@dataclass
class RngStream:
    """Counter-based random stream: Philox keyed by (seed, stream_id).

    Identical (seed, stream_id) replays the same draw sequence on any
    platform; distinct stream ids from the same seed are statistically
    independent. ``child`` derives substreams deterministically, so
    multi-chain runs and tuning pilots stay replayable.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        key = np.array(
            [self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64
        )
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self) -> float:
        return float(self._gen.random())

    def normal(self, size=None):
        if size is None:
            return float(self._gen.standard_normal())
        return self._gen.standard_normal(size)

    def exponential(self) -> float:
        return float(self._gen.standard_exponential())

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def child(self, tag: int) -> "RngStream":
        """Independent substream, deterministic in (stream_id, tag)."""
        new_id = _splitmix64(self.stream_id ^ _splitmix64((tag + 1) & _MASK64))
        return RngStream(self.seed, new_id)


@dataclass
class ChainState:
    """Current chain position with cached target evaluations."""

    position: np.ndarray
    cached_logpi: float
    cached_grad: Optional[np.ndarray] = None
    step_index: int = 0


@dataclass
class StepInfo:
    """Per-step bookkeeping emitted alongside the new state."""

    accepted: bool
    accept_prob: float
    divergent: bool = False
    tree_depth: int = 0
    n_leapfrog: int = 0
    slot_accepts: Optional[np.ndarray] = None
    stage1_pass: Optional[bool] = None


@dataclass
class ChainRecord:
    """Ordered sample matrix plus accept flags and evaluation counters."""

    samples: np.ndarray
    accept_flags: np.ndarray
    logpi: np.ndarray
    n_target_evals: int = 0
    n_grad_evals: int = 0
    n_surrogate_evals: int = 0
    wall_time: float = 0.0
    n_divergences: int = 0
    n_leapfrog_total: int = 0
    n_stage1_pass: int = 0
    slot_accept_rate: Optional[np.ndarray] = None

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accept_flags))


class CountingTarget:
    """Per-chain wrapper that counts true density/gradient evaluations.

    Duck-types ``TargetDensity``: the wrapped callables live on instance
    attributes, and ``gradient`` is None when the underlying target has
    no gradient, so feature checks keep working.
    """

    def __init__(self, target):
        self._target = target
        self.name = target.name
        self.dim = target.dim
        self.analytic_mean = target.analytic_mean
        self.analytic_cov = target.analytic_cov
        self.fcd_support = target.fcd_support
        self.box = target.box
        self.n_target_evals = 0
        self.n_grad_evals = 0

        inner_logpi = target.log_density

        def log_density(x):
            self.n_target_evals += 1
            return inner_logpi(x)

        self.log_density = log_density

        if target.gradient is None:
            self.gradient = None
        else:
            inner_grad = target.gradient

            def gradient(x):
                self.n_grad_evals += 1
                return inner_grad(x)

            self.gradient = gradient


def make_state(target, position, with_grad: bool = True) -> ChainState:
    """Evaluate the target at ``position`` and build a valid ChainState."""
    x = np.asarray(position, dtype=float).copy()
    if x.shape != (target.dim,):
        raise ValueError(f"position must have shape ({target.dim},), got {x.shape}")
    logpi = float(target.log_density(x))
    if not np.isfinite(logpi):
        raise InvalidStateError(
            f"initial position has non-finite log-density {logpi}"
        )
    grad = None
    if with_grad and target.gradient is not None:
        grad = np.asarray(target.gradient(x), dtype=float)
    return ChainState(position=x, cached_logpi=logpi, cached_grad=grad)


def mh_accept_log_prob(
    logpi_cur: float,
    logpi_prop: float,
    logg_fwd: float = 0.0,
    logg_bwd: float = 0.0,
) -> float:
    """Log of the Hastings acceptance probability, always <= 0.

    ``logg_fwd`` is the log proposal density of the move that was made,
    ``logg_bwd`` of the reverse move. Symmetric kernels pass 0 for both.
    A proposal at zero density returns -inf (certain rejection).
    """
    if not np.isfinite(logpi_cur):
        raise InvalidStateError(
            f"current state has log-density {logpi_cur}; the chain must "
            "never sit at zero density"
        )
    if logpi_prop == -np.inf:
        return -np.inf
    delta = (logpi_prop - logpi_cur) + (logg_bwd - logg_fwd)
    if np.isnan(delta):
        raise ValueError(
            "non-finite Hastings ratio from "
            f"({logpi_cur}, {logpi_prop}, {logg_fwd}, {logg_bwd})"
        )
    return min(0.0, delta)


def mh_decision(log_alpha: float, u: float) -> bool:
    """Accept iff log(u) < log_alpha, with the u=0 edge handled safely."""
    if log_alpha == -np.inf:
        return False
    if u <= 0.0:
        return True
    return bool(np.log(u) < log_alpha)


def accept_or_reject(
    state: ChainState,
    proposal: ChainState,
    log_alpha: float,
    rng: RngStream,
) -> tuple[ChainState, bool]:
    """Apply the MH coin flip; exactly one uniform is consumed.

    Returns ``(next_state, accepted)`` with step_index advanced by one
    either way.
    """
    if log_alpha > 0.0:
        raise ValueError(f"log_alpha must be <= 0, got {log_alpha}")
    if mh_decision(log_alpha, rng.uniform()):
        return replace(proposal, step_index=state.step_index + 1), True
    return replace(state, step_index=state.step_index + 1), False


class StationarityResult(NamedTuple):
    stationarity_gap: float
    detailed_balance_gap: float


def discrete_stationarity_oracle(
    pi: np.ndarray, proposal_matrix: np.ndarray
) -> StationarityResult:
    """Exact finite-space check that the MH kernel leaves ``pi`` invariant.

    Builds the full transition matrix P_ij = g_ij * min(1, pi_j g_ji /
    (pi_i g_ij)) for i != j (diagonal absorbs the remainder) and returns
    the max stationarity deviation ||pi P - pi||_inf together with the
    worst entrywise detailed-balance violation |pi_i P_ij - pi_j P_ji|.
    """
    pi = np.asarray(pi, dtype=float)
    g = np.asarray(proposal_matrix, dtype=float)
    k = pi.shape[0]
    if g.shape != (k, k):
        raise ValueError(f"proposal matrix must be {k}x{k}, got {g.shape}")
    if np.any(pi <= 0.0):
        raise ValueError("all pi entries must be strictly positive")
    if abs(pi.sum() - 1.0) > 1e-12:
        raise ValueError(f"pi must sum to 1, got {pi.sum()!r}")
    if np.any(g < 0.0) or np.any(np.abs(g.sum(axis=1) - 1.0) > 1e-12):
        raise ValueError("proposal matrix must be row-stochastic")

    p = np.zeros_like(g)
    for i in range(k):
        for j in range(k):
            if i == j or g[i, j] == 0.0:
                continue
            ratio = (pi[j] * g[j, i]) / (pi[i] * g[i, j])
            p[i, j] = g[i, j] * min(1.0, ratio)
        p[i, i] = 1.0 - p[i].sum() + p[i, i]

    stationarity_gap = float(np.max(np.abs(pi @ p - pi)))
    flux = pi[:, None] * p
    db_gap = float(np.max(np.abs(flux - flux.T)))
    return StationarityResult(stationarity_gap, db_gap)


Kernel = Callable[[ChainState, RngStream], tuple[ChainState, StepInfo]]


def run_chain(
    kernel: Kernel,
    state: ChainState,
    n_steps: int,
    rng: RngStream,
    counting: Optional[CountingTarget] = None,
    surrogate_counter: Optional[Callable[[], int]] = None,
) -> tuple[ChainRecord, ChainState]:
    """Advance one chain ``n_steps`` times and collect a ChainRecord.

    ``counting`` supplies evaluation counters (deltas over the run);
    ``surrogate_counter`` is polled the same way for surrogate-backed
    kernels.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    d = state.position.shape[0]
    samples = np.empty((n_steps, d))
    accept_flags = np.zeros(n_steps, dtype=bool)
    logpi = np.empty(n_steps)
    n_div = 0
    n_leap = 0
    n_stage1 = 0
    slot_counts = None

    t_evals0 = counting.n_target_evals if counting is not None else 0
    g_evals0 = counting.n_grad_evals if counting is not None else 0
    s_evals0 = surrogate_counter() if surrogate_counter is not None else 0

    t_start = time.perf_counter()
    for t in range(n_steps):
        state, info = kernel(state, rng)
        samples[t] = state.position
        accept_flags[t] = info.accepted
        logpi[t] = state.cached_logpi
        n_div += int(info.divergent)
        n_leap += info.n_leapfrog
        if info.stage1_pass is not None:
            n_stage1 += int(info.stage1_pass)
        if info.slot_accepts is not None:
            if slot_counts is None:
                slot_counts = np.zeros(len(info.slot_accepts))
            slot_counts += info.slot_accepts
    wall = time.perf_counter() - t_start

    record = ChainRecord(
        samples=samples,
        accept_flags=accept_flags,
        logpi=logpi,
        n_target_evals=(counting.n_target_evals - t_evals0)
        if counting is not None
        else 0,
        n_grad_evals=(counting.n_grad_evals - g_evals0)
        if counting is not None
        else 0,
        n_surrogate_evals=(surrogate_counter() - s_evals0)
        if surrogate_counter is not None
        else 0,
        wall_time=wall,
        n_divergences=n_div,
        n_leapfrog_total=n_leap,
        n_stage1_pass=n_stage1,
        slot_accept_rate=slot_counts / n_steps if slot_counts is not None else None,
    )
    return record, state
