"""Warmup-phase hyperparameter adaptation and offline ESS-objective
search.

Dual-averaging step-size control, the doubling heuristic for an initial
step size, diagonal mass estimation from warmup draws, a staged warmup
driver (step size only, then alternating mass windows, then a final
step-size polish with frozen mass), and a UCB-guided hyperparameter
search that maximizes measured effective sample size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .core import (
    ChainState,
    CountingTarget,
    InvalidStateError,
    RngStream,
    StepInfo,
    make_state,
    run_chain,
)
from .classic import RwmConfig, rwm_step
from .diagnostics import DegenerateChainError, ess
from .gradient import (
    HmcConfig,
    NutsConfig,
    PhasePoint,
    hmc_step,
    kinetic_energy,
    leapfrog,
    mala_step,
    nuts_step,
)

# Standard acceptance-rate targets per sampler family. The random-walk
# value is the classic 0.234 optimum; the gradient samplers use the
# conventional defaults from the wider adaptive-MCMC literature.
TARGET_ACCEPT = {"rwm": 0.234, "mala": 0.574, "hmc": 0.65, "nuts": 0.8}


class InitializationError(RuntimeError):
    """Step-size initialization failed (flat or pathological target)."""


class TuningFailedError(RuntimeError):
    """Every tuning pilot degenerated; the evaluation trace is attached."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class DualAveragingState:
    """State of the dual-averaging recursion on log step size."""

    log_eps: float
    log_eps_avg: float
    h_bar: float
    mu: float
    iteration: int
    target_accept: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75

    @property
    def epsilon(self) -> float:
        return math.exp(self.log_eps)

    @property
    def frozen_epsilon(self) -> float:
        return math.exp(self.log_eps_avg)


def init_dual_averaging(
    eps0: float,
    target_accept: float,
    gamma: float = 0.05,
    t0: float = 10.0,
    kappa: float = 0.75,
) -> DualAveragingState:
    """Fresh dual-averaging state anchored at mu = log(10 * eps0)."""
    if not eps0 > 0.0:
        raise ValueError(f"eps0 must be > 0, got {eps0}")
    if not 0.0 < target_accept < 1.0:
        raise ValueError(f"target_accept must lie in (0, 1), got {target_accept}")
    if not 0.5 < kappa <= 1.0:
        raise ValueError(f"kappa must lie in (0.5, 1], got {kappa}")
    return DualAveragingState(
        log_eps=math.log(eps0),
        log_eps_avg=0.0,
        h_bar=0.0,
        mu=math.log(10.0 * eps0),
        iteration=1,
        target_accept=target_accept,
        gamma=gamma,
        t0=t0,
        kappa=kappa,
    )


def dual_averaging_update(
    da: DualAveragingState, observed_accept: float
) -> DualAveragingState:
    """One dual-averaging update from an observed acceptance statistic.

    h_bar tracks the running acceptance shortfall; log_eps is pulled away
    from the anchor mu proportionally to it, and log_eps_avg accumulates
    the iterate average that is frozen at the end of warmup.
    """
    if not 0.0 <= observed_accept <= 1.0:
        raise ValueError(f"observed_accept must lie in [0, 1], got {observed_accept}")
    m = da.iteration
    eta = 1.0 / (m + da.t0)
    h_bar = (1.0 - eta) * da.h_bar + eta * (da.target_accept - observed_accept)
    log_eps = da.mu - (math.sqrt(m) / da.gamma) * h_bar
    w = m ** (-da.kappa)
    log_eps_avg = w * log_eps + (1.0 - w) * da.log_eps_avg
    return replace(
        da,
        log_eps=log_eps,
        log_eps_avg=log_eps_avg,
        h_bar=h_bar,
        iteration=m + 1,
    )


def find_reasonable_epsilon(
    state: ChainState, mass_diag: np.ndarray, target, rng: RngStream
) -> float:
    """Double or halve epsilon until the one-step acceptance crosses 1/2.

    Runs a single leapfrog step per trial; raises InitializationError
    after 100 doublings/halvings (e.g. on a flat target whose energy is
    conserved exactly at any step size).
    """
    mass_diag = np.asarray(mass_diag, dtype=float)
    d = state.position.shape[0]
    if target.gradient is None:
        raise ValueError("find_reasonable_epsilon needs a gradient")
    grad0 = state.cached_grad
    if grad0 is None:
        grad0 = target.gradient(state.position)
    p0 = rng.normal(d) * np.sqrt(mass_diag)
    h0 = -state.cached_logpi + kinetic_energy(p0, mass_diag)

    def accept_ratio(eps: float) -> float:
        lf = leapfrog(
            PhasePoint(q=state.position, p=p0), eps, 1, mass_diag, target, grad0=grad0
        )
        if lf.diverged_at is not None:
            return 0.0
        logpi = float(target.log_density(lf.point.q))
        if logpi == -np.inf:
            return 0.0
        h1 = -logpi + kinetic_energy(lf.point.p, mass_diag)
        return math.exp(min(0.0, h0 - h1))

    eps = 1.0
    ratio = accept_ratio(eps)
    direction = 1.0 if ratio > 0.5 else -1.0
    for _ in range(100):
        if direction > 0 and not ratio > 0.5:
            return eps
        if direction < 0 and not ratio < 0.5:
            return eps
        eps = eps * (2.0 ** direction)
        ratio = accept_ratio(eps)
    raise InitializationError(
        "step-size doubling heuristic failed to cross 1/2 within 100 "
        "iterations (flat or pathological target)"
    )


def estimate_mass_diag(warmup_samples: np.ndarray) -> np.ndarray:
    """Diagonal mass from warmup draws: per-coordinate inverse variance.

    The kinetic metric then satisfies M^-1 ~= diag of the posterior
    covariance. Variances are clamped below at 1e-8 so frozen coordinates
    cannot blow up the mass.
    """
    samples = np.atleast_2d(np.asarray(warmup_samples, dtype=float))
    if samples.shape[0] < 10:
        raise ValueError(
            f"need at least 10 warmup draws, got {samples.shape[0]}"
        )
    var = np.maximum(samples.var(axis=0, ddof=1), 1e-8)
    return 1.0 / var


@dataclass
class WarmupResult:
    """Frozen kernel hyperparameters plus adaptation traces."""

    state: ChainState
    epsilon: float
    mass_diag: np.ndarray
    accept_history: np.ndarray
    n_warmup: int


def _mass_windows(length: int, base: int = 25) -> list[int]:
    """Doubling window lengths covering ``length`` steps (tail merged)."""
    windows = []
    remaining = length
    size = base
    while remaining > 0:
        if remaining < size * 3 // 2 or remaining < 2 * base:
            windows.append(remaining)
            break
        windows.append(size)
        remaining -= size
        size *= 2
    return windows


def _initial_epsilon(sampler: str, state, mass_diag, target, rng, d) -> float:
    if sampler in ("hmc", "nuts"):
        return find_reasonable_epsilon(state, mass_diag, target, rng)
    if sampler == "mala":
        return 1.0 / d ** (1.0 / 6.0)
    return 2.38 / math.sqrt(d)


def adaptive_warmup(
    target,
    state: ChainState,
    sampler: str,
    n_warmup: int,
    rng: RngStream,
    target_accept: Optional[float] = None,
    hmc_n_leapfrog: int = 10,
    max_tree_depth: int = 10,
    adapt_mass: bool = True,
) -> WarmupResult:
    """Staged warmup: 15% step-size only, 60% alternating mass windows,
    25% step-size polish with frozen mass.

    Adaptation happens only inside this window; the returned epsilon is
    exp(log_eps_avg) and the kernel is fixed afterwards (hard freeze).
    Gradient-free samplers adapt the proposal scale over the whole window
    and skip mass estimation.
    """
    if sampler not in TARGET_ACCEPT:
        raise ValueError(f"unknown sampler for warmup: {sampler!r}")
    if n_warmup < 20:
        raise ValueError(f"need at least 20 warmup steps, got {n_warmup}")
    delta = TARGET_ACCEPT[sampler] if target_accept is None else target_accept
    d = state.position.shape[0]
    mass = np.ones(d)
    uses_mass = sampler in ("hmc", "nuts") and adapt_mass

    eps0 = _initial_epsilon(sampler, state, mass, target, rng, d)
    da = init_dual_averaging(eps0, delta)
    accept_history = np.empty(n_warmup)

    def one_step(s: ChainState, eps: float) -> tuple[ChainState, StepInfo]:
        if sampler == "rwm":
            return rwm_step(s, RwmConfig(sigma=eps), target, rng)
        if sampler == "mala":
            return mala_step(s, eps, target, rng)
        if sampler == "hmc":
            cfg = HmcConfig(epsilon=eps, n_leapfrog=hmc_n_leapfrog, mass_diag=mass)
            return hmc_step(s, cfg, target, rng)
        cfg = NutsConfig(epsilon=eps, mass_diag=mass, max_tree_depth=max_tree_depth)
        return nuts_step(s, cfg, target, rng)

    stage1 = max(1, int(0.15 * n_warmup))
    stage3 = max(1, int(0.25 * n_warmup))
    stage2 = n_warmup - stage1 - stage3
    step = 0

    for _ in range(stage1):
        state, info = one_step(state, da.epsilon)
        accept_history[step] = info.accept_prob
        da = dual_averaging_update(da, info.accept_prob)
        step += 1

    if uses_mass and stage2 > 0:
        for window in _mass_windows(stage2):
            window_samples = np.empty((window, d))
            for i in range(window):
                state, info = one_step(state, da.epsilon)
                accept_history[step] = info.accept_prob
                da = dual_averaging_update(da, info.accept_prob)
                window_samples[i] = state.position
                step += 1
            if window >= 10:
                mass = estimate_mass_diag(window_samples)
                eps0 = find_reasonable_epsilon(state, mass, target, rng)
                da = init_dual_averaging(eps0, delta)
    else:
        for _ in range(stage2):
            state, info = one_step(state, da.epsilon)
            accept_history[step] = info.accept_prob
            da = dual_averaging_update(da, info.accept_prob)
            step += 1

    for _ in range(n_warmup - step):
        state, info = one_step(state, da.epsilon)
        accept_history[step] = info.accept_prob
        da = dual_averaging_update(da, info.accept_prob)
        step += 1

    return WarmupResult(
        state=state,
        epsilon=da.frozen_epsilon,
        mass_diag=mass,
        accept_history=accept_history,
        n_warmup=n_warmup,
    )


@dataclass(frozen=True)
class TuningJob:
    """Hyperparameter box search over pilot runs.

    ``box`` maps parameter names to (lower, upper) bounds; names listed
    in ``log_scale`` are searched in log space. ``objective`` is either
    raw minimum-coordinate ESS or ESS per gradient evaluation.
    """

    sampler: str
    box: dict
    budget: int
    pilot_length: int
    objective: str = "min_ess"
    log_scale: frozenset = frozenset()
    hmc_n_leapfrog: int = 10
    max_tree_depth: int = 10

    def __post_init__(self):
        if self.budget < 2:
            raise ValueError(f"budget must be >= 2, got {self.budget}")
        if self.pilot_length < 20:
            raise ValueError(f"pilot_length must be >= 20, got {self.pilot_length}")
        if self.objective not in ("min_ess", "ess_per_grad_eval"):
            raise ValueError(f"unknown objective {self.objective!r}")
        for name, (lo, hi) in self.box.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bad bounds for {name!r}: ({lo}, {hi})")


@dataclass
class TuningTrial:
    index: int
    params: dict
    objective: float
    min_ess: float
    accept_rate: float
    divergences: int


@dataclass
class TuningResult:
    best_params: dict
    best_objective: float
    trace: list


def _pilot_kernel(job: TuningJob, params: dict, mass: np.ndarray):
    name = job.sampler
    if name == "rwm":
        cfg = RwmConfig(sigma=params["sigma"])
        return lambda s, t, r: rwm_step(s, cfg, t, r)
    if name == "mala":
        eps = params["epsilon"]
        return lambda s, t, r: mala_step(s, eps, t, r)
    if name == "hmc":
        cfg = HmcConfig(
            epsilon=params["epsilon"],
            n_leapfrog=int(params.get("n_leapfrog", job.hmc_n_leapfrog)),
            mass_diag=mass,
        )
        return lambda s, t, r: hmc_step(s, cfg, t, r)
    if name == "nuts":
        cfg = NutsConfig(
            epsilon=params["epsilon"],
            mass_diag=mass,
            max_tree_depth=job.max_tree_depth,
        )
        return lambda s, t, r: nuts_step(s, cfg, t, r)
    raise ValueError(f"unknown sampler {name!r}")


def _run_pilot(job: TuningJob, params: dict, target, rng: RngStream) -> TuningTrial:
    counting = CountingTarget(target)
    d = target.dim
    mass = np.ones(d)
    kernel = _pilot_kernel(job, params, mass)
    init = 0.5 * rng.normal(d)
    try:
        state = make_state(counting, init, with_grad=job.sampler != "rwm")
    except InvalidStateError:
        state = make_state(counting, np.zeros(d), with_grad=job.sampler != "rwm")
    record, _ = run_chain(
        lambda s, r: kernel(s, counting, r), state, job.pilot_length, rng,
        counting=counting,
    )
    try:
        min_ess = min(ess(record.samples[:, j]) for j in range(d))
    except DegenerateChainError:
        min_ess = 0.0
    if job.objective == "min_ess":
        objective = min_ess
    else:
        objective = min_ess / max(1, record.n_grad_evals)
    return TuningTrial(
        index=-1,
        params=dict(params),
        objective=objective,
        min_ess=min_ess,
        accept_rate=record.acceptance_rate,
        divergences=record.n_divergences,
    )


def _unit_to_params(u: np.ndarray, names: list, job: TuningJob) -> dict:
    params = {}
    for k, name in enumerate(names):
        lo, hi = job.box[name]
        if name in job.log_scale:
            params[name] = math.exp(
                math.log(lo) + u[k] * (math.log(hi) - math.log(lo))
            )
        else:
            params[name] = lo + u[k] * (hi - lo)
    return params


def _gp_ucb_scores(
    evaluated: np.ndarray, values: np.ndarray, candidates: np.ndarray, beta: float = 2.0
) -> np.ndarray:
    """UCB = posterior mean + beta * sd of a unit-signal SE-kernel GP.

    The length scale is half the unit-box diagonal; observation noise is
    fixed at 0.1 on the standardized objective.
    """
    p = evaluated.shape[1]
    ell = 0.5 * math.sqrt(p)
    noise = 0.1
    mu_y = values.mean()
    sd_y = values.std()
    y = (values - mu_y) / (sd_y if sd_y > 0 else 1.0)

    def se_kernel(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-0.5 * d2 / (ell * ell))

    k_xx = se_kernel(evaluated, evaluated) + noise * np.eye(len(values))
    k_cx = se_kernel(candidates, evaluated)
    solve = np.linalg.solve(k_xx, np.column_stack([y, k_cx.T]))
    mean = k_cx @ solve[:, 0]
    var = 1.0 - np.sum(k_cx * solve[:, 1:].T, axis=1)
    sd = np.sqrt(np.maximum(var, 0.0))
    return mean + beta * sd


def tune_by_ess(job: TuningJob, target, rng: RngStream) -> TuningResult:
    """Search the hyperparameter box for the configuration maximizing the
    measured ESS objective.

    The first max(2, budget/4) points come from a deterministic Halton
    design; the rest are chosen by UCB over a GP-style surrogate fitted
    to the evaluated (theta, objective) pairs. Every evaluation runs a
    fresh pilot chain on its own RNG substream, and the returned optimum
    is always a point that was actually evaluated.
    """
    names = sorted(job.box)
    p = len(names)
    n_init = max(2, job.budget // 4)
    halton = qmc.Halton(d=p, scramble=False)
    halton.fast_forward(1)  # first Halton point is the origin; skip it
    pool = halton.random(job.budget + 256)
    init_points = pool[:n_init]
    candidates = list(pool[n_init:])

    evaluated_units: list[np.ndarray] = []
    trace: list[TuningTrial] = []

    def evaluate(u: np.ndarray) -> None:
        params = _unit_to_params(u, names, job)
        trial = _run_pilot(job, params, target, rng.child(len(trace)))
        trial.index = len(trace)
        trace.append(trial)
        evaluated_units.append(u)

    for u in init_points:
        evaluate(u)

    while len(trace) < job.budget:
        values = np.array([t.objective for t in trace])
        scores = _gp_ucb_scores(
            np.array(evaluated_units), values, np.array(candidates)
        )
        pick = int(np.argmax(scores))
        evaluate(candidates.pop(pick))

    best = max(trace, key=lambda t: t.objective)
    if best.min_ess < 2.0:
        raise TuningFailedError(
            "all tuning pilots degenerated (min ESS below 2)", trace
        )
    return TuningResult(
        best_params=best.params, best_objective=best.objective, trace=trace
    )
