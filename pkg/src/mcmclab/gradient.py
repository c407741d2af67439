"""Gradient-informed samplers: the leapfrog integrator, Hamiltonian
Monte Carlo, the Metropolis-adjusted Langevin algorithm, and the
No-U-Turn sampler (slice-variable tree-doubling variant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import (
    ChainState,
    RngStream,
    StepInfo,
    accept_or_reject,
    mh_accept_log_prob,
)

# Energy-error threshold beyond which a trajectory counts as divergent.
# Divergences are recorded, never raised: the step is simply rejected.
DIVERGENCE_DELTA_H = 1000.0


@dataclass(frozen=True)
class HmcConfig:
    """Leapfrog step size, trajectory length, and diagonal mass matrix."""

    epsilon: float
    n_leapfrog: int
    mass_diag: np.ndarray

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.n_leapfrog < 1:
            raise ValueError(f"n_leapfrog must be >= 1, got {self.n_leapfrog}")
        object.__setattr__(
            self, "mass_diag", np.asarray(self.mass_diag, dtype=float)
        )
        if np.any(self.mass_diag <= 0.0):
            raise ValueError("all mass entries must be > 0")


@dataclass(frozen=True)
class NutsConfig:
    """Step size, diagonal mass, and the tree-depth memory guard."""

    epsilon: float
    mass_diag: np.ndarray
    max_tree_depth: int = 10

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 1 <= self.max_tree_depth <= 20:
            raise ValueError(
                f"max_tree_depth must lie in [1, 20], got {self.max_tree_depth}"
            )
        object.__setattr__(
            self, "mass_diag", np.asarray(self.mass_diag, dtype=float)
        )
        if np.any(self.mass_diag <= 0.0):
            raise ValueError("all mass entries must be > 0")


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if self.q.shape != self.p.shape:
            raise ValueError("position and momentum must have equal length")


@dataclass
class LeapfrogResult:
    """Integrator output plus the final gradient (reusable as cache) and
    a divergence signal: diverged_at is the 1-based step index of the
    first non-finite value, or None for a clean trajectory."""

    point: PhasePoint
    grad: Optional[np.ndarray]
    n_grad_evals: int
    diverged_at: Optional[int] = None


def kinetic_energy(p: np.ndarray, mass_diag: np.ndarray) -> float:
    """K(p) = p' M^-1 p / 2 for a diagonal mass matrix."""
    return 0.5 * float(p @ (p / mass_diag))


def hamiltonian(point: PhasePoint, mass_diag: np.ndarray, target) -> float:
    """Total energy H = -log pi(q) + K(p); +inf outside the support."""
    logpi = float(target.log_density(point.q))
    if logpi == -np.inf:
        return np.inf
    return -logpi + kinetic_energy(point.p, mass_diag)


def leapfrog(
    point: PhasePoint,
    epsilon: float,
    n_steps: int,
    mass_diag: np.ndarray,
    target,
    grad0: Optional[np.ndarray] = None,
) -> LeapfrogResult:
    """Leapfrog integration of Hamilton's equations.

    Half momentum kick, alternating full position/momentum steps, final
    half kick; position updates use q <- q + eps * M^-1 p. Passing the
    cached entry gradient saves one evaluation; a fresh trajectory costs
    n_steps + 1 gradient evaluations.
    """
    q = point.q.astype(float, copy=True)
    p = point.p.astype(float, copy=True)
    n_evals = 0
    if grad0 is None:
        grad0 = target.gradient(q)
        n_evals += 1
    grad = np.asarray(grad0, dtype=float)

    # Exploding trajectories overflow to inf; that is the divergence
    # signal, not an error, so arithmetic warnings are suppressed here.
    with np.errstate(over="ignore", invalid="ignore"):
        p = p + 0.5 * epsilon * grad  # grad log pi = -grad U
        for i in range(1, n_steps + 1):
            q = q + epsilon * (p / mass_diag)
            grad = target.gradient(q)
            n_evals += 1
            if not np.all(np.isfinite(grad)) or not np.all(np.isfinite(q)):
                return LeapfrogResult(
                    point=PhasePoint(q=q, p=p),
                    grad=None,
                    n_grad_evals=n_evals,
                    diverged_at=i,
                )
            if i != n_steps:
                p = p + epsilon * grad
        p = p + 0.5 * epsilon * grad
    return LeapfrogResult(
        point=PhasePoint(q=q, p=p), grad=grad, n_grad_evals=n_evals
    )


def _ensure_grad(state: ChainState, target) -> ChainState:
    if state.cached_grad is None:
        return replace(state, cached_grad=np.asarray(target.gradient(state.position)))
    return state


def hmc_step(
    state: ChainState, config: HmcConfig, target, rng: RngStream
) -> tuple[ChainState, StepInfo]:
    """One HMC step: resample momentum, integrate, MH-correct on delta H.

    The momentum is flipped before the MH test for reversibility; with a
    quadratic kinetic energy the flip leaves delta H unchanged. Divergent
    trajectories (non-finite values or delta H beyond the threshold) are
    rejected and flagged, never raised.
    """
    state = _ensure_grad(state, target)
    mass = config.mass_diag
    d = state.position.shape[0]
    p0 = rng.normal(d) * np.sqrt(mass)
    h0 = -state.cached_logpi + kinetic_energy(p0, mass)

    lf = leapfrog(
        PhasePoint(q=state.position, p=p0),
        config.epsilon,
        config.n_leapfrog,
        mass,
        target,
        grad0=state.cached_grad,
    )
    info = StepInfo(
        accepted=False, accept_prob=0.0, n_leapfrog=config.n_leapfrog
    )
    if lf.diverged_at is not None:
        info.divergent = True
        return replace(state, step_index=state.step_index + 1), info

    p_prop = -lf.point.p
    logpi_prop = float(target.log_density(lf.point.q))
    h1 = (np.inf if logpi_prop == -np.inf else -logpi_prop) + kinetic_energy(
        p_prop, mass
    )
    delta_h = h1 - h0
    if not np.isfinite(delta_h) or delta_h > DIVERGENCE_DELTA_H:
        info.divergent = True
        return replace(state, step_index=state.step_index + 1), info

    log_alpha = min(0.0, -delta_h)
    proposal = ChainState(
        position=lf.point.q, cached_logpi=logpi_prop, cached_grad=lf.grad
    )
    new_state, accepted = accept_or_reject(state, proposal, log_alpha, rng)
    info.accepted = accepted
    info.accept_prob = math.exp(log_alpha)
    return new_state, info


def langevin_mean(x: np.ndarray, grad: np.ndarray, epsilon: float) -> np.ndarray:
    """Drifted proposal mean of the discretized Langevin diffusion."""
    return x + 0.5 * epsilon * epsilon * grad


def mala_step(
    state: ChainState, epsilon: float, target, rng: RngStream
) -> tuple[ChainState, StepInfo]:
    """One MALA step: Langevin-drifted Gaussian proposal with the full
    asymmetric Hastings correction evaluated in both directions.

    Costs one density and one gradient evaluation at the proposal (the
    current gradient is carried in the state cache).
    """
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    state = _ensure_grad(state, target)
    x = state.position
    d = x.shape[0]
    z = rng.normal(d)
    mean_fwd = langevin_mean(x, state.cached_grad, epsilon)
    xp = mean_fwd + epsilon * z
    logpi_p = float(target.log_density(xp))

    if logpi_p == -np.inf:
        # Certain rejection; skip the reverse gradient, keep the coin flip.
        new_state, accepted = accept_or_reject(
            state, state, -np.inf, rng
        )
        return new_state, StepInfo(accepted=accepted, accept_prob=0.0)

    grad_p = np.asarray(target.gradient(xp), dtype=float)
    mean_bwd = langevin_mean(xp, grad_p, epsilon)
    two_eps2 = 2.0 * epsilon * epsilon
    logg_fwd = -float(z @ z) / 2.0
    diff_bwd = x - mean_bwd
    logg_bwd = -float(diff_bwd @ diff_bwd) / two_eps2
    log_alpha = mh_accept_log_prob(
        state.cached_logpi, logpi_p, logg_fwd, logg_bwd
    )
    proposal = ChainState(position=xp, cached_logpi=logpi_p, cached_grad=grad_p)
    new_state, accepted = accept_or_reject(state, proposal, log_alpha, rng)
    return new_state, StepInfo(accepted=accepted, accept_prob=math.exp(log_alpha))


def uturn_triggered(
    q_minus: np.ndarray,
    q_plus: np.ndarray,
    p_minus: np.ndarray,
    p_plus: np.ndarray,
    mass_diag: Optional[np.ndarray] = None,
) -> bool:
    """True when either trajectory endpoint is moving back toward the
    other, i.e. (q+ - q-) . v < 0 with v the endpoint velocity M^-1 p
    (plain momentum for a unit mass matrix)."""
    dq = q_plus - q_minus
    if mass_diag is not None:
        return float(dq @ (p_minus / mass_diag)) < 0.0 or float(
            dq @ (p_plus / mass_diag)
        ) < 0.0
    return float(dq @ p_minus) < 0.0 or float(dq @ p_plus) < 0.0


@dataclass
class _Tree:
    q_minus: np.ndarray
    p_minus: np.ndarray
    grad_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    grad_plus: np.ndarray
    q_prop: np.ndarray
    logpi_prop: float
    grad_prop: Optional[np.ndarray]
    n_valid: int
    keep_going: bool
    alpha_sum: float
    n_alpha: int
    n_leapfrog: int
    divergent: bool


def _tree_leaf(q, p, grad, direction, config, log_u, joint0, target) -> _Tree:
    lf = leapfrog(
        PhasePoint(q=q, p=p),
        direction * config.epsilon,
        1,
        config.mass_diag,
        target,
        grad0=grad,
    )
    qn, pn = lf.point.q, lf.point.p
    if lf.diverged_at is not None:
        joint = -np.inf
        logpi_n = -np.inf
        grad_n = np.zeros_like(q)
    else:
        logpi_n = float(target.log_density(qn))
        joint = logpi_n - kinetic_energy(pn, config.mass_diag)
        grad_n = lf.grad
    n_valid = int(log_u <= joint)
    keep_going = bool(joint - log_u > -DIVERGENCE_DELTA_H)
    alpha = math.exp(min(0.0, joint - joint0)) if np.isfinite(joint) else 0.0
    return _Tree(
        q_minus=qn,
        p_minus=pn,
        grad_minus=grad_n,
        q_plus=qn,
        p_plus=pn,
        grad_plus=grad_n,
        q_prop=qn,
        logpi_prop=logpi_n,
        grad_prop=grad_n,
        n_valid=n_valid,
        keep_going=keep_going,
        alpha_sum=alpha,
        n_alpha=1,
        n_leapfrog=1,
        divergent=not keep_going,
    )


def _build_tree(
    q, p, grad, direction, depth, config, log_u, joint0, target, rng
) -> _Tree:
    if depth == 0:
        return _tree_leaf(q, p, grad, direction, config, log_u, joint0, target)

    first = _build_tree(
        q, p, grad, direction, depth - 1, config, log_u, joint0, target, rng
    )
    if not first.keep_going:
        return first

    if direction < 0:
        second = _build_tree(
            first.q_minus,
            first.p_minus,
            first.grad_minus,
            direction,
            depth - 1,
            config,
            log_u,
            joint0,
            target,
            rng,
        )
        first.q_minus = second.q_minus
        first.p_minus = second.p_minus
        first.grad_minus = second.grad_minus
    else:
        second = _build_tree(
            first.q_plus,
            first.p_plus,
            first.grad_plus,
            direction,
            depth - 1,
            config,
            log_u,
            joint0,
            target,
            rng,
        )
        first.q_plus = second.q_plus
        first.p_plus = second.p_plus
        first.grad_plus = second.grad_plus

    total = first.n_valid + second.n_valid
    if second.n_valid > 0 and rng.uniform() < second.n_valid / total:
        first.q_prop = second.q_prop
        first.logpi_prop = second.logpi_prop
        first.grad_prop = second.grad_prop
    first.n_valid = total
    first.alpha_sum += second.alpha_sum
    first.n_alpha += second.n_alpha
    first.n_leapfrog += second.n_leapfrog
    first.divergent = first.divergent or second.divergent
    first.keep_going = second.keep_going and not uturn_triggered(
        first.q_minus, first.q_plus, first.p_minus, first.p_plus, config.mass_diag
    )
    return first


def nuts_step(
    state: ChainState, config: NutsConfig, target, rng: RngStream
) -> tuple[ChainState, StepInfo]:
    """One No-U-Turn step: double the trajectory in a random direction
    per level until a U-turn fires, the slice empties, a divergence
    occurs, or the depth guard is hit, then draw the next state from the
    valid tree states.

    The total leapfrog count per step is bounded by 2^max_tree_depth.
    Depth saturation is recorded in the info, never raised.
    """
    state = _ensure_grad(state, target)
    mass = config.mass_diag
    d = state.position.shape[0]
    p0 = rng.normal(d) * np.sqrt(mass)
    joint0 = state.cached_logpi - kinetic_energy(p0, mass)
    log_u = joint0 - rng.exponential()

    q_minus = q_plus = state.position
    p_minus = p_plus = p0
    grad_minus = grad_plus = state.cached_grad
    q_prop = state.position
    logpi_prop = state.cached_logpi
    grad_prop = state.cached_grad

    n_valid = 1
    depth = 0
    keep_going = True
    divergent = False
    alpha_sum = 0.0
    n_alpha = 0
    n_leapfrog = 0
    adopted = False

    while keep_going and depth < config.max_tree_depth:
        direction = -1 if rng.uniform() < 0.5 else 1
        if direction < 0:
            tree = _build_tree(
                q_minus, p_minus, grad_minus, direction, depth, config,
                log_u, joint0, target, rng,
            )
            q_minus, p_minus, grad_minus = tree.q_minus, tree.p_minus, tree.grad_minus
        else:
            tree = _build_tree(
                q_plus, p_plus, grad_plus, direction, depth, config,
                log_u, joint0, target, rng,
            )
            q_plus, p_plus, grad_plus = tree.q_plus, tree.p_plus, tree.grad_plus

        alpha_sum += tree.alpha_sum
        n_alpha += tree.n_alpha
        n_leapfrog += tree.n_leapfrog
        divergent = divergent or tree.divergent

        if tree.keep_going and tree.n_valid > 0:
            if rng.uniform() < min(1.0, tree.n_valid / n_valid):
                q_prop = tree.q_prop
                logpi_prop = tree.logpi_prop
                grad_prop = tree.grad_prop
                adopted = True
        n_valid += tree.n_valid
        keep_going = tree.keep_going and not uturn_triggered(
            q_minus, q_plus, p_minus, p_plus, mass
        )
        depth += 1

    new_state = ChainState(
        position=q_prop,
        cached_logpi=logpi_prop,
        cached_grad=grad_prop,
        step_index=state.step_index + 1,
    )
    info = StepInfo(
        accepted=adopted,
        accept_prob=alpha_sum / max(n_alpha, 1),
        divergent=divergent,
        tree_depth=depth,
        n_leapfrog=n_leapfrog,
    )
    return new_state, info
