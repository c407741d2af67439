"""Gradient-free samplers: random-walk Metropolis, generic
Metropolis-Hastings with arbitrary proposal kernels, and systematic-scan
Gibbs sampling (with Metropolis-within-Gibbs slots for intractable
conditionals).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from .core import (
    ChainState,
    ProposalError,
    RngStream,
    StepInfo,
    accept_or_reject,
    mh_accept_log_prob,
    mh_decision,
)


class ConditionalError(ValueError):
    """A full-conditional draw produced a non-finite value."""


@dataclass(frozen=True)
class RwmConfig:
    """Isotropic Gaussian random-walk proposal scale."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def rwm_step(
    state: ChainState, config: RwmConfig, target, rng: RngStream
) -> tuple[ChainState, StepInfo]:
    """One random-walk Metropolis step, x' ~ N(x, sigma^2 I).

    The proposal is symmetric, so the Hastings correction vanishes and
    uphill moves are always accepted. Costs one target evaluation.
    """
    x = state.position
    xp = x + config.sigma * rng.normal(x.shape[0])
    logpi_p = float(target.log_density(xp))
    log_alpha = mh_accept_log_prob(state.cached_logpi, logpi_p)
    proposal = ChainState(position=xp, cached_logpi=logpi_p)
    new_state, accepted = accept_or_reject(state, proposal, log_alpha, rng)
    return new_state, StepInfo(accepted=accepted, accept_prob=math.exp(log_alpha))


def mh_step(
    state: ChainState,
    proposal_sampler: Callable[[np.ndarray, RngStream], np.ndarray],
    proposal_logdensity: Callable[[np.ndarray, np.ndarray], float],
    target,
    rng: RngStream,
) -> tuple[ChainState, StepInfo]:
    """One Metropolis-Hastings step with a fully general proposal kernel.

    ``proposal_sampler(x, rng)`` draws x' given x;
    ``proposal_logdensity(x_to, x_from)`` evaluates log g(x_to | x_from)
    in both directions for the Hastings correction.
    """
    x = state.position
    xp = np.asarray(proposal_sampler(x, rng), dtype=float)
    if not np.all(np.isfinite(xp)):
        raise ProposalError(f"proposal produced non-finite coordinates: {xp}")
    logpi_p = float(target.log_density(xp))
    logg_fwd = float(proposal_logdensity(xp, x))
    logg_bwd = float(proposal_logdensity(x, xp))
    log_alpha = mh_accept_log_prob(state.cached_logpi, logpi_p, logg_fwd, logg_bwd)
    proposal = ChainState(position=xp, cached_logpi=logpi_p)
    new_state, accepted = accept_or_reject(state, proposal, log_alpha, rng)
    return new_state, StepInfo(accepted=accepted, accept_prob=math.exp(log_alpha))


@dataclass(frozen=True)
class GaussianConditional:
    """Exact Normal full conditional of one Gaussian coordinate.

    Drawn as mean_i + coef . (x_rest - mean_rest) + sd * z.
    """

    mean_i: float
    mean_rest: np.ndarray
    coef: np.ndarray
    sd: float

    def conditional_mean(self, x_rest: np.ndarray) -> float:
        return self.mean_i + float(self.coef @ (x_rest - self.mean_rest))

    @property
    def variance(self) -> float:
        return self.sd * self.sd

    def __call__(self, x_rest: np.ndarray, rng: RngStream) -> float:
        return self.conditional_mean(x_rest) + self.sd * rng.normal()


@dataclass(frozen=True)
class MwgConditional:
    """Marker for a Metropolis-within-Gibbs slot: a 1-d random walk on
    the coordinate's full conditional (used when the FCD is intractable)."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass
class FullConditionalSet:
    """Ordered per-coordinate conditional samplers for a systematic scan.

    Each slot is either a callable (x_rest, rng) -> float drawing the
    coordinate exactly, or an MwgConditional marker handled by
    ``gibbs_step`` via a nested 1-d MH update.
    """

    conditionals: list

    def __len__(self) -> int:
        return len(self.conditionals)


def gaussian_fcd(mean: np.ndarray, cov: np.ndarray, index: int) -> GaussianConditional:
    """Exact Normal conditional of coordinate ``index`` given the rest.

    Uses the precision identities: variance 1/Q_ii and regression
    coefficients -Q_{i,-i}/Q_ii, equivalent to the Schur-complement form.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.shape[0]
    if not 0 <= index < d:
        raise ValueError(f"index {index} out of range for dimension {d}")
    try:
        chol = linalg.cho_factor(cov)
    except linalg.LinAlgError as exc:
        raise ValueError(f"covariance is not SPD: {exc}") from exc
    prec = linalg.cho_solve(chol, np.eye(d))
    var = 1.0 / prec[index, index]
    rest = np.arange(d) != index
    coef = -prec[index, rest] * var
    return GaussianConditional(
        mean_i=float(mean[index]),
        mean_rest=mean[rest].copy(),
        coef=np.asarray(coef, dtype=float),
        sd=math.sqrt(var),
    )


def gaussian_fcds(mean: np.ndarray, cov: np.ndarray) -> FullConditionalSet:
    """Full conditional set for a multivariate Gaussian, one slot per axis."""
    d = np.asarray(mean).shape[0]
    return FullConditionalSet([gaussian_fcd(mean, cov, i) for i in range(d)])


def mwg_fcds(dim: int, sigma: float) -> FullConditionalSet:
    """All-coordinates Metropolis-within-Gibbs set (generic fallback)."""
    return FullConditionalSet([MwgConditional(sigma)] * dim)


def gibbs_step(
    state: ChainState,
    fcds: FullConditionalSet,
    target,
    rng: RngStream,
) -> tuple[ChainState, StepInfo]:
    """One systematic Gibbs scan: coordinates updated in index order.

    Exact-FCD slots are accepted by construction; MwG slots run a 1-d MH
    update on the full conditional and report per-slot acceptance. One
    full scan counts as one chain step, and the scan's log-density is
    refreshed at most once per scan beyond what MwG slots already paid.
    """
    d = state.position.shape[0]
    if len(fcds) != d:
        raise ValueError(f"need {d} conditionals, got {len(fcds)}")
    x = state.position.copy()
    slot_accepts = np.ones(d)
    cur_logpi = state.cached_logpi
    stale = False

    for i, cond in enumerate(fcds.conditionals):
        if isinstance(cond, MwgConditional):
            if stale:
                cur_logpi = float(target.log_density(x))
                stale = False
            prop = x.copy()
            prop[i] = x[i] + cond.sigma * rng.normal()
            logpi_prop = float(target.log_density(prop))
            log_alpha = mh_accept_log_prob(cur_logpi, logpi_prop)
            if mh_decision(log_alpha, rng.uniform()):
                x = prop
                cur_logpi = logpi_prop
            else:
                slot_accepts[i] = 0.0
        else:
            rest = np.concatenate([x[:i], x[i + 1 :]])
            value = float(cond(rest, rng))
            if not np.isfinite(value):
                raise ConditionalError(
                    f"conditional {i} produced non-finite draw {value}"
                )
            x[i] = value
            stale = True

    if stale:
        cur_logpi = float(target.log_density(x))
    new_state = ChainState(
        position=x, cached_logpi=cur_logpi, step_index=state.step_index + 1
    )
    return new_state, StepInfo(
        accepted=True, accept_prob=1.0, slot_accepts=slot_accepts
    )


def funnel_fcds(target, mwg_sigma: float = 3.0) -> FullConditionalSet:
    """Conditional set for the funnel: exact x_i | v draws, MwG on v.

    x_i | v is Normal(0, e^v); the v-conditional is non-standard, so
    slot 0 is a 1-d random walk on the full log-density.
    """
    d = target.dim

    def x_slot(x_rest, rng):
        # x_rest[0] is v for every slot i >= 1.
        return math.exp(0.5 * float(x_rest[0])) * rng.normal()

    slots: list = [MwgConditional(mwg_sigma)]
    slots.extend([x_slot] * (d - 1))
    return FullConditionalSet(slots)
