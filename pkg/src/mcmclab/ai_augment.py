"""Learned helpers that keep the exact Metropolis correction.

A kernel-ridge surrogate of the log-density drives a two-stage
delayed-acceptance kernel (the cheap model screens proposals, the true
density corrects survivors, so the stationary law is untouched), and an
EM-fitted Gaussian-mixture independence proposal provides global mode
jumps with a tractable Hastings correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .core import (
    ChainRecord,
    ChainState,
    RngStream,
    StepInfo,
    accept_or_reject,
    make_state,
    mh_decision,
    run_chain,
)
from .classic import RwmConfig, rwm_step
from .targets import TargetDensity


class SurrogateFitError(ValueError):
    """Kernel system could not be fit at the requested ridge."""


@dataclass
class SurrogateModel:
    """Squared-exponential kernel ridge regression of the log-density.

    The fitted weights reproduce the training values up to a
    ridge-controlled tolerance; ``n_evals`` counts predictions and is
    bookkeeping only (it never touches the true-evaluation counters).
    """

    inputs: np.ndarray
    values: np.ndarray
    bandwidth: float
    ridge: float
    weights: np.ndarray
    n_evals: int = 0

    @property
    def n_train(self) -> int:
        return self.inputs.shape[0]

    def predict(self, x: np.ndarray) -> float:
        return surrogate_predict(self, x)


def _se_cross(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        - 2.0 * a @ b.T
        + np.sum(b * b, axis=1)[None, :]
    )
    return np.exp(-0.5 * np.maximum(d2, 0.0) / (bandwidth * bandwidth))


def fit_surrogate(
    points: np.ndarray, logpi_values: np.ndarray, bandwidth: float, ridge: float
) -> SurrogateModel:
    """Fit the regularized kernel system (K + ridge I) w = y.

    Duplicate rows (within 1e-12) are rejected up front: they make the
    system singular at any useful ridge. After the solve, the training
    residuals are checked against the 10 * ridge * ||y||_inf tolerance.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(logpi_values, dtype=float)
    m = x.shape[0]
    if m < 2:
        raise ValueError(f"need at least 2 training points, got {m}")
    if y.shape != (m,):
        raise ValueError("points and values disagree on length")
    if not bandwidth > 0.0 or not ridge > 0.0:
        raise ValueError("bandwidth and ridge must be > 0")
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ x.T
        + np.sum(x * x, axis=1)[None, :]
    )
    np.fill_diagonal(d2, np.inf)
    if np.min(d2) < 1e-24:
        i, j = np.unravel_index(np.argmin(d2), d2.shape)
        raise ValueError(f"duplicate training rows {i} and {j}")
    gram = _se_cross(x, x, bandwidth)
    try:
        chol = linalg.cho_factor(gram + ridge * np.eye(m))
        w = linalg.cho_solve(chol, y)
    except linalg.LinAlgError as exc:
        raise SurrogateFitError(
            f"kernel system is singular at ridge {ridge}; increase the ridge"
        ) from exc
    residual = float(np.max(np.abs(gram @ w - y)))
    tol = 10.0 * ridge * float(np.max(np.abs(y))) if np.any(y) else 10.0 * ridge
    if residual > tol:
        raise SurrogateFitError(
            f"training residual {residual:.3g} exceeds tolerance {tol:.3g}; "
            "increase the ridge"
        )
    return SurrogateModel(
        inputs=x.copy(), values=y.copy(), bandwidth=bandwidth, ridge=ridge, weights=w
    )


def surrogate_predict(model: SurrogateModel, x: np.ndarray) -> float:
    """Predicted log-density: a weighted kernel sum, cost O(M d)."""
    x = np.asarray(x, dtype=float)[None, :]
    k = _se_cross(x, model.inputs, model.bandwidth)[0]
    model.n_evals += 1
    return float(k @ model.weights)


def training_distance(model: SurrogateModel, x: np.ndarray) -> float:
    """Distance to the nearest training input (low-confidence beyond
    3 bandwidths, where the kernel sum has decayed toward 0)."""
    diff = model.inputs - np.asarray(x, dtype=float)[None, :]
    return float(np.sqrt(np.min(np.sum(diff * diff, axis=1))))


def surrogate_low_confidence(model: SurrogateModel, x: np.ndarray) -> bool:
    return training_distance(model, x) > 3.0 * model.bandwidth


def surrogate_as_target(model: SurrogateModel, dim: int) -> TargetDensity:
    """Expose the surrogate itself as a (gradient-free) target density.

    This is the approximate mode: running a plain MH chain against it
    skips every true evaluation and converges to the surrogate's law,
    not the target's; any bias is measured by the benchmarks, never
    assumed away.
    """
    return TargetDensity(
        name="surrogate",
        dim=dim,
        log_density=lambda x: surrogate_predict(model, x),
    )


def delayed_acceptance_step(
    state: ChainState,
    inner_proposal: Callable[[np.ndarray, RngStream], np.ndarray],
    surrogate: SurrogateModel,
    target,
    rng: RngStream,
) -> tuple[ChainState, StepInfo]:
    """Two-stage MH step: the surrogate screens, the true density corrects.

    Stage 1 applies the plain MH rule to surrogate values; only
    survivors pay a true evaluation, accepted in stage 2 with ratio
    min(1, [pi(x') s(x)] / [pi(x) s(x')]) for a symmetric inner
    proposal. The composed kernel satisfies detailed balance for pi
    regardless of surrogate quality.
    """
    x = state.position
    xp = np.asarray(inner_proposal(x, rng), dtype=float)
    s_cur = surrogate.predict(x)
    s_prop = surrogate.predict(xp)

    log_a1 = min(0.0, s_prop - s_cur)
    if not mh_decision(log_a1, rng.uniform()):
        new_state = replace(state, step_index=state.step_index + 1)
        return new_state, StepInfo(
            accepted=False, accept_prob=math.exp(log_a1), stage1_pass=False
        )

    logpi_p = float(target.log_density(xp))
    if logpi_p == -np.inf:
        log_a2 = -np.inf
    else:
        log_a2 = min(0.0, (logpi_p + s_cur) - (state.cached_logpi + s_prop))
    proposal = ChainState(position=xp, cached_logpi=logpi_p)
    new_state, accepted = accept_or_reject(state, proposal, log_a2, rng)
    return new_state, StepInfo(
        accepted=accepted,
        accept_prob=math.exp(log_a1) * math.exp(min(0.0, log_a2)),
        stage1_pass=True,
    )


def gaussian_walk_proposal(sigma: float) -> Callable[[np.ndarray, RngStream], np.ndarray]:
    """Symmetric random-walk inner kernel for delayed acceptance."""
    if not sigma > 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")

    def propose(x, rng):
        return x + sigma * rng.normal(x.shape[0])

    return propose


def refine_surrogate(
    model: SurrogateModel, chain: ChainRecord, target, n_new: int
) -> SurrogateModel:
    """Grow the training set with the visited states worst-predicted by
    the current model (their true values were already paid for in stage
    2), then refit. Warmup-phase only: after the freeze the surrogate
    must stay fixed for the chain to be time-homogeneous.
    """
    if n_new < 0:
        raise ValueError(f"n_new must be >= 0, got {n_new}")
    if chain.n_samples == 0:
        raise ValueError("chain record is empty")
    if n_new == 0:
        return model

    positions, first_idx = np.unique(chain.samples, axis=0, return_index=True)
    values = chain.logpi[first_idx]
    keep = []
    for i, pos in enumerate(positions):
        if training_distance(model, pos) > 1e-12:
            keep.append(i)
    if not keep:
        return model
    positions = positions[keep]
    values = values[keep]

    pred = _se_cross(positions, model.inputs, model.bandwidth) @ model.weights
    model.n_evals += positions.shape[0]
    residual = np.abs(pred - values)
    order = np.argsort(residual)[::-1][:n_new]
    new_inputs = np.vstack([model.inputs, positions[order]])
    new_values = np.concatenate([model.values, values[order]])
    return fit_surrogate(new_inputs, new_values, model.bandwidth, model.ridge)


def surrogate_grid_error(model: SurrogateModel, target, grid: np.ndarray) -> float:
    """Max absolute prediction error over a held-out grid."""
    errs = [
        abs(surrogate_predict(model, g) - float(target.log_density(g))) for g in grid
    ]
    return float(np.max(errs))


def _farthest_point_subset(points: np.ndarray, n: int) -> np.ndarray:
    """Greedy max-min selection of up to n rows (space-filling subsample,
    which also keeps the kernel system well conditioned)."""
    kept = [0]
    d2 = np.sum((points - points[0]) ** 2, axis=1)
    for _ in range(min(n, points.shape[0]) - 1):
        i = int(np.argmax(d2))
        if d2[i] <= 1e-20:
            break
        kept.append(i)
        d2 = np.minimum(d2, np.sum((points - points[i]) ** 2, axis=1))
    return np.array(kept)


def build_surrogate_from_warmup(
    target,
    state: ChainState,
    rng: RngStream,
    n_train: int,
    bandwidth: float,
    ridge: float,
    inner_sigma: float,
    warmup_steps: int,
    refine_rounds: int = 0,
    refine_batch: int = 0,
) -> tuple[SurrogateModel, ChainState]:
    """Warmup pipeline for delayed acceptance.

    A plain random-walk warmup pays for true values along its path; the
    surrogate is fit on a space-filling (farthest-point) subsample of
    the distinct visited states, then optionally refined against further
    delayed-acceptance warmup chunks. Everything here runs before the
    freeze.
    """
    cfg = RwmConfig(sigma=inner_sigma)
    record, state = run_chain(
        lambda s, r: rwm_step(s, cfg, target, r), state, warmup_steps, rng
    )
    positions, first_idx = np.unique(record.samples, axis=0, return_index=True)
    values = record.logpi[first_idx]
    if positions.shape[0] < 2:
        raise SurrogateFitError("warmup visited fewer than 2 distinct states")
    take = _farthest_point_subset(positions, n_train)
    model = fit_surrogate(positions[take], values[take], bandwidth, ridge)

    proposal = gaussian_walk_proposal(inner_sigma)
    for _ in range(refine_rounds):
        chunk, state = run_chain(
            lambda s, r: delayed_acceptance_step(s, proposal, model, target, r),
            state,
            warmup_steps,
            rng,
        )
        model = refine_surrogate(model, chunk, target, refine_batch)
    return model, state


@dataclass
class MixtureProposal:
    """Diagonal-covariance Gaussian mixture with tractable density.

    Frozen after fitting: ``generation`` increments on every refit so a
    constant value certifies a time-homogeneous post-warmup kernel.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    generation: int = 0
    loglik_trace: Optional[np.ndarray] = None

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_logpdfs(self, x: np.ndarray) -> np.ndarray:
        diff = x[None, :] - self.means
        return (
            np.log(self.weights)
            - 0.5 * np.sum(diff * diff / self.variances, axis=1)
            - 0.5 * np.sum(np.log(self.variances), axis=1)
            - 0.5 * self.dim * math.log(2.0 * math.pi)
        )

    def log_density(self, x: np.ndarray) -> float:
        return float(logsumexp(self.component_logpdfs(np.asarray(x, dtype=float))))

    def sample(self, rng: RngStream) -> np.ndarray:
        u = rng.uniform()
        k = int(np.searchsorted(np.cumsum(self.weights), u))
        k = min(k, self.n_components - 1)
        return self.means[k] + np.sqrt(self.variances[k]) * rng.normal(self.dim)


_EM_MAX_ITER = 200
_EM_TOL = 1e-8
_VAR_FLOOR = 1e-6


def _kmeanspp_seeds(samples: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    n = samples.shape[0]
    seeds = [samples[rng.integers(0, n)]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((samples - s) ** 2, axis=1) for s in seeds], axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            seeds.append(samples[rng.integers(0, n)])
            continue
        u = rng.uniform() * total
        seeds.append(samples[int(np.searchsorted(np.cumsum(d2), u))])
    return np.array(seeds)


def fit_gmm(
    samples: np.ndarray,
    k: int,
    rng: RngStream,
    init_means: Optional[np.ndarray] = None,
) -> MixtureProposal:
    """Diagonal-covariance EM with k-means++-style seeding.

    Stops at 200 iterations or when the mean log-likelihood improves by
    less than 1e-8. Empty components are reseeded at the sample point
    the current mixture explains worst (its lowest-density point).
    ``init_means`` overrides the seeding (useful for reproducing a known
    configuration).
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = x.shape
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < 10 * k:
        raise ValueError(f"need at least {10 * k} samples for k={k}, got {n}")

    if init_means is not None:
        means = np.asarray(init_means, dtype=float).copy()
        if means.shape != (k, d):
            raise ValueError(f"init_means must have shape ({k}, {d})")
    else:
        means = _kmeanspp_seeds(x, k, rng)
    global_var = np.maximum(x.var(axis=0), _VAR_FLOOR)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    trace = []
    prev_ll = -np.inf
    for _ in range(_EM_MAX_ITER):
        # E-step in log space.
        log_resp = (
            np.log(weights)[None, :]
            - 0.5
            * np.sum(
                (x[:, None, :] - means[None, :, :]) ** 2 / variances[None, :, :],
                axis=2,
            )
            - 0.5 * np.sum(np.log(variances), axis=1)[None, :]
            - 0.5 * d * math.log(2.0 * math.pi)
        )
        norm = logsumexp(log_resp, axis=1)
        ll = float(np.mean(norm))
        trace.append(ll)
        resp = np.exp(log_resp - norm[:, None])

        mass = resp.sum(axis=0)
        empty = mass < 1e-10
        if np.any(empty):
            worst = int(np.argmin(norm))
            for j in np.where(empty)[0]:
                means[j] = x[worst]
                variances[j] = global_var
                weights[j] = 1.0 / k
            weights = weights / weights.sum()
            prev_ll = -np.inf
            continue

        weights = mass / n
        means = (resp.T @ x) / mass[:, None]
        sq = resp.T @ (x * x) / mass[:, None]
        variances = np.maximum(sq - means * means, _VAR_FLOOR)

        if ll - prev_ll < _EM_TOL and np.isfinite(prev_ll):
            break
        prev_ll = ll

    weights = weights / weights.sum()
    return MixtureProposal(
        weights=weights,
        means=means,
        variances=variances,
        generation=1,
        loglik_trace=np.array(trace),
    )


def independence_proposal_step(
    state: ChainState, proposal: MixtureProposal, target, rng: RngStream
) -> tuple[ChainState, StepInfo]:
    """MH step with a state-independent mixture draw.

    The Hastings ratio min(1, [pi(x') g(x)] / [pi(x) g(x')]) corrects
    for the mismatch between mixture and target; a numerically-zero
    mixture density at the current state forces a recorded rejection,
    not an error.
    """
    xp = proposal.sample(rng)
    logg_prop = proposal.log_density(xp)
    logg_cur = proposal.log_density(state.position)

    if not np.isfinite(logg_cur):
        new_state, accepted = accept_or_reject(state, state, -np.inf, rng)
        return new_state, StepInfo(accepted=False, accept_prob=0.0)

    logpi_p = float(target.log_density(xp))
    if logpi_p == -np.inf:
        log_alpha = -np.inf
    else:
        log_alpha = min(
            0.0, (logpi_p + logg_cur) - (state.cached_logpi + logg_prop)
        )
    new = ChainState(position=xp, cached_logpi=logpi_p)
    new_state, accepted = accept_or_reject(state, new, log_alpha, rng)
    return new_state, StepInfo(
        accepted=accepted,
        accept_prob=math.exp(log_alpha) if log_alpha != -np.inf else 0.0,
    )


def fit_mixture_from_overdispersed(
    target,
    rng: RngStream,
    n_chains: int,
    warmup_steps: int,
    sigma: float,
    k: int,
) -> MixtureProposal:
    """Fit the global proposal from parallel overdispersed warmup chains.

    Chains start uniformly inside the target box so that well-separated
    modes each capture some of them; pooling the second halves breaks the
    single-trapped-chain feedback loop at desk scale.
    """
    if target.box is None:
        raise ValueError("target needs an evaluation box for overdispersed starts")
    lo, hi = target.box
    cfg = RwmConfig(sigma=sigma)
    pooled = []
    for c in range(n_chains):
        sub = rng.child(c)
        start = lo + (hi - lo) * np.array([sub.uniform() for _ in range(target.dim)])
        state = make_state(target, start, with_grad=False)
        record, _ = run_chain(
            lambda s, r: rwm_step(s, cfg, target, r), state, warmup_steps, sub
        )
        pooled.append(record.samples[warmup_steps // 2 :])
    return fit_gmm(np.vstack(pooled), k, rng)
