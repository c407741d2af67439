"""Analytic benchmark densities with exact log-densities, gradients, and
moments.

Every target is unnormalized (constants independent of x are dropped;
MH ratios cancel them). Each carries a documented evaluation box used
for gradient checking, overdispersed chain starts, and surrogate
training designs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class StencilError(ValueError):
    """A finite-difference stencil hit a non-finite density value."""


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized log-density over R^dim with optional extras.

    ``gradient`` is the analytic gradient of ``log_density`` when
    available. ``analytic_mean``/``analytic_cov`` enable moment oracles.
    ``fcd_support`` marks targets whose full conditionals are tractable
    Gaussians (constructable from the analytic moments). ``box`` is the
    (lo, hi) region where evaluation is well-behaved and tests sample.
    """

    name: str
    dim: int
    log_density: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    analytic_mean: Optional[np.ndarray] = None
    analytic_cov: Optional[np.ndarray] = None
    fcd_support: bool = False
    box: Optional[tuple[np.ndarray, np.ndarray]] = None


def make_standard_gaussian(d: int) -> TargetDensity:
    """Isotropic unit Gaussian, log pi(x) = -||x||^2 / 2."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")

    def log_density(x):
        return -0.5 * float(x @ x)

    def gradient(x):
        return -np.asarray(x, dtype=float)

    return TargetDensity(
        name="standard_gaussian",
        dim=d,
        log_density=log_density,
        gradient=gradient,
        analytic_mean=np.zeros(d),
        analytic_cov=np.eye(d),
        fcd_support=True,
        box=(np.full(d, -3.0), np.full(d, 3.0)),
    )


def ar1_precision(d: int, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Tridiagonal precision of the AR(1) covariance rho^|i-j|.

    Returns (main diagonal, off diagonal); off diagonal is empty for d=1.
    """
    if d == 1:
        return np.array([1.0]), np.array([])
    scale = 1.0 / (1.0 - rho * rho)
    main = np.full(d, (1.0 + rho * rho) * scale)
    main[0] = main[-1] = scale
    off = np.full(d - 1, -rho * scale)
    return main, off


def make_ar1_gaussian(d: int, rho: float) -> TargetDensity:
    """Zero-mean Gaussian with covariance rho^|i-j| (correlation ridge).

    Log-density and gradient go through the exact tridiagonal precision,
    so the cost per evaluation is O(d) even at high dimension.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if not abs(rho) < 1.0:
        raise ValueError(f"rho must lie in (-1, 1), got {rho}")
    main, off = ar1_precision(d, rho)

    def log_density(x):
        quad = float(main @ (x * x))
        if d > 1:
            quad += 2.0 * float(off @ (x[:-1] * x[1:]))
        return -0.5 * quad

    def gradient(x):
        y = main * x
        if d > 1:
            y[:-1] += off * x[1:]
            y[1:] += off * x[:-1]
        return -y

    idx = np.arange(d)
    cov = rho ** np.abs(idx[:, None] - idx[None, :])
    return TargetDensity(
        name="ar1_gaussian",
        dim=d,
        log_density=log_density,
        gradient=gradient,
        analytic_mean=np.zeros(d),
        analytic_cov=cov,
        fcd_support=True,
        box=(np.full(d, -3.0), np.full(d, 3.0)),
    )


def make_funnel(d: int) -> TargetDensity:
    """Neal-style funnel: v ~ N(0, 9), x_i | v ~ N(0, e^v).

    Coordinate 0 is v, coordinates 1..d-1 are the x_i. The hierarchical
    form integrates out exactly, so the v-marginal has mean 0 and
    variance 9 regardless of d.
    """
    if d < 2:
        raise ValueError(f"funnel needs dimension >= 2, got {d}")
    k = d - 1

    # Overflow far in the neck (or at exploded trajectory points) is
    # expected: the resulting inf/-inf values are divergence signals.
    def log_density(x):
        v = float(x[0])
        with np.errstate(over="ignore"):
            s = float(x[1:] @ x[1:])
        if s > 0.0 and v < -700.0:  # exp(-v) overflows; density underflows anyway
            return -np.inf
        tail = 0.0 if s == 0.0 else -0.5 * math.exp(-v) * s
        return -v * v / 18.0 - 0.5 * k * v + tail

    def gradient(x):
        v = float(x[0])
        g = np.empty_like(x, dtype=float)
        ev = math.exp(-min(max(v, -700.0), 700.0))
        with np.errstate(over="ignore"):
            s = float(x[1:] @ x[1:])
            g[0] = -v / 9.0 - 0.5 * k + 0.5 * ev * s
            g[1:] = -x[1:] * ev
        return g

    cov = np.eye(d) * math.exp(4.5)
    cov[0, 0] = 9.0
    lo = np.full(d, -3.0)
    hi = np.full(d, 3.0)
    lo[0], hi[0] = -2.5, 3.0
    return TargetDensity(
        name="funnel",
        dim=d,
        log_density=log_density,
        gradient=gradient,
        analytic_mean=np.zeros(d),
        analytic_cov=cov,
        fcd_support=False,
        box=(lo, hi),
    )


def make_banana() -> TargetDensity:
    """Curved-ridge 2-d target, log pi(x, y) = -(1-x)^2/2 - 5 (y - x^2)^2.

    Rosenbrock-style valley scaled so unit-step proposals are neither
    always accepted nor always rejected. No analytic moments.
    """

    def log_density(x):
        a = 1.0 - x[0]
        b = x[1] - x[0] * x[0]
        return -0.5 * float(a * a) - 5.0 * float(b * b)

    def gradient(x):
        b = x[1] - x[0] * x[0]
        return np.array([(1.0 - x[0]) + 20.0 * x[0] * b, -10.0 * b])

    return TargetDensity(
        name="banana",
        dim=2,
        log_density=log_density,
        gradient=gradient,
        box=(np.array([-2.0, -1.0]), np.array([2.0, 4.0])),
    )


def make_bimodal_mixture(d: int, separation: float, weight: float) -> TargetDensity:
    """Two unit-covariance Gaussians at -mu and +mu, mu = (separation/2) e1.

    Component weights are (weight, 1-weight); the default Gap-1 fixture
    uses separation 8 and weight 0.5 (modes 8 marginal sd apart, wide
    enough to trap local samplers).
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if separation < 0.0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    if not 0.0 < weight < 1.0:
        raise ValueError(f"weight must lie in (0, 1), got {weight}")
    mu = np.zeros(d)
    mu[0] = 0.5 * separation
    log_w1 = math.log(weight)
    log_w2 = math.log(1.0 - weight)

    def _component_logs(x):
        d1 = x + mu
        d2 = x - mu
        return (
            log_w1 - 0.5 * float(d1 @ d1),
            log_w2 - 0.5 * float(d2 @ d2),
        )

    def log_density(x):
        a, b = _component_logs(x)
        return float(np.logaddexp(a, b))

    def gradient(x):
        a, b = _component_logs(x)
        total = np.logaddexp(a, b)
        r1 = math.exp(a - total)
        r2 = math.exp(b - total)
        return -x + mu * (r2 - r1)

    mean = (1.0 - 2.0 * weight) * mu
    cov = np.eye(d) + 4.0 * weight * (1.0 - weight) * np.outer(mu, mu)
    half = 0.5 * separation + 3.0
    return TargetDensity(
        name="bimodal_mixture",
        dim=d,
        log_density=log_density,
        gradient=gradient,
        analytic_mean=mean,
        analytic_cov=cov,
        box=(np.full(d, -half), np.full(d, half)),
    )


def fd_gradient_check(target: TargetDensity, x: np.ndarray, h: float) -> float:
    """Max relative error of the analytic gradient vs central differences.

    The denominator clamps at 1, so near-zero gradient coordinates are
    checked on an absolute scale.
    """
    if target.gradient is None:
        raise ValueError(f"target {target.name!r} has no gradient")
    x = np.asarray(x, dtype=float)
    grad = np.asarray(target.gradient(x), dtype=float)
    worst = 0.0
    for i in range(target.dim):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = target.log_density(xp)
        fm = target.log_density(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise StencilError(
                f"non-finite density in the stencil for coordinate {i}"
            )
        fd = (fp - fm) / (2.0 * h)
        err = abs(fd - grad[i]) / max(1.0, abs(grad[i]))
        worst = max(worst, err)
    return worst


TARGET_BUILDERS = {
    "standard_gaussian": lambda d=2, **kw: make_standard_gaussian(int(d)),
    "ar1_gaussian": lambda d=2, rho=0.9, **kw: make_ar1_gaussian(int(d), float(rho)),
    "funnel": lambda d=2, **kw: make_funnel(int(d)),
    "banana": lambda **kw: make_banana(),
    "bimodal_mixture": lambda d=2, separation=8.0, weight=0.5, **kw: (
        make_bimodal_mixture(int(d), float(separation), float(weight))
    ),
}


def build_target(name: str, **params) -> TargetDensity:
    """Construct a target by registry name (the CLI config entry point)."""
    try:
        builder = TARGET_BUILDERS[name]
    except KeyError:
        known = ", ".join(sorted(TARGET_BUILDERS))
        raise ValueError(f"unknown target {name!r}; known targets: {known}")
    return builder(**params)
