"""Statistical-efficiency diagnostics.

Autocorrelation, effective sample size with Geyer initial-positive-
sequence truncation, split-chain Gelman-Rubin R-hat, expected squared
jump distance, batch-means asymptotic variance, and the aggregated
report emitted by the harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ChainRecord

RHAT_GOOD = 1.01
RHAT_WARN = 1.4


class DegenerateChainError(ValueError):
    """A series with zero variance cannot be diagnosed."""


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation estimate rho_k = c_k / c_0 for k = 0..max_lag.

    c_k = (1/N) sum_t (x_t - xbar)(x_{t+k} - xbar); the 1/N normalization
    keeps the estimated autocovariance sequence positive definite.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if n < 2 * max(max_lag, 1):
        raise ValueError(f"need N >= 2*max_lag, got N={n}, max_lag={max_lag}")
    x = x - x.mean()
    c0 = float(x @ x) / n
    if c0 <= 0.0:
        raise DegenerateChainError("series variance is zero")
    # FFT autocovariance: O(N log N), exact to roundoff.
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1] / n
    rho = acov / acov[0]
    return np.clip(rho, -1.0, 1.0)


def integrated_autocorr_time(series: np.ndarray) -> float:
    """Geyer-truncated IACT tau = 1 + 2 sum rho_k.

    Pair sums Gamma_m = rho_{2m} + rho_{2m+1} are accumulated while they
    stay positive; the sum stops before the first non-positive pair.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    max_lag = n // 2
    rho = autocorrelation(x, max_lag)
    tau = -1.0
    for m in range(0, (max_lag + 1) // 2):
        gamma = rho[2 * m] + rho[2 * m + 1]
        if gamma <= 0.0:
            break
        tau += 2.0 * gamma
    return max(tau, 1e-12)


def ess(series: np.ndarray) -> float:
    """Effective sample size N / (1 + 2 sum rho_k), clamped to N."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n < 4:
        raise ValueError(f"need at least 4 samples, got {n}")
    tau = integrated_autocorr_time(x)
    return float(min(n / tau, n))


def gelman_rubin(chains: Sequence[np.ndarray]) -> np.ndarray:
    """Split-chain potential scale reduction factor per dimension.

    Each of the M chains is halved; R-hat compares between- to
    within-variance over the 2M half-chains. Values at the formula floor
    sqrt((n-1)/n) indicate indistinguishable chains.
    """
    if len(chains) < 2:
        raise ValueError("need at least 2 chains")
    mats = [np.atleast_2d(np.asarray(c, dtype=float)) for c in chains]
    d = mats[0].shape[1]
    length = mats[0].shape[0]
    if length < 4:
        raise ValueError("chains must have at least 4 samples")
    for m in mats:
        if m.shape != (length, d):
            raise ValueError("chains must share shape")
    half = length // 2
    halves = []
    for m in mats:
        halves.append(m[:half])
        halves.append(m[half : 2 * half])
    stacked = np.stack(halves)  # (2M, half, d)

    within = stacked.var(axis=1, ddof=1)  # (2M, d)
    w = within.mean(axis=0)
    if np.any(w <= 0.0):
        raise DegenerateChainError("zero within-chain variance")
    means = stacked.mean(axis=1)  # (2M, d)
    b_over_n = means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * w + b_over_n
    return np.sqrt(var_plus / w)


def esjd(samples: np.ndarray) -> float:
    """Expected squared jump distance, mean of ||x_{t+1} - x_t||^2."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    diffs = np.diff(x, axis=0)
    return float(np.mean(np.sum(diffs * diffs, axis=1)))


def batch_means_variance(series: np.ndarray, n_batches: int) -> float:
    """Batch-means estimate of the asymptotic variance of the chain mean.

    Returns sigma2_as with var(mean) ~= sigma2_as / N.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n_batches < 10:
        raise ValueError(f"need at least 10 batches, got {n_batches}")
    if n < 2 * n_batches:
        raise ValueError(f"need N >= 2*n_batches, got N={n}")
    b = n // n_batches
    trimmed = x[: b * n_batches].reshape(n_batches, b)
    means = trimmed.mean(axis=1)
    return float(b * means.var(ddof=1))


@dataclass
class DiagnosticsReport:
    """Aggregated efficiency metrics for one or more chains."""

    n_chains: int
    n_samples: int
    dim: int
    ess: np.ndarray
    rhat: Optional[np.ndarray]
    acceptance_rate: float
    esjd: float
    asym_variance: np.ndarray
    n_divergences: int
    n_target_evals: int
    n_grad_evals: int
    n_surrogate_evals: int
    sample_mean: np.ndarray
    sample_var: np.ndarray
    mean_abs_error: Optional[np.ndarray]
    var_abs_error: Optional[np.ndarray]
    notes: str

    @property
    def min_ess(self) -> float:
        return float(np.min(self.ess))

    @property
    def ess_per_step(self) -> float:
        return self.min_ess / (self.n_samples * self.n_chains)

    @property
    def ess_per_target_eval(self) -> Optional[float]:
        if self.n_target_evals == 0:
            return None
        return self.min_ess / self.n_target_evals

    @property
    def ess_per_grad_eval(self) -> Optional[float]:
        if self.n_grad_evals == 0:
            return None
        return self.min_ess / self.n_grad_evals

    def to_json_dict(self) -> dict:
        def arr(a):
            return None if a is None else [float(v) for v in a]

        return {
            "n_chains": self.n_chains,
            "n_samples": self.n_samples,
            "dim": self.dim,
            "ess": arr(self.ess),
            "rhat": arr(self.rhat),
            "acceptance_rate": self.acceptance_rate,
            "esjd": self.esjd,
            "asym_variance": arr(self.asym_variance),
            "n_divergences": self.n_divergences,
            "n_target_evals": self.n_target_evals,
            "n_grad_evals": self.n_grad_evals,
            "n_surrogate_evals": self.n_surrogate_evals,
            "sample_mean": arr(self.sample_mean),
            "sample_var": arr(self.sample_var),
            "mean_abs_error": arr(self.mean_abs_error),
            "var_abs_error": arr(self.var_abs_error),
            "min_ess": self.min_ess,
            "ess_per_step": self.ess_per_step,
            "ess_per_target_eval": self.ess_per_target_eval,
            "ess_per_grad_eval": self.ess_per_grad_eval,
            "notes": self.notes,
        }

    def to_csv_rows(self) -> list[dict]:
        rows = []
        for i in range(self.dim):
            rows.append(
                {
                    "dim": i,
                    "ess": float(self.ess[i]),
                    "rhat": float(self.rhat[i]) if self.rhat is not None else "",
                    "asym_variance": float(self.asym_variance[i]),
                    "mean": float(self.sample_mean[i]),
                    "var": float(self.sample_var[i]),
                    "mean_abs_error": float(self.mean_abs_error[i])
                    if self.mean_abs_error is not None
                    else "",
                    "var_abs_error": float(self.var_abs_error[i])
                    if self.var_abs_error is not None
                    else "",
                }
            )
        return rows


def _pooled_column_ess(records: Sequence[ChainRecord], col: int) -> float:
    # Sum of per-chain ESS; pooling the series would mix cross-chain
    # autocorrelation artifacts into the estimate.
    total = 0.0
    for rec in records:
        try:
            total += ess(rec.samples[:, col])
        except DegenerateChainError:
            total += 1.0  # a frozen coordinate contributes one draw
    return total


def build_report(records: Sequence[ChainRecord], target=None) -> DiagnosticsReport:
    """Aggregate chain records into a DiagnosticsReport.

    R-hat fields are populated only when two or more chains are given.
    When the target carries analytic moments, absolute moment errors are
    attached as an online correctness signal.
    """
    if len(records) == 0:
        raise ValueError("need at least one chain record")
    d = records[0].dim
    n = records[0].n_samples
    for rec in records:
        if rec.dim != d:
            raise ValueError("chain records disagree on dimension")
        if rec.n_samples != n:
            raise ValueError("chain records disagree on length")

    ess_vec = np.array([_pooled_column_ess(records, j) for j in range(d)])
    rhat = gelman_rubin([rec.samples for rec in records]) if len(records) >= 2 else None

    pooled = np.vstack([rec.samples for rec in records])
    accept = float(np.mean([rec.acceptance_rate for rec in records]))
    esjd_val = float(np.mean([esjd(rec.samples) for rec in records]))

    n_batches = max(10, min(100, n // 10))
    asym = np.empty(d)
    for j in range(d):
        if n >= 2 * n_batches:
            asym[j] = float(
                np.mean(
                    [batch_means_variance(rec.samples[:, j], n_batches) for rec in records]
                )
            )
        else:
            asym[j] = np.nan

    mean = pooled.mean(axis=0)
    var = pooled.var(axis=0, ddof=1)
    mean_err = var_err = None
    if target is not None and target.analytic_mean is not None:
        mean_err = np.abs(mean - target.analytic_mean)
    if target is not None and target.analytic_cov is not None:
        var_err = np.abs(var - np.diag(target.analytic_cov))

    notes = ""
    if rhat is not None:
        worst = float(np.max(rhat))
        if worst > RHAT_WARN:
            notes = (
                f"max R-hat {worst:.3f} exceeds {RHAT_WARN}: chains have not "
                "converged; increase warmup or reparameterize"
            )
        elif worst > RHAT_GOOD:
            notes = f"max R-hat {worst:.3f} above {RHAT_GOOD}: mixing is marginal"
        else:
            notes = f"max R-hat {worst:.3f} below {RHAT_GOOD}: no convergence flag"

    return DiagnosticsReport(
        n_chains=len(records),
        n_samples=n,
        dim=d,
        ess=ess_vec,
        rhat=rhat,
        acceptance_rate=accept,
        esjd=esjd_val,
        asym_variance=asym,
        n_divergences=sum(rec.n_divergences for rec in records),
        n_target_evals=sum(rec.n_target_evals for rec in records),
        n_grad_evals=sum(rec.n_grad_evals for rec in records),
        n_surrogate_evals=sum(rec.n_surrogate_evals for rec in records),
        sample_mean=mean,
        sample_var=var,
        mean_abs_error=mean_err,
        var_abs_error=var_err,
        notes=notes,
    )
