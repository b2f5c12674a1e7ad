"""Closed-form acquisition and constraint-handling functions over GP posteriors.

All functions broadcast over numpy arrays, so a whole candidate batch can be
scored in one call.  Wherever a predictive stddev lands in a denominator it is
floored at ``STDDEV_FLOOR`` (exact interpolation gives stddev 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import DimensionMismatchError

STDDEV_FLOOR = 1e-10

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class AcqContext:
    """Shared acquisition state: incumbent value, jitter and LCB schedule knobs.

    ``t`` counts outer optimization iterations (1-based) and ``d`` is the
    input dimension; both feed the LCB beta schedule.
    """

    tau: float
    d: int
    t: int = 1
    xi: float = 0.001
    nu: float = 0.5
    delta: float = 0.05

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("xi must be non-negative")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.t < 1:
            raise ValueError("t is 1-based")
        if self.d < 1:
            raise ValueError("d must be at least 1")


def std_normal_cdf(z):
    """Standard normal CDF, via erfc for accuracy deep in the tails."""
    z = np.asarray(z, dtype=float)
    out = 0.5 * erfc(-z / _SQRT2)
    return float(out) if out.ndim == 0 else out


def std_normal_pdf(z):
    """Standard normal density exp(-z^2/2) / sqrt(2 pi)."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.5 * z**2) * _INV_SQRT_2PI
    return float(out) if out.ndim == 0 else out


def _improvement_margin(mean, stddev, ctx: AcqContext):
    """(tau - xi - mean) / stddev with the stddev floored."""
    s = np.maximum(np.asarray(stddev, dtype=float), STDDEV_FLOOR)
    return (ctx.tau - ctx.xi - np.asarray(mean, dtype=float)) / s, s


def pi(mean, stddev, ctx: AcqContext):
    """Probability that a normal posterior beats the incumbent by at least xi."""
    lam, _ = _improvement_margin(mean, stddev, ctx)
    return std_normal_cdf(lam)


def ei(mean, stddev, ctx: AcqContext):
    """Expected improvement stddev * (lam * cdf(lam) + pdf(lam)); never negative.

    At stddev exactly 0 the degenerate limit max(0, tau - xi - mean) is used
    instead of the floored form, so certain non-improvements score exactly 0.
    """
    s_raw = np.asarray(stddev, dtype=float)
    lam, s = _improvement_margin(mean, s_raw, ctx)
    val = s * (lam * std_normal_cdf(lam) + std_normal_pdf(lam))
    margin = ctx.tau - ctx.xi - np.asarray(mean, dtype=float)
    val = np.where(s_raw > 0, val, np.maximum(margin, 0.0))
    out = np.maximum(val, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def beta_schedule(ctx: AcqContext) -> float:
    """Confidence-bound coefficient sqrt(2 nu log(t^(d/2+2) pi^2 / (3 delta)))."""
    t_term = (0.5 * ctx.d + 2.0) * math.log(ctx.t)
    return math.sqrt(2.0 * ctx.nu * (t_term + math.log(math.pi**2 / (3.0 * ctx.delta))))


def lcb(mean, stddev, beta: float):
    """Optimistic lower confidence bound mean - beta * stddev."""
    out = np.asarray(mean, dtype=float) - beta * np.asarray(stddev, dtype=float)
    return float(out) if out.ndim == 0 else out


def _as_constraint_arrays(means, stddevs=None):
    mu = np.asarray(means, dtype=float)
    if mu.shape[-1] < 1:
        raise DimensionMismatchError("need at least one constraint")
    if stddevs is None:
        return mu, None
    sigma = np.asarray(stddevs, dtype=float)
    if sigma.shape != mu.shape:
        raise DimensionMismatchError(
            f"constraint means {mu.shape} and stddevs {sigma.shape} differ in shape"
        )
    return mu, np.maximum(sigma, STDDEV_FLOOR)


def pf(constraint_means, constraint_stddevs):
    """Probability of feasibility: product over constraints of cdf(-mu_i / sigma_i).

    Accepts per-point vectors of length n_constraints or batches shaped
    (n, n_constraints); the product is taken over the last axis.
    """
    mu, sigma = _as_constraint_arrays(constraint_means, constraint_stddevs)
    out = np.prod(std_normal_cdf(-mu / sigma), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def naive_violation(constraint_means):
    """Total positive predicted constraint mass sum_i max(0, mu_i)."""
    mu, _ = _as_constraint_arrays(constraint_means)
    out = np.sum(np.maximum(mu, 0.0), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def adaptive_violation(constraint_means, constraint_stddevs):
    """Confidence-scaled violation sum_i max(0, mu_i / sigma_i).

    High-confidence (small sigma) violations dominate, so effort concentrates
    on constraints the model is sure are broken.
    """
    mu, sigma = _as_constraint_arrays(constraint_means, constraint_stddevs)
    out = np.sum(np.maximum(mu / sigma, 0.0), axis=-1)
    return float(out) if np.ndim(out) == 0 else out
