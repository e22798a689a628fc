"""Noise-level schedule, step grid, churn and training-time samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ValidationError
from .geom import RngStream


@dataclass(frozen=True)
class NoiseLevelParams:
    """Karras-style schedule ``sigma(t)`` running from ``sigma_max`` at t=0 to ``sigma_min`` at t=1.

    ``sigma_max``/``sigma_min`` default to 160 and 4e-4 scaled by ``sigma_data / 16``.
    ``init_std`` overrides the per-coordinate std of the initial sample; when
    None, x-prediction samplers start at ``sigma_max`` and velocity samplers at
    ``sigma_data``.
    """

    sigma_data: float = 16.0
    sigma_max: float | None = None
    sigma_min: float | None = None
    rho: float = 7.0
    init_std: float | None = None

    def __post_init__(self):
        scale = self.sigma_data / 16.0
        if self.sigma_max is None:
            object.__setattr__(self, "sigma_max", 160.0 * scale)
        if self.sigma_min is None:
            object.__setattr__(self, "sigma_min", 4e-4 * scale)
        if self.sigma_data <= 0:
            raise ValidationError("sigma_data must be positive")
        if not (0 <= self.sigma_min < self.sigma_max):
            raise ValidationError("need 0 <= sigma_min < sigma_max")
        if self.rho <= 0:
            raise ValidationError("rho must be positive")
        if self.init_std is not None and self.init_std <= 0:
            raise ValidationError("init_std must be positive")


@dataclass(frozen=True)
class ChurnParams:
    gamma0: float = 0.8
    gamma_min: float = 1.0
    noise_scale: float = 1.003  # lambda

    def __post_init__(self):
        if self.gamma0 < 0:
            raise ValidationError("gamma0 must be nonnegative")
        if self.noise_scale <= 0:
            raise ValidationError("noise_scale (lambda) must be positive")


ODE_CHURN = ChurnParams(gamma0=0.0, gamma_min=1.0, noise_scale=1.0)


@dataclass(frozen=True)
class TimeDist:
    kind: str = "beta"
    alpha: float = 2.5
    beta: float = 2.5

    def __post_init__(self):
        if self.kind not in ("beta", "uniform"):
            raise ValidationError(f"unknown time distribution {self.kind!r}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("distribution parameters must be positive")

    def cdf(self, t):
        if self.kind == "uniform":
            return np.clip(t, 0.0, 1.0)
        return stats.beta.cdf(t, self.alpha, self.beta)


def _sigma_raw(t, p: NoiseLevelParams):
    # no domain check; t < 0 extrapolates above sigma_max (needed for churned times)
    a = p.sigma_max ** (1.0 / p.rho)
    b = p.sigma_min ** (1.0 / p.rho)
    return (a + t * (b - a)) ** p.rho


def sigma_at(t, p: NoiseLevelParams):
    """Noise std at normalized time ``t`` in [0, 1]; works on scalars and arrays."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1) or np.any(~np.isfinite(arr)):
        raise ValidationError(f"time outside [0, 1]: {t}")
    out = _sigma_raw(arr, p)
    return float(out) if out.ndim == 0 else out


def dsigma_dt(t, p: NoiseLevelParams):
    a = p.sigma_max ** (1.0 / p.rho)
    b = p.sigma_min ** (1.0 / p.rho)
    return p.rho * (a + t * (b - a)) ** (p.rho - 1.0) * (b - a)


def time_at_sigma(sigma, p: NoiseLevelParams, tol=1e-12):
    """Invert the schedule by bisection; sigma above ``sigma_max`` maps to t < 0."""
    if sigma < p.sigma_min:
        raise ValidationError(f"sigma {sigma} below sigma_min")
    lo, hi = 0.0, 1.0
    while _sigma_raw(lo, p) < sigma:
        lo -= 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _sigma_raw(mid, p) > sigma:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def step_schedule(n_steps: int) -> np.ndarray:
    """Uniform times ``i / n`` for i = 0..n, so the last entry is exactly 1."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValidationError(f"n_steps must be a positive integer, got {n_steps}")
    n = int(n_steps)
    return np.array([i / n for i in range(n + 1)])


def step_sizes(n_steps: int):
    """Yield the step sizes one by one, exactly ``n_steps`` times."""
    times = step_schedule(n_steps)
    for i in range(int(n_steps)):
        yield times[i + 1] - times[i]


def churn_level(t, c: ChurnParams, p: NoiseLevelParams):
    """Return ``(sigma, sigma_hat, t_hat)`` for the current time without drawing noise."""
    if not (0 <= t < 1):
        raise ValidationError(f"churn needs 0 <= t < 1, got {t}")
    sigma = sigma_at(t, p)
    gamma = c.gamma0 if sigma > c.gamma_min else 0.0
    if gamma == 0.0:
        return sigma, sigma, t
    sigma_hat = sigma * (1.0 + gamma)
    return sigma, sigma_hat, time_at_sigma(sigma_hat, p)


def churn(t, dt, c: ChurnParams, p: NoiseLevelParams, rng: RngStream, shape):
    """Noise to add at time ``t`` and the time ``t_hat`` it raises the sample to.

    The returned noise is unscaled; the caller multiplies it by lambda. ``dt``
    is accepted for parity with the sampler loop and does not enter the
    computation. When the gate is closed the noise is an exact zero array and no
    random numbers are consumed.
    """
    sigma, sigma_hat, t_hat = churn_level(t, c, p)
    if sigma_hat == sigma:
        return np.zeros(shape), t
    std = math.sqrt(max(sigma_hat**2 - sigma**2, 0.0))
    return std * rng.gen.standard_normal(shape), t_hat


def sample_time(d: TimeDist, rng: RngStream, size=None):
    """Draw training times in (0, 1)."""
    if d.kind == "uniform":
        return rng.gen.uniform(0.0, 1.0, size)
    return rng.gen.beta(d.alpha, d.beta, size)
