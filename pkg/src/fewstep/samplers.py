"""The AF3 churn sampler and the plain ODE sampler.

Both samplers walk the uniform grid ``t_i = i / n``. For x-prediction
denoisers the velocity is expressed per unit noise level and the step length is
``sigma(t_to) - sigma(t_from)`` (the EDM update); for velocity denoisers both
are in normalized time. The two samplers share :func:`_euler_update`, so with
zero churn, unit lambda and unit eta they agree bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .denoisers import initial_std
from .errors import DomainError, SamplingError, ValidationError
from .geom import RngStream, Structure, center_random_augmentation
from .schedules import ChurnParams, NoiseLevelParams, ODE_CHURN, _sigma_raw, churn, step_schedule


@dataclass
class SamplerConfig:
    mode: str = "ode"
    n_steps: int = 2
    eta: float | list = 1.0
    churn: ChurnParams = field(default_factory=lambda: ODE_CHURN)
    noise: NoiseLevelParams = field(default_factory=NoiseLevelParams)
    augmentation: bool = True
    rotate: bool = True
    translation_std: float = 1.0

    def __post_init__(self):
        if self.mode not in ("af3", "ode"):
            raise ValidationError(f"unknown sampler mode {self.mode!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError("n_steps must be a positive integer")
        etas = self.etas()
        if len(etas) != self.n_steps:
            raise ValidationError(f"per-step eta list has {len(etas)} entries for {self.n_steps} steps")
        if any(not (e > 0) for e in etas):
            raise ValidationError("eta entries must be positive")

    def etas(self) -> list:
        if np.isscalar(self.eta):
            return [float(self.eta)] * int(self.n_steps)
        return [float(e) for e in self.eta]


def af3_config(n_steps=200, **kw) -> SamplerConfig:
    """AF3 defaults: eta 1.5, gamma0 0.8, gamma_min 1, lambda 1.003."""
    kw.setdefault("eta", 1.5)
    kw.setdefault("churn", ChurnParams(0.8, 1.0, 1.003))
    return SamplerConfig(mode="af3", n_steps=n_steps, **kw)


def ode_config(n_steps=2, **kw) -> SamplerConfig:
    kw.setdefault("eta", 1.0)
    return SamplerConfig(mode="ode", n_steps=n_steps, **kw)


@dataclass
class StepRecord:
    t: float
    t_next: float
    t_hat: float
    eta: float
    x_t: np.ndarray
    x_noisy: np.ndarray
    x_hat: np.ndarray


@dataclass
class Trajectory:
    records: list
    final: Structure

    def to_jsonl(self, coords=False) -> str:
        lines = []
        for i, r in enumerate(self.records):
            row = {"step": i, "t": r.t, "t_next": r.t_next, "t_hat": r.t_hat, "eta": r.eta,
                   "norm_x_t": float(np.linalg.norm(r.x_t)),
                   "norm_x_noisy": float(np.linalg.norm(r.x_noisy)),
                   "norm_x_hat": float(np.linalg.norm(r.x_hat))}
            if coords:
                row["x_t"] = r.x_t.tolist()
                row["x_noisy"] = r.x_noisy.tolist()
                row["x_hat"] = r.x_hat.tolist()
            lines.append(json.dumps(row))
        return "\n".join(lines) + "\n"


def time_increment(t_from, t_to, parameterization, noise: NoiseLevelParams):
    """Length of a step from ``t_from`` to ``t_to`` in the velocity's own time variable."""
    if parameterization == "x":
        return _sigma_raw(t_to, noise) - _sigma_raw(t_from, noise)
    return t_to - t_from


def cal_velocity(x_denoised, x_noisy, t_hat, parameterization="x", noise: NoiseLevelParams | None = None):
    """Update direction at ``t_hat``.

    x-prediction: ``(x_noisy - x_denoised) / sigma(t_hat)``, a derivative with
    respect to the noise level. Velocity models: ``(x_denoised - x_noisy) / (1 - t_hat)``.
    """
    if parameterization == "x":
        sigma = float(_sigma_raw(t_hat, noise or NoiseLevelParams()))
        if not sigma > 0:
            raise DomainError(f"velocity undefined at zero noise level (t_hat={t_hat})")
        return (x_noisy - x_denoised) / sigma
    if not t_hat < 1:
        raise DomainError(f"velocity undefined at t_hat={t_hat}")
    return (x_denoised - x_noisy) / (1.0 - t_hat)


def _euler_update(x_noisy, x_hat, t_hat, t_next, eta, par, noise):
    v = cal_velocity(x_hat, x_noisy, t_hat, par, noise)
    return x_noisy + eta * time_increment(t_hat, t_next, par, noise) * v


def _n_atoms(topology):
    return topology if isinstance(topology, (int, np.integer)) else topology.n_atoms


def _as_structure(coords, topology):
    if isinstance(topology, Structure):
        return topology.with_coords(coords)
    return Structure(coords, ["protein"] * len(coords), np.zeros(len(coords), dtype=int))


def _check_finite(step, **arrays):
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise SamplingError(f"non-finite {name} at step {step}", step)


def _check_denoiser(D, cfg):
    noise = getattr(D, "noise", None)
    if noise is not None and noise != cfg.noise:
        raise ValidationError("denoiser and sampler use different noise schedules")
    par = getattr(D, "parameterization", "x")
    if par not in ("x", "v"):
        raise ValidationError(f"unknown denoiser parameterization {par!r}")
    return par


def initial_sample(cfg: SamplerConfig, n_atoms: int, par: str, rng: RngStream):
    return initial_std(cfg.noise, par) * rng.gen.standard_normal((n_atoms, 3))


def af3_sample(D, cond, cfg: SamplerConfig, topology, rng: RngStream, x_init=None) -> Trajectory:
    """Stochastic sampler with churn, noise scale lambda and step scale eta.

    Streams: ``rng.child(0)`` draws the initial sample, ``rng.child(1)`` the
    churn noise, ``rng.child(2)`` the augmentations.
    """
    if cfg.mode != "af3":
        raise ValidationError("af3_sample needs mode='af3'")
    par = _check_denoiser(D, cfg)
    if par == "v" and cfg.churn.gamma0 > 0:
        raise ValidationError("churn needs an x-prediction denoiser; use gamma0=0 for velocity models")
    init_rng, churn_rng, aug_rng = rng.child(0), rng.child(1), rng.child(2)
    n = _n_atoms(topology)
    x = initial_sample(cfg, n, par, init_rng) if x_init is None else np.array(x_init, dtype=float)
    times = step_schedule(cfg.n_steps)
    etas = cfg.etas()
    lam = cfg.churn.noise_scale
    records = []
    for i in range(cfg.n_steps):
        t, t_next = times[i], times[i + 1]
        if cfg.augmentation:
            x = center_random_augmentation(x, aug_rng, cfg.translation_std, cfg.rotate)
        if par == "x":
            eps, t_hat = churn(t, t_next - t, cfg.churn, cfg.noise, churn_rng, x.shape)
        else:
            eps, t_hat = np.zeros(x.shape), t
        x_noisy = x + lam * eps
        x_hat = D(x_noisy, t_hat, cond)
        x_new = _euler_update(x_noisy, x_hat, t_hat, t_next, etas[i], par, cfg.noise)
        _check_finite(i, x_noisy=x_noisy, x_hat=x_hat, x_next=x_new)
        records.append(StepRecord(t, t_next, t_hat, etas[i], x, x_noisy, x_hat))
        x = x_new
    return Trajectory(records, _as_structure(x, topology))


def ode_sample(D, cond, cfg: SamplerConfig, topology, rng: RngStream, x_init=None) -> Trajectory:
    """Deterministic Euler sampler; no noise is injected after initialization.

    Uses the same stream layout as :func:`af3_sample` (``child(1)`` unused).
    """
    if cfg.mode != "ode":
        raise ValidationError("ode_sample needs mode='ode'")
    par = _check_denoiser(D, cfg)
    init_rng, aug_rng = rng.child(0), rng.child(2)
    n = _n_atoms(topology)
    x = initial_sample(cfg, n, par, init_rng) if x_init is None else np.array(x_init, dtype=float)
    times = step_schedule(cfg.n_steps)
    etas = cfg.etas()
    records = []
    for i in range(cfg.n_steps):
        t, t_next = times[i], times[i + 1]
        if cfg.augmentation:
            x = center_random_augmentation(x, aug_rng, cfg.translation_std, cfg.rotate)
        x_hat = D(x, t, cond)
        x_new = _euler_update(x, x_hat, t, t_next, etas[i], par, cfg.noise)
        _check_finite(i, x_hat=x_hat, x_next=x_new)
        records.append(StepRecord(t, t_next, t, etas[i], x, x, x_hat))
        x = x_new
    return Trajectory(records, _as_structure(x, topology))


def sample(D, cond, cfg: SamplerConfig, topology, rng: RngStream, x_init=None) -> Trajectory:
    fn = af3_sample if cfg.mode == "af3" else ode_sample
    return fn(D, cond, cfg, topology, rng, x_init)


def batch_sample(D, cond, cfg: SamplerConfig, topology, n_seeds: int, n_samples: int,
                 master_seed: int) -> list:
    """``n_seeds x n_samples`` grid of final structures; cell (i, j) uses stream ``(i, j)``."""
    if n_seeds < 1 or n_samples < 1:
        raise ValidationError("grid dimensions must be positive")
    return [[sample(D, cond, cfg, topology, RngStream(master_seed, (i, j))).final
             for j in range(n_samples)] for i in range(n_seeds)]
