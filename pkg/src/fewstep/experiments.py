"""Default toy recipe and the sampler, pruning and clash studies built on it.

The toy network is a per-atom MLP and is not rotation-equivariant, so the
studies sample with centering only (no random rotation, no shift).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .denoisers import DenoiserSpec, NetParams, ResidualDenoiser
from .geom import RngStream, ToySpec
from .losses import LossWeights
from .metrics import ClashRule, clash_stats, diversity_spread, lddt
from .samplers import SamplerConfig, af3_config, batch_sample, ode_config, sample
from .schedules import ChurnParams, NoiseLevelParams, _sigma_raw
from .train import TrainConfig, ToyTask, make_task, prune_and_finetune, train

DEFAULT_DATA = ToySpec(kind="complex-with-ligand", n_atoms=12, n_ligand_atoms=4, jitter=0.3)
DEFAULT_SPEC = DenoiserSpec(n_blocks=4, width=64)
CENTER_ONLY = dict(rotate=False, translation_std=0.0)


@dataclass(frozen=True)
class EDMWeight:
    """Per-sample loss weight ``(sigma^2 + sigma_data^2) / (sigma * sigma_data)^2``."""

    noise: NoiseLevelParams

    def __call__(self, t):
        s = _sigma_raw(t, self.noise)
        sd = self.noise.sigma_data
        return (s * s + sd * sd) / (s * sd) ** 2


def default_recipe(noise: NoiseLevelParams | None = None, **overrides) -> TrainConfig:
    noise = noise or NoiseLevelParams()
    cfg = TrainConfig(iterations=4000, lr=1e-3, optimizer="adam", batch_size=16, eval_every=0,
                      loss=LossWeights(t_scale=EDMWeight(noise)), max_loss=1e12)
    return replace(cfg, **overrides)


def train_default(seed=0, noise=None, data=DEFAULT_DATA, spec=DEFAULT_SPEC, **overrides):
    """Train the default toy model; returns ``(task, spec, params)``."""
    noise = noise or NoiseLevelParams()
    task = make_task(data)
    rep = train(spec, task, default_recipe(noise, seed=seed, **overrides), noise)
    return task, spec, rep.params


def sampler_for(mode: str, n_steps: int, eta: float, noise: NoiseLevelParams,
                churn: ChurnParams | None = None) -> SamplerConfig:
    """``mode`` is ``ode`` or ``af3``; the af3 mode uses the default churn unless given."""
    if mode == "ode":
        return ode_config(n_steps, eta=eta, noise=noise, **CENTER_ONLY)
    if mode == "af3":
        kw = {} if churn is None else {"churn": churn}
        return af3_config(n_steps, eta=eta, noise=noise, **kw, **CENTER_ONLY)
    return SamplerConfig(mode=mode, n_steps=n_steps, eta=eta, noise=noise, **CENTER_ONLY)


def seed_lddts(D, cond, cfg: SamplerConfig, task: ToyTask, seeds) -> np.ndarray:
    """LDDT of one sample per seed, using stream ``(seed,)`` for each."""
    return np.array([lddt(sample(D, cond, cfg, task.reference, RngStream(s)).final, task.reference)
                     for s in seeds])


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "var": float(v.var()), "best": float(v.max()),
            "worst": float(v.min()), "spread": float(np.ptp(v))}


def sweep_cell(D, cond, task, mode, eta, n_steps, seeds, noise) -> dict:
    vals = seed_lddts(D, cond, sampler_for(mode, n_steps, eta, noise), task, seeds)
    return {"mode": mode, "eta": float(eta), "steps": int(n_steps), "n_seeds": len(vals), **summarize(vals)}


def eval_lddt(spec, task, noise, pathway="pathway-A", n_steps=2, seeds=range(20)):
    """Eval function for pruning studies: mean 2-step ODE LDDT over fixed seeds."""
    cfg = sampler_for("ode", n_steps, 1.0, noise)
    cond = task.condition(pathway)

    def fn(params: NetParams) -> dict:
        D = ResidualDenoiser(replace(spec, n_blocks=params.n_blocks), params, noise)
        return {"lddt": float(seed_lddts(D, cond, cfg, task, seeds).mean())}
    return fn


def prune_study(params, spec, task, noise, ks, finetune_seeds, finetune_iterations=1000, finetune_lr=5e-4,
                eval_seeds=range(20)) -> list:
    """Baseline, zero-shot and finetuned eval LDDT for each ``k`` and finetune seed."""
    ev = eval_lddt(spec, task, noise, seeds=eval_seeds)
    base = ev(params)["lddt"]
    rows = []
    for k in ks:
        for s in finetune_seeds:
            cfg = default_recipe(noise, seed=s, iterations=finetune_iterations, lr=finetune_lr)
            zs, ft, _ = prune_and_finetune(params, k, spec, task, cfg, ev, noise)
            rows.append({"k": k, "seed": s, "baseline": base, "zero_shot": zs["lddt"], "finetuned": ft["lddt"]})
    return rows


def clash_diversity(D, cond, cfg, task, n_seeds=5, n_samples=5, master_seed=0, rule: ClashRule | None = None):
    """Clash statistics and LDDT spread over an ``n_seeds x n_samples`` grid."""
    grid = batch_sample(D, cond, cfg, task.reference, n_seeds, n_samples, master_seed)
    return clash_stats(grid, rule), diversity_spread([x for row in grid for x in row], task.reference)
