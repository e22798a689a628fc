"""Training loops for the toy residual denoiser, plus prune-then-finetune."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .denoisers import (Condition, DenoiserSpec, NetParams, ResidualDenoiser, init_params, initial_std,
                        make_condition, net_backward, net_forward, prune_blocks)
from .errors import DivergenceError, ValidationError
from .geom import RngStream, Structure, ToySpec, gen_toy
from .losses import LossWeights, edm_loss, flow_loss, pair_weights
from .schedules import NoiseLevelParams, TimeDist, _sigma_raw, sample_time


@dataclass
class ToyTask:
    """A fixed reference structure; training draws ``reference + jitter * noise``."""

    reference: Structure
    jitter: float = 0.0
    cond_scale: float = 16.0
    _conds: dict = field(default_factory=dict, repr=False)

    def condition(self, pathway: str) -> Condition:
        if pathway not in self._conds:
            self._conds[pathway] = make_condition(self.reference, pathway, self.cond_scale)
        return self._conds[pathway]

    def sample_x1(self, gen: np.random.Generator, batch: int) -> np.ndarray:
        x = np.broadcast_to(self.reference.coords, (batch, *self.reference.coords.shape)).copy()
        if self.jitter > 0:
            x += self.jitter * gen.standard_normal(x.shape)
        return x


def make_task(data: ToySpec, data_seed: int = 0, cond_scale: float = 16.0) -> ToyTask:
    reference = gen_toy(replace(data, jitter=0.0), RngStream(data_seed, 0))
    return ToyTask(reference, data.jitter, cond_scale)


@dataclass
class TrainConfig:
    framework: str = "edm"
    batch_size: int = 16
    iterations: int = 1000
    lr: float = 1e-3
    optimizer: str = "sgd"
    time_dist: TimeDist = field(default_factory=TimeDist)
    loss: LossWeights = field(default_factory=LossWeights)
    pathway_mix: float = 0.5
    seed: int = 0
    eval_every: int = 100
    coupling: str = "independent"
    translate_offset: tuple = (5.0, 0.0, 0.0)
    align: bool = False
    max_loss: float = 1e6

    def __post_init__(self):
        if self.framework not in ("edm", "flow"):
            raise ValidationError(f"unknown framework {self.framework!r}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValidationError("batch_size >= 1 and iterations >= 0 required")
        if self.lr < 0:
            raise ValidationError("lr must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.pathway_mix <= 1:
            raise ValidationError("pathway_mix must be in [0, 1]")
        if self.coupling not in ("independent", "translate"):
            raise ValidationError(f"unknown coupling {self.coupling!r}")
        if self.coupling == "translate" and self.framework != "flow":
            raise ValidationError("translate coupling is a flow-matching task")


@dataclass
class TrainReport:
    curve: list
    evals: list
    params: NetParams

    def to_csv(self) -> str:
        keys = ["iteration", "pathway", "total", "mse", "fm", "bond", "smooth_lddt"]
        eval_keys = sorted({k for e in self.evals for k in e} - {"iteration"})
        evals = {e["iteration"]: e for e in self.evals}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys + [f"eval_{k}" for k in eval_keys])
        for row in self.curve:
            ev = evals.get(row["iteration"], {})
            w.writerow([_fmt(row.get(k, "")) for k in keys] + [_fmt(ev.get(k, "")) for k in eval_keys])
        return buf.getvalue()


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


class _Adam:
    def __init__(self, params: NetParams, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.k = 0

    def step(self, params: NetParams, grads: NetParams):
        self.k += 1
        c1 = 1 - self.b1**self.k
        c2 = 1 - self.b2**self.k
        for a, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _sgd(params, grads, lr):
    for a, g in zip(params.arrays(), grads.arrays()):
        a -= lr * g


def loss_and_grad(params: NetParams, spec: DenoiserSpec, task: ToyTask, cfg: TrainConfig,
                  noise: NoiseLevelParams, x1, t, cond: Condition, x0=None, eps=None, pair_w=None):
    """Mean batch loss and weight gradients for one fixed batch."""
    B = len(x1)
    par = spec.parameterization[0]
    if cfg.framework == "edm":
        sigma = _sigma_raw(t, noise)[:, None, None]
        x_t = x1 + sigma * eps
        out, cache = net_forward(x_t, t, cond, params, par, noise, cache=True)
        rep = edm_loss(out, task.reference, cfg.loss, cfg.align, t, x1=x1, pair_w=pair_w)
    else:
        tb = t[:, None, None]
        x_t = (1.0 - tb) * x0 + tb * x1
        out, cache = net_forward(x_t, t, cond, params, par, noise, cache=True)
        rep = flow_loss(out, x_t, x0, t, task.reference, cfg.loss, x1=x1, pair_w=pair_w)
    grads = net_backward(rep.grad / B, params, cache)
    values = {k: float(np.mean(v)) for k, v in rep.values.items()}
    return values, grads


def _draw_batch(cfg, task, noise, spec, gen, rng_t):
    B = cfg.batch_size
    t = sample_time(cfg.time_dist, rng_t, B)
    if cfg.framework == "edm":
        x1 = task.sample_x1(gen, B)
        return x1, t, None, gen.standard_normal(x1.shape)
    s0 = initial_std(noise, spec.parameterization[0])
    shape = (B, *task.reference.coords.shape)
    x0 = s0 * gen.standard_normal(shape)
    x1 = x0 + np.asarray(cfg.translate_offset) if cfg.coupling == "translate" else task.sample_x1(gen, B)
    return x1, t, x0, None


def heldout_loss(params, spec, task, cfg, noise, pathway="pathway-A", n_batches=4) -> float:
    """Mean total loss on a fixed evaluation stream (independent of the training stream)."""
    rng = RngStream(cfg.seed, (7, 7))
    pw = pair_weights(task.reference, cfg.loss)
    vals = []
    for _ in range(n_batches):
        x1, t, x0, eps = _draw_batch(cfg, task, noise, spec, rng.gen, rng)
        values, _ = loss_and_grad(params, spec, task, cfg, noise, x1, t, task.condition(pathway), x0, eps, pw)
        vals.append(values["fm" if cfg.framework == "flow" else "total"])
    return float(np.mean(vals))


def train(spec: DenoiserSpec, task: ToyTask | ToySpec, cfg: TrainConfig, noise: NoiseLevelParams | None = None,
          params: NetParams | None = None, eval_fn=None) -> TrainReport:
    """Train the residual denoiser with SGD (or Adam) on the toy task.

    Each iteration picks pathway-A with probability ``pathway_mix`` and
    pathway-B otherwise; both share every weight except their input map.
    ``eval_fn(params)`` returns a dict recorded every ``eval_every`` iterations
    (default: held-out loss).
    """
    if spec.backend != "residual-net":
        raise ValidationError("only the residual-net backend is trainable")
    if (cfg.framework == "flow") != (spec.parameterization == "v-pred"):
        raise ValidationError("flow training needs a v-pred network and edm training an x-pred one")
    noise = noise or NoiseLevelParams()
    if isinstance(task, ToySpec):
        task = make_task(task)
    n = task.reference.n_atoms
    params = init_params(spec, n, RngStream(cfg.seed, 0)) if params is None else params.copy()
    rng_data, rng_t, rng_path = RngStream(cfg.seed, 1), RngStream(cfg.seed, 2), RngStream(cfg.seed, 3)
    eval_fn = eval_fn or (lambda p: {"heldout_loss": heldout_loss(p, spec, task, cfg, noise)})
    opt = _Adam(params, cfg.lr) if cfg.optimizer == "adam" else None
    pw = pair_weights(task.reference, cfg.loss)

    curve, evals = [], []
    for it in range(cfg.iterations):
        pathway = "pathway-A" if rng_path.gen.random() < cfg.pathway_mix else "pathway-B"
        x1, t, x0, eps = _draw_batch(cfg, task, noise, spec, rng_data.gen, rng_t)
        values, grads = loss_and_grad(params, spec, task, cfg, noise, x1, t, task.condition(pathway), x0, eps, pw)
        total = values["total"]
        if not np.isfinite(total) or total > cfg.max_loss:
            raise DivergenceError(f"loss {total} at iteration {it}", it)
        if cfg.lr > 0:
            if opt is None:
                _sgd(params, grads, cfg.lr)
            else:
                opt.step(params, grads)
        curve.append({"iteration": it, "pathway": pathway, **values})
        if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
            evals.append({"iteration": it, **eval_fn(params)})
    return TrainReport(curve, evals, params)


def prune_and_finetune(params: NetParams, k: int, spec: DenoiserSpec, task: ToyTask, cfg: TrainConfig,
                       eval_fn, noise: NoiseLevelParams | None = None):
    """Drop ``k`` input-side blocks, evaluate, finetune, evaluate again.

    ``eval_fn(params)`` returns a metrics dict. Returns ``(zero_shot, finetuned,
    finetuned_params)``; the finetuned metrics are reported even when worse.
    """
    pruned = prune_blocks(params, k)
    zero_shot = eval_fn(pruned)
    rep = train(replace(spec, n_blocks=pruned.n_blocks), task, replace(cfg, eval_every=0), noise, params=pruned)
    return zero_shot, eval_fn(rep.params), rep.params


def as_denoiser(spec: DenoiserSpec, params: NetParams, noise: NoiseLevelParams | None = None) -> ResidualDenoiser:
    return ResidualDenoiser(spec, params, noise)
