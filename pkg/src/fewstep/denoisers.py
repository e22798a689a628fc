"""Denoisers: exact Gaussian-mixture posterior mean and a small residual network.

Every denoiser is a callable ``D(x, t, cond)`` carrying two attributes:
``parameterization`` (``"x"``: returns a clean-structure estimate, ``"v"``:
returns a velocity) and ``noise``, the :class:`NoiseLevelParams` used to map
normalized time to a noise level.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, ValidationError
from .geom import ENTITY_CLASSES, RngStream, Structure, ToySpec, pairwise_distances
from .schedules import NoiseLevelParams, _sigma_raw

PATHWAYS = ("pathway-A", "pathway-B", "none")


# -- x / v adapters -----------------------------------------------------------

def _remaining(t, ndim):
    """``1 - t`` shaped to broadcast against coordinates; per-batch times index the leading axis."""
    t = np.asarray(t, dtype=float)
    if not np.all(t < 1):
        raise DomainError(f"velocity conversion needs t < 1, got {t}")
    return 1.0 - (t.reshape(-1, *([1] * (ndim - 1))) if t.ndim else t)


def v_to_x(v, x_t, t):
    """Clean estimate from a velocity: ``x_t + (1 - t) v``."""
    return x_t + _remaining(t, np.ndim(x_t)) * v


def x_to_v(x_hat, x_t, t):
    """Velocity pointing from ``x_t`` to ``x_hat`` over the remaining time ``1 - t``."""
    return (x_hat - x_t) / _remaining(t, np.ndim(x_t))


# -- analytic mixture oracle --------------------------------------------------

def gmm_posterior_mean(x, sigma, weights, means, std):
    """Exact E[x1 | x1 + sigma * eps = x] for an isotropic 3D Gaussian mixture.

    Each row of ``x`` (any leading shape, last axis 3) is treated as an
    independent draw. ``std`` is the per-component standard deviation.
    """
    x = np.asarray(x, dtype=float)
    if sigma < 0:
        raise ValidationError("sigma must be nonnegative")
    if sigma == 0:
        return x.copy()
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float).reshape(-1, 3)
    var = std**2 + sigma**2
    shrink = std**2 / var
    if len(w) == 1:
        return mu[0] + shrink * (x - mu[0])
    d2 = np.sum((x[..., None, :] - mu) ** 2, axis=-1)  # (..., K)
    logr = np.log(w) - 0.5 * d2 / var
    r = np.exp(logr - logsumexp(logr, axis=-1, keepdims=True))
    comp_mean = mu + shrink * (x[..., None, :] - mu)  # (..., K, 3)
    return np.sum(r[..., None] * comp_mean, axis=-2)


class GMMDenoiser:
    """Posterior-mean denoiser for a Gaussian mixture data law (x-prediction)."""

    parameterization = "x"

    def __init__(self, weights, means, std, noise: NoiseLevelParams | None = None):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float).reshape(-1, 3)
        self.std = float(std)
        self.noise = noise or NoiseLevelParams()

    @classmethod
    def from_toy(cls, spec: ToySpec, noise=None):
        return cls(spec.mixture_weights, spec.mixture_means, spec.component_std, noise)

    def __call__(self, x, t, cond=None):
        return gmm_posterior_mean(x, float(_sigma_raw(t, self.noise)), self.weights, self.means, self.std)


class FunctionDenoiser:
    """Wrap a plain function ``f(x, t, cond)`` as a denoiser.

    With ``parameterization="v"`` the function returns a velocity, which is
    turned into the clean estimate ``x + (1 - t) f``.
    """

    def __init__(self, fn, parameterization="x", noise: NoiseLevelParams | None = None):
        if parameterization not in ("x", "v"):
            raise ValidationError("parameterization must be 'x' or 'v'")
        self.fn = fn
        self.parameterization = parameterization
        self.noise = noise or NoiseLevelParams()

    def __call__(self, x, t, cond=None):
        out = self.fn(x, t, cond)
        return v_to_x(out, x, t) if self.parameterization == "v" else out


# -- conditioning -------------------------------------------------------------

@dataclass
class Condition:
    """Per-atom conditioning features for one pathway."""

    pathway: str
    features: np.ndarray | None = None

    def __post_init__(self):
        if self.pathway not in PATHWAYS:
            raise ValidationError(f"unknown pathway {self.pathway!r}")


def pathway_dims(n_atoms: int) -> dict:
    return {"pathway-A": n_atoms, "pathway-B": n_atoms + len(ENTITY_CLASSES)}


def make_condition(target: Structure, pathway: str, scale: float = 16.0) -> Condition:
    """Build toy conditioning features from a target structure.

    pathway-A carries the target distance-matrix row of each atom (a
    ground-truth pairwise summary); pathway-B carries only the atom's position
    in the sequence and its entity class.
    """
    n = target.n_atoms
    if pathway == "none":
        return Condition("none", None)
    if pathway == "pathway-A":
        return Condition(pathway, pairwise_distances(target) / scale)
    if pathway == "pathway-B":
        ent = np.zeros((n, len(ENTITY_CLASSES)))
        ent[np.arange(n), [ENTITY_CLASSES.index(e) for e in target.entity]] = 1.0
        return Condition(pathway, np.concatenate([np.eye(n), ent], axis=1))
    raise ValidationError(f"unknown pathway {pathway!r}")


# -- residual network ---------------------------------------------------------

@dataclass
class DenoiserSpec:
    parameterization: str = "x-pred"
    backend: str = "residual-net"
    n_blocks: int = 4
    width: int = 64
    time_embed: int = 8
    pathway: str = "pathway-A"

    def __post_init__(self):
        if self.parameterization not in ("x-pred", "v-pred"):
            raise ValidationError(f"unknown parameterization {self.parameterization!r}")
        if self.backend not in ("gmm-analytic", "residual-net"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if self.n_blocks < 1 or self.width < 1 or self.time_embed < 2 or self.time_embed % 2:
            raise ValidationError("n_blocks, width >= 1 and an even time_embed >= 2 required")
        if self.pathway not in PATHWAYS:
            raise ValidationError(f"unknown pathway {self.pathway!r}")


@dataclass
class NetParams:
    """Weights of the per-atom residual MLP.

    ``inp`` maps scaled coordinates and time embedding into the hidden width,
    ``cond`` holds one input map per pathway, ``blocks`` is ordered from the
    input side, and ``out`` projects back to three coordinates.
    """

    inp: dict
    cond: dict
    blocks: list
    out: dict

    @property
    def n_blocks(self):
        return len(self.blocks)

    def named_arrays(self):
        for k in sorted(self.inp):
            yield f"inp.{k}", self.inp[k]
        for k in sorted(self.cond):
            yield f"cond.{k}", self.cond[k]
        for i, b in enumerate(self.blocks):
            for k in sorted(b):
                yield f"blocks.{i}.{k}", b[k]
        for k in sorted(self.out):
            yield f"out.{k}", self.out[k]

    def arrays(self):
        return [a for _, a in self.named_arrays()]

    def copy(self) -> "NetParams":
        return NetParams({k: v.copy() for k, v in self.inp.items()},
                         {k: v.copy() for k, v in self.cond.items()},
                         [{k: v.copy() for k, v in b.items()} for b in self.blocks],
                         {k: v.copy() for k, v in self.out.items()})

    def zeros_like(self) -> "NetParams":
        z = self.copy()
        for a in z.arrays():
            a[...] = 0.0
        return z

    def equals(self, other: "NetParams") -> bool:
        a, b = list(self.named_arrays()), list(other.named_arrays())
        return len(a) == len(b) and all(na == nb and np.array_equal(x, y)
                                        for (na, x), (nb, y) in zip(a, b))


def init_params(spec: DenoiserSpec, n_atoms: int, rng: RngStream, zero_residual=False) -> NetParams:
    gen = rng.gen
    H, E = spec.width, spec.time_embed

    def dense(fan_in, fan_out, gain=1.0):
        return gain * gen.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    dims = pathway_dims(n_atoms)
    inp = {"wx": dense(3, H), "wt": dense(E, H), "b": np.zeros(H)}
    cond = {p: dense(d, H) for p, d in dims.items()}
    blocks = []
    for _ in range(spec.n_blocks):
        blocks.append({"w1": dense(H, H), "b1": np.zeros(H),
                       "w2": np.zeros((H, H)) if zero_residual else dense(H, H, 0.5),
                       "b2": np.zeros(H)})
    out = {"w": dense(H, 3, 0.1), "b": np.zeros(3)}
    return NetParams(inp, cond, blocks, out)


def prune_blocks(params: NetParams, k: int) -> NetParams:
    """Drop the ``k`` blocks closest to the input; the rest keep their weights."""
    if k < 0 or k >= params.n_blocks:
        raise ValidationError(f"can prune 0..{params.n_blocks - 1} blocks, asked for {k}")
    p = params.copy()
    p.blocks = p.blocks[k:]
    return p


def time_embedding(t, dim):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = 0.5 * np.pi * 2.0 ** np.arange(dim // 2)
    ang = t[:, None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def preconditioning(t, parameterization: str, noise: NoiseLevelParams):
    """Return ``(c_in, c_skip, c_out)`` as arrays shaped like ``t``.

    x-prediction uses the EDM coefficients at ``sigma(t)``. Velocity prediction
    scales the input by the std of the straight-path interpolant and the output
    by the std of ``x1 - x0``; it has no skip term.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    sd = noise.sigma_data
    if parameterization == "x":
        s = _sigma_raw(t, noise)
        denom = s * s + sd * sd
        return 1.0 / np.sqrt(denom), sd * sd / denom, s * sd / np.sqrt(denom)
    s0 = initial_std(noise, "v")
    st = np.sqrt((1.0 - t) ** 2 * s0**2 + t**2 * sd**2)
    return 1.0 / st, np.zeros_like(t), np.full_like(t, np.sqrt(s0**2 + sd**2))


def initial_std(noise: NoiseLevelParams, parameterization: str) -> float:
    if noise.init_std is not None:
        return noise.init_std
    return noise.sigma_max if parameterization == "x" else noise.sigma_data


def _check_shapes(params: NetParams, x, cond):
    if x.shape[-1] != 3:
        raise ValidationError(f"coordinates must have trailing dim 3, got {x.shape}")
    if params.inp["wx"].shape[0] != 3:
        raise ValidationError("input map shape mismatch")
    if cond is not None and cond.pathway != "none":
        w = params.cond.get(cond.pathway)
        f = cond.features
        if w is None or f is None or f.shape[-1] != w.shape[0] or f.shape[0] != x.shape[-2]:
            raise ValidationError(
                f"condition features {None if f is None else f.shape} incompatible with "
                f"{cond.pathway} input map {None if w is None else w.shape}")


def net_forward(x, t, cond: Condition | None, params: NetParams, parameterization: str,
                noise: NoiseLevelParams, cache=False):
    """Preconditioned network output for ``x`` of shape (N, 3) or (B, N, 3).

    ``t`` is a scalar or one time per batch element. Returns the clean estimate
    for x-prediction and the velocity for v-prediction; with ``cache`` also the
    intermediates needed by :func:`net_backward`.
    """
    x = np.asarray(x, dtype=float)
    _check_shapes(params, x, cond)
    single = x.ndim == 2
    xb = x[None] if single else x
    B = xb.shape[0]
    tb = np.broadcast_to(np.asarray(t, dtype=float), (B,)).copy()
    c_in, c_skip, c_out = (c[:, None, None] for c in preconditioning(tb, parameterization, noise))
    E = params.inp["wt"].shape[0]
    emb = time_embedding(tb, E)

    u = c_in * xb
    h = u @ params.inp["wx"] + (emb @ params.inp["wt"])[:, None, :] + params.inp["b"]
    if cond is not None and cond.pathway != "none":
        h = h + (cond.features @ params.cond[cond.pathway])[None]
    hs, gs = [h], []
    for blk in params.blocks:
        g = np.tanh(h @ blk["w1"] + blk["b1"])
        h = h + g @ blk["w2"] + blk["b2"]
        hs.append(h)
        gs.append(g)
    F = h @ params.out["w"] + params.out["b"]
    y = c_skip * xb + c_out * F
    y = y[0] if single else y
    if not cache:
        return y
    return y, {"u": u, "emb": emb, "hs": hs, "gs": gs, "c_out": c_out, "cond": cond, "single": single}


def net_backward(grad_out, params: NetParams, cache) -> NetParams:
    """Gradient of a scalar loss w.r.t. all weights, given dL/d(output)."""
    G = np.asarray(grad_out, dtype=float)
    if cache["single"]:
        G = G[None]
    grads = params.zeros_like()
    dF = cache["c_out"] * G
    h_last = cache["hs"][-1]
    grads.out["w"][...] = np.einsum("bnh,bnk->hk", h_last, dF)
    grads.out["b"][...] = dF.sum(axis=(0, 1))
    dh = dF @ params.out["w"].T
    for i in reversed(range(params.n_blocks)):
        blk, gblk = params.blocks[i], grads.blocks[i]
        g, h_in = cache["gs"][i], cache["hs"][i]
        gblk["w2"][...] = np.einsum("bnh,bnk->hk", g, dh)
        gblk["b2"][...] = dh.sum(axis=(0, 1))
        da = (dh @ blk["w2"].T) * (1.0 - g * g)
        gblk["w1"][...] = np.einsum("bnh,bnk->hk", h_in, da)
        gblk["b1"][...] = da.sum(axis=(0, 1))
        dh = dh + da @ blk["w1"].T
    grads.inp["wx"][...] = np.einsum("bnc,bnh->ch", cache["u"], dh)
    grads.inp["wt"][...] = cache["emb"].T @ dh.sum(axis=1)
    grads.inp["b"][...] = dh.sum(axis=(0, 1))
    cond = cache["cond"]
    if cond is not None and cond.pathway != "none":
        grads.cond[cond.pathway][...] = cond.features.T @ dh.sum(axis=0)
    return grads


def net_denoise(x, t, cond, params, spec: DenoiserSpec, noise: NoiseLevelParams):
    """Deterministic network prediction at time ``t`` (clean structure or velocity per spec)."""
    return net_forward(x, t, cond, params, spec.parameterization[0], noise)


class ResidualDenoiser:
    """Callable returning the clean-structure estimate; v-pred outputs are converted."""

    def __init__(self, spec: DenoiserSpec, params: NetParams, noise: NoiseLevelParams | None = None):
        self.spec = spec
        self.params = params
        self.noise = noise or NoiseLevelParams()
        self.parameterization = spec.parameterization[0]

    def __call__(self, x, t, cond=None):
        out = net_forward(x, t, cond, self.params, self.parameterization, self.noise)
        return v_to_x(out, x, t) if self.parameterization == "v" else out


# -- checkpoints --------------------------------------------------------------

_MAGIC = b"FEWSTEP-NETPARAMS\n"
_VERSION = 1


def dump_params(params: NetParams, spec: DenoiserSpec | None = None) -> bytes:
    """Serialize to a versioned byte string: magic, JSON header with shapes, raw float64 data."""
    named = list(params.named_arrays())
    header = {
        "version": _VERSION,
        "n_blocks": params.n_blocks,
        "arrays": [[name, list(a.shape)] for name, a in named],
        "spec": None if spec is None else spec.__dict__,
    }
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for _, a in named:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def load_params(data: bytes):
    """Inverse of :func:`dump_params`; returns ``(params, spec_or_None)``."""
    if not data.startswith(_MAGIC):
        raise ValidationError("not a parameter checkpoint")
    rest = data[len(_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    if header["version"] != _VERSION:
        raise ValidationError(f"unsupported checkpoint version {header['version']}")
    body = memoryview(rest[nl + 1:])
    inp, cond, out = {}, {}, {}
    blocks = [dict() for _ in range(header["n_blocks"])]
    pos = 0
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) * 8
        if pos + size > len(body):
            raise ValidationError("checkpoint is truncated")
        a = np.frombuffer(body[pos:pos + size], dtype="<f8").astype(float).reshape(shape)
        pos += size
        parts = name.split(".")
        if parts[0] == "inp":
            inp[parts[1]] = a
        elif parts[0] == "cond":
            cond[parts[1]] = a
        elif parts[0] == "out":
            out[parts[1]] = a
        else:
            blocks[int(parts[1])][parts[2]] = a
    if pos != len(body):
        raise ValidationError("checkpoint size does not match its header")
    spec = None if header["spec"] is None else DenoiserSpec(**header["spec"])
    return NetParams(inp, cond, blocks, out), spec


def save_checkpoint(path, params: NetParams, spec: DenoiserSpec | None = None):
    with open(path, "wb") as f:
        f.write(dump_params(params, spec))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return load_params(f.read())
