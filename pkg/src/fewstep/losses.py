"""Training objectives with analytic coordinate gradients.

All functions take coordinates of shape ``(N, 3)`` or a batch ``(B, N, 3)``
and return ``(value, grad)``; for a batch ``value`` has shape ``(B,)`` and
``grad`` holds the gradient of each element's own value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .denoisers import v_to_x
from .errors import DomainError, ValidationError
from .geom import Structure, kabsch_transform

LDDT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass
class LossWeights:
    """Loss mixing weights and the pair/atom weighting rules.

    ``t_scale`` is an optional callable ``t -> factor`` applied to the total
    (constant 1 when None).
    """

    w_mse: float = 1.0
    w_bond: float = 1.0
    w_slddt: float = 1.0
    entity_atom_weight: dict = field(default_factory=dict)
    cutoff: float = 15.0
    entity_pair_weight: dict = field(default_factory=dict)
    t_scale: object = None

    def __post_init__(self):
        vals = [self.w_mse, self.w_bond, self.w_slddt, self.cutoff,
                *self.entity_atom_weight.values(), *self.entity_pair_weight.values()]
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValidationError("loss weights must be finite and nonnegative")


@dataclass
class LossReport:
    values: dict
    total: float
    grad: np.ndarray


def _coords(x):
    return x.coords if isinstance(x, Structure) else np.asarray(x, dtype=float)


def _squeeze(value, grad, single):
    if single:
        return float(value[0]), grad[0]
    return value, grad


def _batch(pred, target):
    p = _coords(pred)
    q = _coords(target)
    single = p.ndim == 2
    p = p[None] if single else p
    if q.shape[-2:] != p.shape[-2:] or (q.ndim == 3 and q.shape != p.shape):
        raise ValidationError(f"shape mismatch: {p.shape} vs {q.shape}")
    q = np.broadcast_to(q, p.shape) if q.ndim == 2 else q
    return p, q, single


def atom_weights(target: Structure, lw: LossWeights | None = None) -> np.ndarray:
    w = target.weights.copy()
    if lw is not None:
        for ent, mult in lw.entity_atom_weight.items():
            w[target.entity == ent] *= mult
    return w


def loss_mse(pred, target, weights=None, align=False):
    """Weighted mean over atoms of the squared coordinate error.

    With ``align`` the target is first superposed onto the prediction using the
    same weights; the gradient holds that superposition fixed, which is exact at
    the optimum.
    """
    p, q, single = _batch(pred, target)
    n = p.shape[1]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != n or w.sum() <= 0:
        raise ValidationError("need one nonnegative weight per atom, not all zero")
    if align:
        q = q.copy()
        for b in range(len(p)):
            R, t = kabsch_transform(q[b], p[b], w)
            q[b] = q[b] @ R.T + t
    diff = p - q
    wn = w / w.sum()
    value = np.einsum("n,bnc,bnc->b", wn, diff, diff)
    grad = 2.0 * wn[None, :, None] * diff
    return _squeeze(value, grad, single)


def loss_bond(pred, target, bonds):
    """Mean squared deviation of predicted from target bond lengths."""
    p, q, single = _batch(pred, target)
    bonds = np.asarray(bonds, dtype=int).reshape(-1, 2)
    if len(bonds) == 0:
        raise ValidationError("bond loss needs at least one bond")
    l, m = bonds[:, 0], bonds[:, 1]
    dp = p[:, l] - p[:, m]
    dpred = np.linalg.norm(dp, axis=-1)
    dtrue = np.linalg.norm(q[:, l] - q[:, m], axis=-1)
    if np.any(dpred < 1e-12):
        raise DomainError("predicted bond of zero length; gradient is singular")
    err = dpred - dtrue
    value = np.mean(err**2, axis=-1)
    coef = (2.0 / len(bonds)) * err / dpred
    g = coef[..., None] * dp
    grad = np.zeros_like(p)
    for b in range(len(p)):
        np.add.at(grad[b], l, g[b])
        np.add.at(grad[b], m, -g[b])
    return _squeeze(value, grad, single)


def pair_weights(target: Structure, lw: LossWeights | None = None) -> np.ndarray:
    """Default pair rule: 1 for l != m with target distance <= cutoff, times entity-pair multipliers."""
    lw = lw or LossWeights()
    x = target.coords
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    w = (d <= lw.cutoff).astype(float)
    np.fill_diagonal(w, 0.0)
    for key, mult in lw.entity_pair_weight.items():
        a, b = key.split("-") if isinstance(key, str) else key
        mask = np.outer(target.entity == a, target.entity == b)
        mask = mask | mask.T
        w[mask] *= mult
    return w


def loss_smooth_lddt(pred, target, pair_w=None, thresholds=LDDT_THRESHOLDS):
    """``1 - sum(w * eps) / sum(w)`` with ``eps`` the mean of sigmoids ``s(thr - |d_gt - d|)``."""
    p, q, single = _batch(pred, target)
    n = p.shape[1]
    if n < 2:
        raise ValidationError("smooth LDDT needs at least two atoms")
    if pair_w is None:
        pair_w = 1.0 - np.eye(n)
    w = np.array(pair_w, dtype=float)
    np.fill_diagonal(w, 0.0)
    if w.sum() <= 0:
        raise ValidationError("all pair weights are zero")
    wn = w / w.sum()

    diff = p[:, :, None, :] - p[:, None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    dgt = np.linalg.norm(q[:, :, None, :] - q[:, None, :, :], axis=-1)
    delta = np.abs(dgt - d)
    eps = np.zeros_like(d)
    deps = np.zeros_like(d)
    for thr in thresholds:
        s = expit(thr - delta)
        eps += s
        deps += s * (1.0 - s)
    eps /= len(thresholds)
    deps /= len(thresholds)
    value = 1.0 - np.einsum("lm,blm->b", wn, eps)

    # dL/dd = wn * deps * sign(d - dgt); then through d = |x_l - x_m|
    dL_dd = wn * deps * np.sign(d - dgt)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(d[..., None] > 0, diff / d[..., None], 0.0)
    coef = dL_dd + np.swapaxes(dL_dd, 1, 2)
    grad = np.einsum("blm,blmc->blc", coef, unit)
    return _squeeze(value, grad, single)


def loss_fm(v_pred, x0, x1):
    """Mean over atoms of ``|v_pred - (x1 - x0)|^2``."""
    v = _coords(v_pred)
    target = _coords(x1) - _coords(x0)
    if v.shape[-2:] != target.shape[-2:] or (v.ndim == 3 and target.ndim == 3 and v.shape != target.shape):
        raise ValidationError(f"shape mismatch: {v.shape} vs {target.shape}")
    single = v.ndim == 2
    vb = v[None] if single else v
    diff = vb - target
    n = vb.shape[1]
    value = np.sum(diff * diff, axis=(1, 2)) / n
    grad = 2.0 * diff / n
    return _squeeze(value, grad, single)


def _aux_terms(x_hat, x1, target: Structure, lw: LossWeights, pair_w=None):
    values, grad = {}, np.zeros_like(x_hat)
    if lw.w_bond > 0 and len(target.bonds):
        v, g = loss_bond(x_hat, x1, target.bonds)
        values["bond"] = v
        grad = grad + lw.w_bond * g
    if lw.w_slddt > 0 and target.n_atoms >= 2:
        pw = pair_weights(target, lw) if pair_w is None else pair_w
        v, g = loss_smooth_lddt(x_hat, x1, pw)
        values["smooth_lddt"] = v
        grad = grad + lw.w_slddt * g
    return values, grad


def _scale(lw, t, values, grad):
    if lw.t_scale is None or t is None:
        return values, grad
    f = np.asarray(lw.t_scale(t), dtype=float)
    fb = f.reshape(-1, *([1] * (grad.ndim - 1))) if grad.ndim > 2 else f
    return {k: v * f for k, v in values.items()}, grad * fb


def edm_loss(x_hat, target: Structure, lw: LossWeights, align=False, t=None, x1=None,
             pair_w=None) -> LossReport:
    """Weighted sum of MSE, bond and smooth-LDDT terms on a clean-structure estimate.

    ``target`` supplies topology and weights; ``x1`` (default ``target.coords``)
    may carry one ground-truth conformation per batch element.
    """
    values = {}
    x1 = target.coords if x1 is None else x1
    mse, grad = loss_mse(x_hat, x1, atom_weights(target, lw), align)
    values["mse"] = mse
    grad = lw.w_mse * grad
    aux, g_aux = _aux_terms(x_hat, x1, target, lw, pair_w)
    values.update(aux)
    grad = grad + g_aux
    total = lw.w_mse * mse + lw.w_bond * values.get("bond", 0.0) + lw.w_slddt * values.get("smooth_lddt", 0.0)
    values["total"] = total
    values, grad = _scale(lw, t, values, grad)
    return LossReport(values, values["total"], grad)


def flow_loss(v_pred, x_t, x0, t, target: Structure, lw: LossWeights, x1=None,
              pair_w=None) -> LossReport:
    """Velocity MSE plus bond and smooth-LDDT terms on ``x_hat = x_t + (1 - t) v``.

    The returned gradient is with respect to ``v_pred``.
    """
    values = {}
    x1 = target.coords if x1 is None else x1
    fm, grad = loss_fm(v_pred, x0, x1)
    values["fm"] = fm
    grad = lw.w_mse * grad
    tt = np.asarray(t, dtype=float)
    if np.any(tt >= 1):
        raise DomainError("flow loss needs t < 1")
    tb = tt.reshape(-1, 1, 1) if np.ndim(v_pred) == 3 else tt
    x_hat = x_t + (1.0 - tb) * v_pred
    aux, g_aux = _aux_terms(x_hat, x1, target, lw, pair_w)
    values.update(aux)
    grad = grad + (1.0 - tb) * g_aux
    total = lw.w_mse * fm + lw.w_bond * values.get("bond", 0.0) + lw.w_slddt * values.get("smooth_lddt", 0.0)
    values["total"] = total
    values, grad = _scale(lw, t, values, grad)
    return LossReport(values, values["total"], grad)


def flow_estimate(v_pred, x_t, t):
    return v_to_x(v_pred, x_t, t)
