import math

import numpy as np
import pytest

from fewstep.errors import DomainError, ValidationError
from fewstep.geom import RngStream, Structure, ToySpec, gen_toy, random_rotation
from fewstep.losses import (LossWeights, edm_loss, flow_loss, loss_bond, loss_fm, loss_mse, loss_smooth_lddt,
                            pair_weights)

PLATEAU = 1 - 0.25 * sum(1 / (1 + math.exp(-x)) for x in (0.5, 1, 2, 4))


def fd_grad(f, x, h):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def _instance(gen, n, scale=3.0):
    target = scale * gen.standard_normal((n, 3))
    pred = target + gen.standard_normal((n, 3))
    return pred, target


def test_plateau_oracle_value():
    assert PLATEAU == pytest.approx(0.19592, abs=1e-5)
    sig = [1 / (1 + math.exp(-x)) for x in (0.5, 1, 2, 4)]
    np.testing.assert_allclose(sig, [0.62246, 0.73106, 0.88080, 0.98201], atol=1e-5)


def test_mse_values():
    x = np.zeros((1, 3))
    assert loss_mse(np.array([[3.0, 4, 0]]), x)[0] == 25.0
    gen = np.random.default_rng(0)
    p = gen.standard_normal((5, 3))
    assert loss_mse(p, p)[0] == 0.0
    with pytest.raises(ValidationError):
        loss_mse(np.zeros((3, 3)), np.zeros((4, 3)))


def test_mse_weighted_mean():
    p = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    v, _ = loss_mse(p, np.zeros((2, 3)), weights=[3.0, 1.0])
    assert v == pytest.approx((3 * 1 + 1 * 4) / 4)


@pytest.mark.parametrize("align", [False, True])
def test_mse_gradient_fd(align):
    gen = np.random.default_rng(1)
    for trial in range(100):
        n = int(gen.integers(3, 11))
        pred, target = _instance(gen, n)
        w = gen.uniform(0.2, 2.0, n)
        _, g = loss_mse(pred, target, w, align)
        fd = fd_grad(lambda x: loss_mse(x, target, w, align)[0], pred.copy(), 1e-4 * 3.0)
        assert rel_err(g, fd) < 1e-5, trial


def test_mse_align_rigid_invariance():
    gen = np.random.default_rng(2)
    pred, target = _instance(gen, 8)
    v0, _ = loss_mse(pred, target, align=True)
    R = random_rotation(gen)
    v1, _ = loss_mse(pred @ R.T + 7.0, target, align=True)
    assert abs(v0 - v1) < 1e-9


def test_bond_values():
    t = np.array([[0.0, 0, 0], [1.5, 0, 0]])
    p = np.array([[0.0, 0, 0], [2.5, 0, 0]])
    assert loss_bond(p, t, [[0, 1]])[0] == pytest.approx(1.0)
    assert loss_bond(t, t, [[0, 1]])[0] == 0.0
    with pytest.raises(DomainError):
        loss_bond(np.zeros((2, 3)), t, [[0, 1]])
    with pytest.raises(ValidationError):
        loss_bond(p, t, np.zeros((0, 2)))


def test_bond_gradient_fd():
    gen = np.random.default_rng(3)
    for trial in range(100):
        n = int(gen.integers(2, 11))
        s = gen_toy(ToySpec(kind="polymer-chain", n_atoms=n), RngStream(trial))
        pred = s.coords + 0.5 * gen.standard_normal((n, 3))
        _, g = loss_bond(pred, s.coords, s.bonds)
        fd = fd_grad(lambda x: loss_bond(x, s.coords, s.bonds)[0], pred.copy(), 1e-4 * 3.8)
        assert rel_err(g, fd) < 1e-5, trial


def test_bond_rigid_invariance():
    gen = np.random.default_rng(4)
    s = gen_toy(ToySpec(kind="polymer-helix", n_atoms=8), RngStream(0))
    pred = s.coords + 0.3 * gen.standard_normal(s.coords.shape)
    v = loss_bond(pred, s.coords, s.bonds)[0]
    R = random_rotation(gen)
    assert loss_bond(pred @ R.T + 3, s.coords, s.bonds)[0] == pytest.approx(v, abs=1e-12)
    assert loss_bond(pred, s.coords @ R.T - 2, s.bonds)[0] == pytest.approx(v, abs=1e-12)


def test_smooth_lddt_plateau_and_limit():
    gen = np.random.default_rng(5)
    x = 5 * gen.standard_normal((7, 3))
    v, g = loss_smooth_lddt(x, x)
    assert v == pytest.approx(PLATEAU, abs=1e-5)
    far = x.copy()
    far[::2] *= 1e4
    far[1::2] *= -1e4
    v_far, _ = loss_smooth_lddt(far, x)
    assert v_far == pytest.approx(1.0, abs=1e-9)
    v_mid, _ = loss_smooth_lddt(x + 3 * gen.standard_normal(x.shape), x)
    assert PLATEAU < v_mid < 1.0
    with pytest.raises(ValidationError):
        loss_smooth_lddt(x, x, np.zeros((7, 7)))


def test_smooth_lddt_monotone_in_perturbation_scale():
    gen = np.random.default_rng(6)
    x = 5 * gen.standard_normal((8, 3))
    direction = gen.standard_normal((8, 3))
    vals = [loss_smooth_lddt(x + s * direction, x)[0] for s in np.linspace(0, 10, 20)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_smooth_lddt_gradient_fd():
    gen = np.random.default_rng(7)
    for trial in range(100):
        n = int(gen.integers(2, 11))
        pred, target = _instance(gen, n)
        pw = gen.uniform(0, 2, (n, n))
        pw = pw + pw.T
        _, g = loss_smooth_lddt(pred, target, pw)
        fd = fd_grad(lambda x: loss_smooth_lddt(x, target, pw)[0], pred.copy(), 1e-4 * 3.0)
        assert rel_err(g, fd) < 1e-5, trial


def test_fm_values_and_gradient():
    x0 = np.zeros((1, 3))
    x1 = np.array([[2.0, 0, 0]])
    assert loss_fm(np.zeros((1, 3)), x0, x1)[0] == 4.0
    assert loss_fm(x1 - x0, x0, x1)[0] == 0.0
    with pytest.raises(ValidationError):
        loss_fm(np.zeros((2, 3)), x0, x1)
    gen = np.random.default_rng(8)
    for trial in range(100):
        n = int(gen.integers(1, 11))
        v, a, b = (gen.standard_normal((n, 3)) for _ in range(3))
        _, g = loss_fm(v, a, b)
        fd = fd_grad(lambda x: loss_fm(x, a, b)[0], v.copy(), 1e-4)
        assert rel_err(g, fd) < 1e-5, trial


def test_batched_losses_match_single():
    gen = np.random.default_rng(9)
    s = gen_toy(ToySpec(kind="polymer-chain", n_atoms=6), RngStream(0))
    P = s.coords + gen.standard_normal((3, 6, 3))
    for fn, args in ((loss_mse, ()), (loss_bond, (s.bonds,)), (loss_smooth_lddt, ())):
        vb, gb = fn(P, s.coords, *args)
        for b in range(3):
            v, g = fn(P[b], s.coords, *args)
            assert vb[b] == pytest.approx(v, rel=1e-13)
            np.testing.assert_allclose(gb[b], g, rtol=1e-12, atol=1e-15)


def test_pair_weight_rule():
    coords = np.array([[0.0, 0, 0], [10, 0, 0], [30, 0, 0]])
    s = Structure(coords, ["protein", "protein", "ligand"], [0, 0, 1])
    w = pair_weights(s, LossWeights(cutoff=15.0))
    assert w.tolist() == [[0, 1, 0], [1, 0, 0], [0, 0, 0]]
    w2 = pair_weights(s, LossWeights(cutoff=25.0, entity_pair_weight={"protein-ligand": 5.0}))
    assert w2[1, 2] == 5.0 and w2[2, 1] == 5.0 and w2[0, 1] == 1.0 and w2[0, 2] == 0.0


def test_loss_weights_validation():
    with pytest.raises(ValidationError):
        LossWeights(w_mse=-1)
    with pytest.raises(ValidationError):
        LossWeights(cutoff=float("nan"))


def test_flow_aux_path_exact_velocity():
    gen = np.random.default_rng(10)
    s = gen_toy(ToySpec(kind="polymer-chain", n_atoms=6), RngStream(1))
    x0 = gen.standard_normal((6, 3))
    x1 = s.coords
    t = 0.5
    xt = (1 - t) * x0 + t * x1
    rep = flow_loss(x1 - x0, xt, x0, t, s, LossWeights())
    assert rep.values["fm"] == pytest.approx(0.0, abs=1e-25)
    assert rep.values["bond"] == pytest.approx(0.0, abs=1e-20)
    assert rep.values["smooth_lddt"] == pytest.approx(loss_smooth_lddt(x1, x1, pair_weights(s))[0], abs=1e-12)


def test_composite_gradients_fd():
    gen = np.random.default_rng(11)
    s = gen_toy(ToySpec(kind="complex-with-ligand", n_atoms=5, n_ligand_atoms=2), RngStream(2))
    lw = LossWeights(w_mse=0.7, w_bond=1.3, w_slddt=2.0, t_scale=lambda t: 1 + t)
    for trial in range(20):
        x_hat = s.coords + gen.standard_normal(s.coords.shape)
        rep = edm_loss(x_hat, s, lw, t=0.3)
        fd = fd_grad(lambda x: edm_loss(x, s, lw, t=0.3).total, x_hat.copy(), 1e-4)
        assert rel_err(rep.grad, fd) < 1e-5
        x0 = gen.standard_normal(s.coords.shape)
        t = float(gen.uniform(0.05, 0.95))
        xt = (1 - t) * x0 + t * s.coords
        v = gen.standard_normal(s.coords.shape)
        rep = flow_loss(v, xt, x0, t, s, lw)
        fd = fd_grad(lambda u: flow_loss(u, xt, x0, t, s, lw).total, v.copy(), 1e-4)
        assert rel_err(rep.grad, fd) < 1e-5
    with pytest.raises(DomainError):
        flow_loss(v, xt, x0, 1.0, s, lw)
