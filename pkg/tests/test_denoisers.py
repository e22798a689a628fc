import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fewstep.denoisers import (Condition, DenoiserSpec, GMMDenoiser, dump_params, gmm_posterior_mean, init_params,
                               load_checkpoint, load_params, make_condition, net_backward, net_forward,
                               preconditioning, prune_blocks, save_checkpoint, v_to_x, x_to_v)
from fewstep.errors import DomainError, ValidationError
from fewstep.geom import RngStream, ToySpec, gen_toy, random_rotation
from fewstep.schedules import NoiseLevelParams

NOISE = NoiseLevelParams()


def _toy(n=6):
    return gen_toy(ToySpec(kind="polymer-chain", n_atoms=n), RngStream(0))


def test_gmm_sigma_zero_is_identity():
    x = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(gmm_posterior_mean(x, 0.0, [1.0], [[0, 0, 0]], 1.0), x)


def test_gmm_single_component_hand_value():
    out = gmm_posterior_mean(np.array([2.0, 0, 0]), 1.0, [1.0], [[0, 0, 0]], 1.0)
    np.testing.assert_allclose(out, [1.0, 0, 0], atol=1e-15)


def test_gmm_symmetric_pair_at_origin():
    out = gmm_posterior_mean(np.zeros(3), 2.0, [0.5, 0.5], [[3, 0, 0], [-3, 0, 0]], 1.0)
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.1, 10), sigma=st.floats(0.01, 100), seed=st.integers(0, 1000))
def test_gmm_single_gaussian_closed_form(a, sigma, seed):
    x = np.random.default_rng(seed).standard_normal((5, 3)) * 10
    out = gmm_posterior_mean(x, sigma, [1.0], [[0, 0, 0]], a)
    np.testing.assert_allclose(out, x * a * a / (a * a + sigma * sigma), rtol=1e-12, atol=1e-12)
    assert np.all(np.linalg.norm(out, axis=1) < np.linalg.norm(x, axis=1))


def test_gmm_two_component_matches_monte_carlo():
    # oracle: importance-weighted average over prior draws, posterior weight ~ N(x; x1, sigma^2)
    w, mu, a, sigma = [0.3, 0.7], [[2.0, 0, 0], [-1.0, 1.0, 0]], 0.5, 1.2
    x = np.array([0.4, 0.3, -0.2])
    gen = np.random.default_rng(0)
    k = gen.choice(2, size=400_000, p=w)
    x1 = np.asarray(mu)[k] + a * gen.standard_normal((len(k), 3))
    lw = -0.5 * np.sum((x - x1) ** 2, axis=1) / sigma**2
    p = np.exp(lw - lw.max())
    mc = (p[:, None] * x1).sum(0) / p.sum()
    np.testing.assert_allclose(gmm_posterior_mean(x, sigma, w, mu, a), mc, atol=5e-3)


def test_gmm_denoiser_uses_schedule():
    D = GMMDenoiser([1.0], [[0, 0, 0]], 1.0, NOISE)
    x = np.ones((2, 3))
    s = 160.0
    np.testing.assert_allclose(D(x, 0.0), x / (1 + s * s), rtol=1e-12)


def test_v_x_adapters():
    xt = np.zeros(3)
    np.testing.assert_allclose(v_to_x(np.ones(3), xt, 0.5), 0.5)
    np.testing.assert_array_equal(v_to_x(np.zeros(3), xt + 2, 0.3), xt + 2)
    gen = np.random.default_rng(1)
    for _ in range(100):
        v, x, t = gen.standard_normal(3), gen.standard_normal(3), gen.uniform(0, 0.99)
        assert np.max(np.abs(x_to_v(v_to_x(v, x, t), x, t) - v)) < 1e-12
    with pytest.raises(DomainError):
        x_to_v(np.ones(3), xt, 1.0)
    with pytest.raises(DomainError):
        v_to_x(np.ones(3), xt, 1.0)


def test_edm_preconditioning_coefficients():
    t = np.array([0.0, 0.5, 1.0])
    c_in, c_skip, c_out = preconditioning(t, "x", NOISE)
    from fewstep.schedules import sigma_at
    s, sd = sigma_at(t, NOISE), 16.0
    np.testing.assert_allclose(c_skip, sd**2 / (s**2 + sd**2))
    np.testing.assert_allclose(c_out, s * sd / np.sqrt(s**2 + sd**2))
    np.testing.assert_allclose(c_in, 1 / np.sqrt(s**2 + sd**2))
    assert c_skip[-1] == pytest.approx(1.0, abs=1e-9)


def test_zero_weight_net_tends_to_identity_at_low_noise():
    s = _toy()
    spec = DenoiserSpec()
    p = init_params(spec, s.n_atoms, RngStream(0))
    for a in p.arrays():
        a[...] = 0
    out = net_forward(s.coords, 1.0, make_condition(s, "pathway-A"), p, "x", NOISE)
    np.testing.assert_allclose(out, s.coords, rtol=1e-9)


@pytest.mark.parametrize("pathway", ["pathway-A", "pathway-B", "none"])
def test_zero_residual_net_is_skip_path(pathway):
    s = _toy()
    spec = DenoiserSpec(n_blocks=3)
    p = init_params(spec, s.n_atoms, RngStream(2), zero_residual=True)
    p.out["w"][...] = 0
    cond = make_condition(s, pathway)
    for t in [0.0, 0.3, 0.9]:
        c_in, c_skip, c_out = preconditioning(t, "x", NOISE)
        np.testing.assert_allclose(net_forward(s.coords, t, cond, p, "x", NOISE), c_skip * s.coords, rtol=1e-14)


def test_forward_deterministic_and_shape_checked():
    s = _toy()
    p = init_params(DenoiserSpec(), s.n_atoms, RngStream(3))
    cond = make_condition(s, "pathway-B")
    a = net_forward(s.coords, 0.4, cond, p, "x", NOISE)
    b = net_forward(s.coords, 0.4, cond, p, "x", NOISE)
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ValidationError):
        net_forward(np.zeros((6, 2)), 0.4, cond, p, "x", NOISE)
    with pytest.raises(ValidationError):
        net_forward(np.zeros((7, 3)), 0.4, cond, p, "x", NOISE)


def test_batched_forward_matches_single():
    s = _toy()
    p = init_params(DenoiserSpec(), s.n_atoms, RngStream(3))
    cond = make_condition(s, "pathway-A")
    xb = np.stack([s.coords, s.coords + 1])
    out = net_forward(xb, np.array([0.2, 0.7]), cond, p, "x", NOISE)
    np.testing.assert_allclose(out[1], net_forward(s.coords + 1, 0.7, cond, p, "x", NOISE), rtol=1e-13)


@pytest.mark.parametrize("par", ["x", "v"])
def test_weight_gradient_finite_difference(par):
    """Every weight of a small net, 100+ random probes: central differences vs backprop."""
    gen = np.random.default_rng(4)
    n = 5
    s = gen_toy(ToySpec(kind="polymer-chain", n_atoms=n), RngStream(1))
    spec = DenoiserSpec(parameterization=f"{par}-pred", n_blocks=2, width=6, time_embed=4)
    p = init_params(spec, n, RngStream(5))
    cond = make_condition(s, "pathway-B")
    x = gen.standard_normal((2, n, 3)) * 5
    t = np.array([0.3, 0.6])
    R = gen.standard_normal((2, n, 3))

    def f(params):
        return float(np.sum(R * net_forward(x, t, cond, params, par, NOISE)))

    _, cache = net_forward(x, t, cond, p, par, NOISE, cache=True)
    g = net_backward(R, p, cache)
    names = [name for name, _ in p.named_arrays()]
    probes = 0
    for name, a in p.named_arrays():
        ga = dict(g.named_arrays())[name]
        for idx in np.ndindex(a.shape):
            if probes > 0 and gen.random() > 0.5:
                continue
            h = 1e-4 * max(1.0, abs(a[idx]))
            old = a[idx]
            a[idx] = old + h
            fp = f(p)
            a[idx] = old - h
            fm = f(p)
            a[idx] = old
            fd = (fp - fm) / (2 * h)
            assert abs(fd - ga[idx]) <= 1e-5 * max(abs(fd), abs(ga[idx])) + 1e-8, (name, idx)
            probes += 1
    assert probes >= 100 and "cond.pathway-A" in names
    # the unused pathway map receives no gradient
    assert not np.any(dict(g.named_arrays())["cond.pathway-A"])


def test_prune_blocks():
    s = _toy()
    spec = DenoiserSpec(n_blocks=4)
    p = init_params(spec, s.n_atoms, RngStream(6))
    cond = make_condition(s, "pathway-A")
    with pytest.raises(ValidationError):
        prune_blocks(p, 4)
    with pytest.raises(ValidationError):
        prune_blocks(p, -1)
    assert prune_blocks(p, 0).equals(p)
    q = prune_blocks(p, 3)
    assert q.n_blocks == 1 and np.array_equal(q.blocks[0]["w1"], p.blocks[3]["w1"])
    assert prune_blocks(prune_blocks(p, 1), 2).equals(prune_blocks(p, 3))
    y0 = net_forward(s.coords, 0.5, cond, p, "x", NOISE)
    assert not np.allclose(net_forward(s.coords, 0.5, cond, prune_blocks(p, 2), "x", NOISE), y0)

    z = init_params(spec, s.n_atoms, RngStream(6), zero_residual=True)
    y = net_forward(s.coords, 0.5, cond, z, "x", NOISE)
    for k in range(4):
        assert net_forward(s.coords, 0.5, cond, prune_blocks(z, k), "x", NOISE).tobytes() == y.tobytes()


def test_pathway_features():
    s = gen_toy(ToySpec(kind="complex-with-ligand", n_atoms=6, n_ligand_atoms=2), RngStream(0))
    a = make_condition(s, "pathway-A")
    b = make_condition(s, "pathway-B")
    assert a.features.shape == (8, 8) and b.features.shape == (8, 12)
    assert np.all(b.features[6:, 8 + 1] == 1)  # ligand one-hot column
    with pytest.raises(ValidationError):
        Condition("pathway-C")


def test_checkpoint_round_trip(tmp_path):
    spec = DenoiserSpec(n_blocks=3, width=5)
    p = init_params(spec, 7, RngStream(8))
    data = dump_params(p, spec)
    q, spec2 = load_params(data)
    assert q.equals(p) and spec2 == spec
    assert dump_params(q, spec2) == data
    save_checkpoint(tmp_path / "c.bin", p, spec)
    r, _ = load_checkpoint(tmp_path / "c.bin")
    assert r.equals(p)
    with pytest.raises(ValidationError):
        load_params(b"garbage")
    with pytest.raises(ValidationError):
        load_params(data[:-8])


def test_spec_validation():
    with pytest.raises(ValidationError):
        DenoiserSpec(n_blocks=0)
    with pytest.raises(ValidationError):
        DenoiserSpec(parameterization="eps-pred")
    with pytest.raises(ValidationError):
        DenoiserSpec(width=0)


def test_gmm_equivariance_under_rotation():
    D = GMMDenoiser([1.0], [[0, 0, 0]], 2.0, NOISE)
    x = np.random.default_rng(0).standard_normal((4, 3))
    R = random_rotation(np.random.default_rng(1))
    np.testing.assert_allclose(D(x @ R.T, 0.5), D(x, 0.5) @ R.T, atol=1e-12)
