import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import naive_mlp, rel_err
from seponet import nets
from seponet.nets import MlpParams, MissingDerivativeError, UnsupportedOrderError
from seponet.tensor import DimensionError


def _rng(seed=0):
    return np.random.default_rng(seed)


def zero_branch(model):
    (W, b) = model.branch.layers[-1]
    layers = model.branch.layers[:-1] + ((np.zeros_like(W), np.zeros_like(b)),)
    return dataclasses.replace(model, branch=MlpParams(layers, model.branch.activation))


def sine_layer(w, c):
    return MlpParams(((np.array([[w]]), np.array([c])), (np.array([[1.0]]), np.array([0.0]))), "sine")


# ---------------------------------------------------------------------------
# MLPs


def test_depth_zero_is_affine():
    p = nets.init_mlp(_rng(), [3, 4], "tanh")
    x = _rng(1).normal(size=(5, 3))
    W, b = p.layers[0]
    np.testing.assert_allclose(nets.mlp_forward(p, x), x @ W.T + b, atol=1e-15)
    assert p.depth == 0


def test_single_sine_layer_at_zero():
    p = MlpParams(((np.array([[2.5]]), np.array([0.0])), (np.array([[1.0]]), np.array([0.0]))), "sine")
    assert nets.mlp_forward(p, np.zeros((1, 1)))[0, 0] == 0.0


def test_mlp_matches_straight_line_oracle():
    p = nets.init_mlp(_rng(2), [3, 16, 16, 16, 4], "tanh")
    x = _rng(3).normal(size=(6, 3))
    assert np.max(np.abs(nets.mlp_forward(p, x) - naive_mlp(p, x))) < 1e-13


def test_mlp_width_mismatch():
    p = nets.init_mlp(_rng(), [3, 4, 2], "tanh")
    with pytest.raises(DimensionError):
        nets.mlp_forward(p, np.ones((2, 4)))


def test_mlp_params_chain_validation():
    with pytest.raises(DimensionError):
        MlpParams(((np.ones((4, 3)), np.ones(4)), (np.ones((2, 5)), np.ones(2))), "tanh")


def test_init_bounds():
    p = nets.init_mlp(_rng(), [1, 50, 50, 8], "sine")
    (W0, _), (W1, _), _ = p.layers
    assert np.abs(W0).max() <= 1.0
    assert np.abs(W1).max() <= np.sqrt(6 / 50)
    q = nets.init_mlp(_rng(), [10, 30, 5], "tanh")
    assert np.abs(q.layers[0][0]).max() <= np.sqrt(6 / 40) and not np.any(q.layers[0][1])


# ---------------------------------------------------------------------------
# SepONet


def test_seponet_zero_branch():
    model = zero_branch(nets.init_seponet(_rng(), 8, 2, 4, 10, 2))
    out = nets.seponet_forward(model, _rng(1).normal(size=(3, 8)), [np.linspace(0, 1, 5), np.linspace(0, 1, 4)])
    np.testing.assert_array_equal(out, np.zeros((3, 5, 4)))


def test_seponet_rank_one_loop():
    model = nets.init_seponet(_rng(4), 6, 2, 1, 7, 2)
    u = _rng(5).normal(size=(2, 6))
    x, y = np.linspace(0, 1, 4), np.linspace(0, 1, 3)
    out = nets.seponet_forward(model, u, [x, y])
    beta = naive_mlp(model.branch, u)
    for f in range(2):
        for i in range(4):
            for j in range(3):
                ref = beta[f, 0] * naive_mlp(model.trunks[0], [[x[i]]])[0, 0] * naive_mlp(model.trunks[1], [[y[j]]])[0, 0]
                assert abs(out[f, i, j] - ref) < 1e-13


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("r", [1, 8, 32])
def test_grid_equals_pointwise(d, r):
    model = nets.init_seponet(_rng(d * 100 + r), 10, d, r, 12, 3)
    u = _rng(7).normal(size=(3, 10))
    axes = [np.sort(_rng(8 + a).uniform(size=4 + a)) for a in range(d)]
    grid = nets.seponet_forward(model, u, axes)
    worst = 0.0
    for idx in np.ndindex(*[a.size for a in axes]):
        pt = [axes[a][i] for a, i in enumerate(idx)]
        worst = max(worst, np.max(np.abs(grid[(slice(None),) + idx] - nets.seponet_pointwise(model, u, pt))))
    assert worst < 1e-12


def test_seponet_axis_count_error():
    model = nets.init_seponet(_rng(), 4, 2, 2, 5, 1)
    with pytest.raises(ValueError):
        nets.seponet_forward(model, np.ones((1, 4)), [np.linspace(0, 1, 3)])


def test_constant_trunk_zero_derivatives():
    model = nets.init_seponet(_rng(), 4, 2, 3, 6, 2)
    trunks = []
    for t in model.trunks:
        W, b = t.layers[0]
        trunks.append(MlpParams(((np.zeros_like(W), b),) + t.layers[1:], t.activation))
    model = dataclasses.replace(model, trunks=tuple(trunks))
    f = nets.seponet_field_with_derivs(model, np.ones((2, 4)), [np.linspace(0, 1, 5)] * 2,
                                       [(0, 1), (0, 2), (1, 1), (1, 2)])
    for key in f.derivs:
        np.testing.assert_array_equal(f.derivs[key], 0.0)


def test_single_sine_trunks_analytic_derivative():
    w, c, v, e = 1.3, 0.2, 2.1, -0.4
    model = nets.init_seponet(_rng(), 4, 2, 1, 5, 1)
    model = dataclasses.replace(model, trunks=(sine_layer(w, c), sine_layer(v, e)))
    u = _rng(1).normal(size=(2, 4))
    x, y = np.linspace(0, 1, 6), np.linspace(0, 1, 5)
    f = nets.seponet_field_with_derivs(model, u, [x, y], [(0, 1)])
    beta = nets.mlp_forward(model.branch, u)[:, 0]
    ref = beta[:, None, None] * (w * np.cos(w * x + c))[None, :, None] * np.sin(v * y + e)[None, None, :]
    np.testing.assert_allclose(f.d(0, 1), ref, atol=1e-14)


def test_seponet_second_derivative_vs_fd():
    model = nets.init_seponet(_rng(11), 32, 2, 16, 25, 5)
    u = _rng(12).normal(size=(2, 32))
    x, t = np.linspace(0.1, 0.9, 7), np.linspace(0.1, 0.9, 6)
    f = nets.seponet_field_with_derivs(model, u, [x, t], [(0, 1), (0, 2), (1, 1), (1, 2)])
    h = 1e-4
    fwd = lambda xx, tt: nets.seponet_forward(model, u, [xx, tt])
    for axis in (0, 1):
        dp = [x + h, t] if axis == 0 else [x, t + h]
        dm = [x - h, t] if axis == 0 else [x, t - h]
        d2 = (fwd(*dp) - 2 * fwd(x, t) + fwd(*dm)) / h**2
        assert rel_err(f.d(axis, 2), d2) < 1e-5
        h1 = 1e-5
        dp = [x + h1, t] if axis == 0 else [x, t + h1]
        dm = [x - h1, t] if axis == 0 else [x, t - h1]
        assert rel_err(f.d(axis, 1), (fwd(*dp) - fwd(*dm)) / (2 * h1)) < 1e-6


def test_order_three_unsupported():
    model = nets.init_seponet(_rng(), 4, 2, 2, 5, 1)
    with pytest.raises(UnsupportedOrderError):
        nets.seponet_field_with_derivs(model, np.ones((1, 4)), [np.linspace(0, 1, 3)] * 2, [(0, 3)])


def test_missing_derivative():
    model = nets.init_seponet(_rng(), 4, 2, 2, 5, 1)
    f = nets.seponet_field_with_derivs(model, np.ones((1, 4)), [np.linspace(0, 1, 3)] * 2, [(0, 1)])
    with pytest.raises(MissingDerivativeError):
        f.d(1, 2)


def test_rank_additivity():
    small = nets.init_seponet(_rng(20), 6, 2, 3, 8, 2)
    big = nets.init_seponet(_rng(21), 6, 2, 6, 8, 2)

    def widen(p_small, p_big, zero_extra):
        (W, b) = p_small.layers[-1]
        (Wb, bb) = p_big.layers[-1]
        Wn = np.vstack([W, np.zeros_like(Wb[3:]) if zero_extra else Wb[3:]])
        bn = np.concatenate([b, np.zeros_like(bb[3:]) if zero_extra else bb[3:]])
        return MlpParams(p_small.layers[:-1] + ((Wn, bn),), p_small.activation)

    wide = nets.SepOnetModel(widen(small.branch, big.branch, True),
                             tuple(widen(s, b, False) for s, b in zip(small.trunks, big.trunks)))
    u = _rng(22).normal(size=(3, 6))
    axes = [np.linspace(0, 1, 5), np.linspace(0, 1, 4)]
    np.testing.assert_array_equal(nets.seponet_forward(wide, u, axes), nets.seponet_forward(small, u, axes))


@given(st.permutations(range(5)))
def test_permutation_equivariance(perm):
    model = nets.init_seponet(_rng(30), 6, 2, 4, 8, 2)
    u = _rng(31).normal(size=(5, 6))
    axes = [np.linspace(0, 1, 4), np.linspace(0, 1, 3)]
    perm = list(perm)
    np.testing.assert_array_equal(nets.seponet_forward(model, u[perm], axes),
                                  nets.seponet_forward(model, u, axes)[perm])


# ---------------------------------------------------------------------------
# PI-DeepONet


def test_deeponet_zero_branch():
    model = zero_branch(nets.init_deeponet(_rng(), 8, 2, 4, 10, 2))
    out = nets.deeponet_forward(model, np.ones((2, 8)), _rng(1).uniform(size=(7, 2)))
    np.testing.assert_array_equal(out, 0.0)


def test_deeponet_rank_one_loop():
    model = nets.init_deeponet(_rng(40), 5, 2, 1, 6, 2)
    u = _rng(41).normal(size=(2, 5))
    pts = _rng(42).uniform(size=(4, 2))
    out = nets.deeponet_forward(model, u, pts)
    beta = naive_mlp(model.branch, u)
    tau = naive_mlp(model.trunk, pts)
    for f in range(2):
        for p in range(4):
            assert abs(out[f, p] - beta[f, 0] * tau[p, 0]) < 1e-13


def test_deeponet_point_width_error():
    model = nets.init_deeponet(_rng(), 5, 2, 2, 6, 1)
    with pytest.raises(DimensionError):
        nets.deeponet_forward(model, np.ones((1, 5)), np.ones((3, 3)))


def test_deeponet_matches_seponet_with_forced_embeddings():
    """Trunk embeddings chosen so both decoders represent the same field."""
    a, b, c = 1.5, -0.7, 0.3
    base = nets.init_seponet(_rng(50), 5, 2, 2, 6, 2)
    lin = lambda W, bias: MlpParams(((np.array(W, float), np.array(bias, float)),), "sine")
    sep = dataclasses.replace(base, trunks=(lin([[a], [0.0]], [c, 1.0]), lin([[0.0], [b]], [1.0, 0.0])))
    deep = nets.DeepOnetModel(base.branch, lin([[a, 0.0], [0.0, b]], [c, 0.0]))
    u = _rng(51).normal(size=(3, 5))
    axes = [np.linspace(0, 1, 6), np.linspace(0, 1, 4)]
    grid = nets.seponet_forward(sep, u, axes)
    pts = nets.deeponet_forward(deep, u, nets.meshgrid_points(axes)).reshape(3, 6, 4)
    np.testing.assert_allclose(grid, pts, atol=1e-14)


def test_deeponet_constant_trunk_zero_derivatives():
    model = nets.init_deeponet(_rng(), 4, 2, 3, 6, 2)
    W, b = model.trunk.layers[0]
    model = dataclasses.replace(model, trunk=MlpParams(((np.zeros_like(W), b),) + model.trunk.layers[1:], "sine"))
    f = nets.deeponet_field_with_derivs(model, np.ones((2, 4)), _rng(1).uniform(size=(5, 2)), [(0, 1), (1, 2)])
    for v in f.derivs.values():
        np.testing.assert_array_equal(v, 0.0)


def test_deeponet_single_sine_analytic():
    w1, w2, c = 1.1, -0.6, 0.25
    base = nets.init_deeponet(_rng(60), 4, 2, 1, 5, 1)
    trunk = MlpParams(((np.array([[w1, w2]]), np.array([c])), (np.array([[1.0]]), np.array([0.0]))), "sine")
    model = dataclasses.replace(base, trunk=trunk)
    u = _rng(61).normal(size=(2, 4))
    pts = _rng(62).uniform(size=(6, 2))
    f = nets.deeponet_field_with_derivs(model, u, pts, [(0, 1), (0, 2), (1, 1)])
    beta = nets.mlp_forward(model.branch, u)[:, 0]
    z = pts @ np.array([w1, w2]) + c
    np.testing.assert_allclose(f.d(0, 1), beta[:, None] * w1 * np.cos(z)[None], atol=1e-14)
    np.testing.assert_allclose(f.d(0, 2), -beta[:, None] * w1**2 * np.sin(z)[None], atol=1e-14)
    np.testing.assert_allclose(f.d(1, 1), beta[:, None] * w2 * np.cos(z)[None], atol=1e-14)


@pytest.mark.parametrize("pairwise", [False, True])
def test_deeponet_derivatives_vs_fd(pairwise):
    model = nets.init_deeponet(_rng(70), 8, 2, 8, 16, 3)
    u = _rng(71).normal(size=(2, 8))
    pts = _rng(72).uniform(0.1, 0.9, size=(6, 2))
    f = nets.deeponet_field_with_derivs(model, u, pts, [(0, 1), (0, 2), (1, 1), (1, 2)], pairwise=pairwise)
    for axis in (0, 1):
        e = np.zeros(2)
        e[axis] = 1.0
        g = lambda p: nets.deeponet_forward(model, u, p)
        h = 1e-5
        assert rel_err(f.d(axis, 1), (g(pts + h * e) - g(pts - h * e)) / (2 * h)) < 1e-6
        h = 1e-4
        assert rel_err(f.d(axis, 2), (g(pts + h * e) - 2 * g(pts) + g(pts - h * e)) / h**2) < 1e-5


# ---------------------------------------------------------------------------
# serialisation


@pytest.mark.parametrize("kind", ["seponet", "pideeponet"])
def test_save_load_roundtrip(tmp_path, kind):
    init = nets.init_seponet if kind == "seponet" else nets.init_deeponet
    model = init(_rng(80), 6, 3, 4, 7, 2)
    path = tmp_path / "m.sepm"
    nets.save_model(path, model, seed=80)
    loaded, header = nets.load_model(path)
    assert header["architecture"]["kind"] == kind and header["seed"] == 80
    assert header["architecture"]["r"] == 4 and header["architecture"]["d"] == 3
    np.testing.assert_array_equal(nets.flatten(loaded), nets.flatten(model))
    raw = path.read_bytes()
    assert raw[:4] == b"SEPM"
    assert len(raw) - 12 - int.from_bytes(raw[4:12], "little") == 8 * nets.n_params(model)
