"""Unit tests for the dense-net substrate.

Expected numbers are frozen from closed forms: swish(1) = 1/(1+e^-1),
unit-Gaussian NLL = 0.5*ln(2*pi), and the first Adam step from zero
moment state which moves a parameter by -lr/(1+eps).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polydyn import nn

from conftest import finite_diff_grads, max_grad_err

GRAD_TOL = 1e-4


def test_swish_frozen_values():
    assert nn.swish(0.0) == 0.0
    assert np.isclose(nn.swish(1.0), 0.7310585786300049, rtol=0, atol=1e-15)
    # Saturating tail: x * sigmoid(x) -> 0 from below as x -> -inf.
    assert abs(nn.swish(-40.0)) < 1e-12
    assert np.isclose(nn.swish(1e3), 1e3)


def test_sigmoid_is_stable_at_extremes():
    vals = nn.sigmoid(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
    assert np.all(np.isfinite(vals))
    assert np.all((vals >= 0.0) & (vals <= 1.0))
    assert vals[2] == 0.5


@pytest.mark.parametrize("x", [-5.0, -1.0, -0.1, 0.0, 0.3, 2.0, 8.0])
def test_swish_grad_matches_finite_difference(x):
    h = 1e-6
    fd = (nn.swish(x + h) - nn.swish(x - h)) / (2 * h)
    assert abs(nn.swish_grad(x) - fd) < 1e-8


def test_softplus_and_log_softplus():
    assert np.isclose(nn.softplus(0.0), np.log(2.0))
    assert np.isclose(nn.softplus(40.0), 40.0)
    # Deep negative branch: softplus(x) ~ exp(x), so log softplus(x) ~ x.
    assert nn.log_softplus(-50.0) == -50.0
    assert np.isclose(nn.log_softplus(0.0), np.log(np.log(2.0)))
    for x in [-30.0, -4.0, 0.5, 12.0]:
        assert np.isclose(nn.log_softplus(x), np.log(nn.softplus(x)))


@pytest.mark.parametrize("x", [-40.0, -10.0, -2.0, 0.0, 1.5, 25.0])
def test_log_softplus_grad_matches_finite_difference(x):
    h = 1e-6
    fd = (nn.log_softplus(x + h) - nn.log_softplus(x - h)) / (2 * h)
    assert abs(nn.log_softplus_grad(x) - fd) < 1e-6


def test_bound_log_var_window():
    grid = np.linspace(-60.0, 60.0, 241)
    out = nn.bound_log_var(grid)
    assert np.all(out >= nn.LOG_VAR_MIN)
    assert np.all(out <= nn.LOG_VAR_MAX)
    assert np.all(np.diff(out) >= 0.0)
    # Near the middle the squash is close to the identity; the residual
    # comes from the far hinge at distance ~9 in log space.
    assert abs(float(nn.bound_log_var(0.0))) < 5e-4
    assert float(nn.bound_log_var(1e6)) == nn.LOG_VAR_MAX
    assert float(nn.bound_log_var(-1e6)) == nn.LOG_VAR_MIN


@pytest.mark.parametrize("x", [-15.0, -6.0, -1.0, 0.0, 2.0, 7.5])
def test_bound_log_var_grad_matches_finite_difference(x):
    h = 1e-6
    fd = (nn.bound_log_var(x + h) - nn.bound_log_var(x - h)) / (2 * h)
    assert abs(float(nn.bound_log_var_grad(x)) - fd) < 1e-6


def test_bound_log_var_grad_is_zero_when_saturated():
    assert float(nn.bound_log_var_grad(1e6)) == 0.0
    assert float(nn.bound_log_var_grad(-1e6)) == 0.0


def test_head_variance_stays_in_bounds_for_huge_inputs(rng):
    head = nn.init_gaussian_head(rng, 4, 3)
    head.var_layer.weight[:] = rng.uniform(-50.0, 50.0, size=(3, 4))
    for scale in (1e3, -1e3):
        f = np.full(4, scale)
        mean, var = head.forward(f)
        assert np.all(np.isfinite(mean))
        # exp(log(1e-8)) lands one ulp under 1e-8; the bound is exact in
        # log space, so allow that ulp here.
        assert np.all(var >= nn.VAR_MIN * (1.0 - 1e-12))
        assert np.all(var <= nn.VAR_MAX * (1.0 + 1e-12))


def test_gaussian_nll_frozen_values():
    assert np.isclose(nn.gaussian_nll([0.0], [1.0], [0.0]),
                      0.9189385332046727, rtol=0, atol=1e-15)
    assert np.isclose(nn.gaussian_nll([0.0], [1.0], [1.0]),
                      1.4189385332046727, rtol=0, atol=1e-15)
    assert np.isclose(nn.gaussian_nll([0.0], [2.0], [0.0]),
                      1.2655121234846454, rtol=0, atol=1e-15)
    # Independent dims add up.
    assert np.isclose(nn.gaussian_nll([0.0, 0.0], [1.0, 1.0], [0.0, 0.0]),
                      2 * 0.9189385332046727)


def test_gaussian_nll_validates_inputs():
    with pytest.raises(nn.ShapeError):
        nn.gaussian_nll([0.0, 0.0], [1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        nn.gaussian_nll([0.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        nn.gaussian_nll([0.0], [-1.0], [0.0])


@given(target=st.floats(-20.0, 20.0), delta=st.floats(0.01, 10.0),
       var=st.floats(0.1, 50.0))
@settings(max_examples=40, deadline=None)
def test_nll_is_minimized_at_the_target(target, delta, var):
    at_target = nn.gaussian_nll([target], [var], [target])
    assert nn.gaussian_nll([target + delta], [var], [target]) > at_target
    assert nn.gaussian_nll([target - delta], [var], [target]) > at_target


def test_nll_rows_agrees_with_scalar_form(rng):
    mean = rng.normal(size=(5, 3))
    log_var = rng.uniform(-2.0, 2.0, size=(5, 3))
    target = rng.normal(size=(5, 3))
    rows = nn.nll_rows(mean, log_var, target)
    for i in range(5):
        ref = nn.gaussian_nll(mean[i], np.exp(log_var[i]), target[i])
        assert np.isclose(rows[i], ref)
    assert np.isclose(rows.sum(), nn.gaussian_nll(mean, np.exp(log_var), target))


def test_nll_rows_backward_matches_finite_difference(rng):
    mean = rng.normal(size=(4, 3))
    log_var = rng.uniform(-1.5, 1.5, size=(4, 3))
    target = rng.normal(size=(4, 3))
    d_rows = rng.uniform(0.1, 2.0, size=4)

    def loss():
        return float(np.sum(d_rows * nn.nll_rows(mean, log_var, target)))

    d_mean, d_log_var = nn.nll_rows_backward(mean, log_var, target, d_rows)
    fd = finite_diff_grads(loss, [mean, log_var])
    assert max_grad_err([d_mean, d_log_var], fd) < GRAD_TOL


def test_dense_layer_validation():
    with pytest.raises(ValueError):
        nn.DenseLayer(np.zeros((2, 3)), np.zeros(2), "tanh")
    with pytest.raises(nn.ShapeError):
        nn.DenseLayer(np.zeros((2, 3)), np.zeros(3))


def test_dense_net_shape_checks(rng):
    net = nn.init_dense(rng, [3, 5, 2], ["swish", "identity"])
    with pytest.raises(nn.ShapeError):
        net.forward(np.zeros(4))
    y = net.forward(np.zeros(3))
    assert y.shape == (2,)
    yb = net.forward(np.zeros((7, 3)))
    assert yb.shape == (7, 2)
    assert np.allclose(yb[0], y)


def test_init_layer_distribution(rng):
    layer = nn.init_layer(rng, 16, 8, "swish")
    limit = 1.0 / 4.0
    assert np.all(np.abs(layer.weight) <= limit)
    assert np.all(layer.bias == 0.0)
    again = nn.init_layer(np.random.default_rng(7), 16, 8)
    twice = nn.init_layer(np.random.default_rng(7), 16, 8)
    assert np.array_equal(again.weight, twice.weight)


def test_dense_backward_matches_finite_difference(rng):
    net = nn.init_dense(rng, [3, 6, 5, 2], ["swish", "swish", "identity"])
    x = rng.normal(size=(4, 3))
    proj = rng.normal(size=(4, 2))

    def loss():
        out, _ = net.forward_cached(x)
        return float(np.sum(proj * out))

    out, cache = net.forward_cached(x)
    grads, d_in = net.backward(cache, proj)
    fd = finite_diff_grads(loss, net.parameters() + [x])
    assert max_grad_err(grads + [d_in], fd) < GRAD_TOL


def test_head_backward_matches_finite_difference(rng):
    head = nn.init_gaussian_head(rng, 5, 2)
    f = rng.normal(size=(3, 5))
    w_mean = rng.normal(size=(3, 2))
    w_lv = rng.normal(size=(3, 2))

    def loss():
        mean, log_var, _ = head.forward_cached(f)
        return float(np.sum(w_mean * mean) + np.sum(w_lv * log_var))

    mean, log_var, cache = head.forward_cached(f)
    grads, d_f = head.backward(cache, w_mean, w_lv)
    fd = finite_diff_grads(loss, head.parameters() + [f])
    assert max_grad_err(grads + [d_f], fd) < GRAD_TOL


def test_net_head_nll_composite_gradcheck(rng):
    """End-to-end chain: net -> head -> NLL, backprop vs finite differences."""
    net = nn.init_dense(rng, [4, 6, 5], ["swish", "swish"])
    head = nn.init_gaussian_head(rng, 5, 2)
    x = rng.normal(size=(6, 4))
    target = rng.normal(size=(6, 2))
    weights = np.full(6, 1.0 / 6.0)

    def loss():
        feats, _ = net.forward_cached(x)
        mean, log_var, _ = head.forward_cached(feats)
        return float(np.sum(weights * nn.nll_rows(mean, log_var, target)))

    feats, net_cache = net.forward_cached(x)
    mean, log_var, head_cache = head.forward_cached(feats)
    d_mean, d_log_var = nn.nll_rows_backward(mean, log_var, target, weights)
    head_grads, d_feats = head.backward(head_cache, d_mean, d_log_var)
    net_grads, _ = net.backward(net_cache, d_feats)
    fd = finite_diff_grads(loss, net.parameters() + head.parameters())
    assert max_grad_err(net_grads + head_grads, fd) < GRAD_TOL


def test_adam_first_step_frozen_value():
    p = [np.zeros(1)]
    state = nn.init_adam(p, lr=1e-3)
    nn.adam_step(p, [np.ones(1)], state)
    # Bias correction makes the first step exactly -lr/(1 + eps).
    assert np.isclose(p[0][0], -1e-3, rtol=1e-6)
    assert state.step == 1


def test_adam_zero_grad_is_a_no_op():
    p = [np.full(3, 0.7)]
    state = nn.init_adam(p)
    nn.adam_step(p, [np.zeros(3)], state)
    assert np.array_equal(p[0], np.full(3, 0.7))


def test_adam_is_deterministic(rng):
    def run():
        local = np.random.default_rng(3)
        params = [local.normal(size=(2, 3)), local.normal(size=3)]
        state = nn.init_adam(params, lr=1e-2)
        for _ in range(5):
            grads = [np.sin(params[0]), np.cos(params[1])]
            nn.adam_step(params, grads, state)
        return params

    a, b = run(), run()
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_adam_rejects_misaligned_state():
    p = [np.zeros(2)]
    state = nn.init_adam(p)
    with pytest.raises(nn.ShapeError):
        nn.adam_step(p, [np.zeros(2), np.zeros(1)], state)
    with pytest.raises(nn.ShapeError):
        nn.adam_step(p, [np.zeros(3)], state)


def test_layout_roundtrip(rng):
    net = nn.init_dense(rng, [3, 4, 2], ["swish", "identity"])
    rebuilt = nn.dense_from_layout(nn.net_layout(net))
    assert [l.activation for l in rebuilt.layers] == ["swish", "identity"]
    for mine, theirs in zip(net.parameters(), rebuilt.parameters()):
        assert mine.shape == theirs.shape

    head = nn.init_gaussian_head(rng, 7, 3)
    rebuilt_head = nn.head_from_layout(nn.head_layout(head))
    assert rebuilt_head.in_dim == 7
    assert rebuilt_head.out_dim == 3
