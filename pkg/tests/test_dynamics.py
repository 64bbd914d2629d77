"""Model plumbing: normalization, history windows, heads, replay buffer."""

import numpy as np
import pytest

from polydyn import dynamics, nn
from polydyn.buffer import ReplayBuffer, as_trajectories
from polydyn.dynamics import (Normalizer, PastWindow, build_model,
                              build_past_window, encode_context,
                              encode_context_batch, predict_all_heads,
                              predict_norm, window_input)

from conftest import specialist_heads_model, tiny_model


# -------------------------------------------------------------- normalizer

def test_normalizer_fit_matches_moments():
    states = np.array([[0.0, 2.0], [2.0, 2.0], [4.0, 2.0]])
    actions = np.array([[1.0], [1.0], [1.0]])
    next_states = states + np.array([[1.0, 0.5], [3.0, 0.5], [5.0, 0.5]])
    n = Normalizer.fit(states, actions, next_states)
    assert np.allclose(n.state_mean, [2.0, 2.0])
    assert np.allclose(n.state_std, [np.sqrt(8.0 / 3.0), dynamics.STD_FLOOR])
    # Constant action/delta columns hit the std floor instead of zero.
    assert np.allclose(n.action_std, [dynamics.STD_FLOOR])
    assert np.allclose(n.delta_mean, [3.0, 0.5])


def test_normalizer_round_trip(rng):
    states = rng.normal(2.0, 3.0, size=(50, 2))
    actions = rng.normal(size=(50, 1))
    next_states = states + rng.normal(size=(50, 2))
    n = Normalizer.fit(states, actions, next_states)
    d = rng.normal(size=(7, 2))
    assert np.allclose(n.denorm_delta_mean(n.norm_delta(d)), d)
    v = rng.uniform(0.1, 2.0, size=(7, 2))
    assert np.allclose(n.denorm_delta_var(v), v * n.delta_std ** 2)


def test_identity_normalizer_is_a_no_op():
    n = Normalizer.identity(2, 1)
    x = np.array([[3.0, -1.0]])
    assert np.array_equal(n.norm_state(x), x)
    assert np.array_equal(n.denorm_delta_mean(x), x)


# ----------------------------------------------------------- past windows

def test_build_past_window_midway():
    states = np.arange(10.0)[:, None]
    actions = -np.arange(10.0)[:, None]
    w = build_past_window(states, actions, index=5, history=3)
    assert w.valid == 3
    assert np.array_equal(w.pairs, [[2.0, -2.0], [3.0, -3.0], [4.0, -4.0]])


def test_build_past_window_near_start():
    states = np.arange(10.0)[:, None]
    actions = -np.arange(10.0)[:, None]
    w = build_past_window(states, actions, index=1, history=3)
    assert w.valid == 1
    assert np.array_equal(w.pairs, [[0.0, 0.0], [0.0, 0.0], [0.0, -0.0]])
    first = build_past_window(states, actions, index=0, history=3)
    assert first.valid == 0
    assert np.array_equal(first.pairs, np.zeros((3, 2)))


def test_window_input_masks_invalid_slots(rng):
    model = tiny_model(rng)
    model.normalizer = Normalizer(
        np.array([5.0, -3.0]), np.array([2.0, 0.5]),
        np.array([1.0]), np.array([4.0]),
        np.zeros(2), np.ones(2))
    pairs = rng.normal(size=(2, 3, 3))
    flat = window_input(model, pairs, np.array([1, 3]))
    rows = flat.reshape(2, 3, 3)
    # Even with nonzero normalizer means, masked slots are exactly zero.
    assert np.array_equal(rows[0, :2], np.zeros((2, 3)))
    assert np.any(rows[0, 2] != 0.0)
    expected = np.concatenate([(pairs[1, 0, :2] - [5.0, -3.0]) / [2.0, 0.5],
                               [(pairs[1, 0, 2] - 1.0) / 4.0]])
    assert np.allclose(rows[1, 0], expected)


def test_empty_windows_share_one_context_code(rng):
    model = tiny_model(rng)
    w1 = PastWindow(rng.normal(size=(3, 3)), 0)  # garbage pairs, zero valid
    w2 = PastWindow(np.zeros((3, 3)), 0)
    z1 = encode_context(model, w1)
    z2 = encode_context(model, w2)
    assert z1.shape == (4,)
    assert np.array_equal(z1, z2)


def test_encode_context_batch_matches_single(rng):
    model = tiny_model(rng)
    pairs = rng.normal(size=(4, 3, 3))
    valid = np.array([0, 1, 2, 3])
    batch = encode_context_batch(model, pairs, valid)
    for i in range(4):
        single = encode_context(model, PastWindow(pairs[i], int(valid[i])))
        assert np.allclose(batch[i], single)


# -------------------------------------------------------------- prediction

def test_specialist_heads_predict_their_modes_exactly():
    model = specialist_heads_model()
    state = np.array([0.3, -0.7])
    action = np.array([0.2, 0.1])
    z = np.zeros(0)
    preds = predict_all_heads(model, state, action, z)
    from polydyn.envs import TOYMODES_A
    for k, pred in enumerate(preds):
        assert pred.head_index == k
        assert np.allclose(pred.mean, TOYMODES_A[k] @ state + action,
                           atol=1e-12)
        assert np.allclose(pred.variance, 1e-4, rtol=1e-3)


def test_raw_predictions_denormalize_the_norm_head(rng):
    model = tiny_model(rng)
    model.normalizer = Normalizer(
        rng.normal(size=2), rng.uniform(0.5, 2.0, size=2),
        rng.normal(size=1), rng.uniform(0.5, 2.0, size=1),
        rng.normal(size=2), rng.uniform(0.5, 2.0, size=2))
    state = rng.normal(size=2)
    action = rng.normal(size=1)
    z = rng.normal(size=4)
    mean_n, log_var = predict_norm(model, 1, state, action, z)
    pred = predict_all_heads(model, state, action, z)[1]
    assert np.allclose(pred.mean, state + model.normalizer.denorm_delta_mean(mean_n[0]))
    assert np.allclose(pred.variance,
                       model.normalizer.denorm_delta_var(np.exp(log_var[0])))


def test_heads_are_independent(rng):
    model = tiny_model(rng, n_heads=3)
    state, action, z = rng.normal(size=2), rng.normal(size=1), rng.normal(size=4)
    before = predict_norm(model, 0, state, action, z)
    model.heads[1].mean_layer.weight += 10.0
    model.heads[2].var_layer.bias -= 5.0
    after = predict_norm(model, 0, state, action, z)
    assert np.array_equal(before[0], after[0])
    assert np.array_equal(before[1], after[1])


def test_contextless_model_has_no_encoder(rng):
    model = build_model(rng, state_dim=2, action_dim=1, n_heads=2,
                        hidden_width=8, hidden_layers=2, history=3,
                        context_dim=0)
    assert not model.has_context
    assert model.encoder is None
    z = encode_context(model, PastWindow(np.zeros((3, 3)), 0))
    assert z.shape == (0,)
    preds = predict_all_heads(model, np.zeros(2), np.zeros(1), z)
    assert len(preds) == 2
    # backbone (2 layers) + 2 heads, nothing else
    assert len(model.parameters()) == 4 + 8


def test_parameter_count_with_context(rng):
    model = tiny_model(rng)  # 2 backbone layers, 2 heads, 2-layer encoder
    # backbone 4 + heads 8 + encoder 4 + reverse net 4 + reverse head 4
    assert len(model.parameters()) == 24
    assert model.feature_dim == model.backbone.out_dim + model.context_dim


def test_head_nll_is_the_gaussian_nll_of_the_normalized_delta(rng):
    model = tiny_model(rng)
    tr = dynamics.Transition(rng.normal(size=2), rng.normal(size=1),
                             rng.normal(size=2))
    z = np.zeros(4)
    mean, log_var = predict_norm(model, 0, tr.state, tr.action, z)
    expected = nn.gaussian_nll(mean[0], np.exp(log_var[0]),
                               model.normalizer.norm_delta(tr.next_state - tr.state))
    assert np.isclose(dynamics.head_nll(model, 0, tr, z), expected)


# ------------------------------------------------------------------ buffer

def test_buffer_assigns_increasing_ids():
    buf = ReplayBuffer()
    t0 = buf.add(np.zeros((4, 2)), np.zeros((4, 1)), np.zeros((4, 2)),
                 np.zeros(4), label=0.5)
    t1 = buf.add(np.zeros((6, 2)), np.zeros((6, 1)), np.zeros((6, 2)),
                 np.zeros(6))
    assert (t0.trajectory_id, t1.trajectory_id) == (0, 1)
    assert len(buf) == 2
    assert buf.n_transitions == 10
    assert t0.label == 0.5
    assert np.isnan(t1.label)


def test_buffer_rejects_ragged_trajectories():
    buf = ReplayBuffer()
    with pytest.raises(ValueError):
        buf.add(np.zeros((4, 2)), np.zeros((3, 1)), np.zeros((4, 2)), np.zeros(4))


def test_buffer_all_arrays_concatenates():
    buf = ReplayBuffer()
    buf.add(np.ones((2, 2)), np.ones((2, 1)), np.ones((2, 2)), np.ones(2))
    buf.add(2 * np.ones((3, 2)), np.ones((3, 1)), np.ones((3, 2)), np.ones(3))
    states, actions, next_states = buf.all_arrays()
    assert states.shape == (5, 2)
    assert np.array_equal(states[:2], np.ones((2, 2)))
    empty = ReplayBuffer()
    with pytest.raises(ValueError):
        empty.all_arrays()


def test_total_reward_and_as_trajectories():
    buf = ReplayBuffer()
    traj = buf.add(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)),
                   np.array([1.0, 2.0, 3.0]))
    assert traj.total_reward == 6.0
    assert as_trajectories(buf) is buf.trajectories
    assert as_trajectories([traj]) == [traj]
