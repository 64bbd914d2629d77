"""Multi-headed probabilistic dynamics model with a learned context code.

One shared backbone digests a normalized (state, action) pair; a small
encoder turns the recent interaction history into a context vector that
is concatenated to the backbone's last hidden activation right before a
bank of Gaussian heads. Each head predicts the normalized state delta,
so predictions are de-normalized back to raw state space on the way out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn

STD_FLOOR = 1e-6


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float = 0.0
    trajectory_id: int = -1
    step_index: int = 0


@dataclass
class PastWindow:
    """K most recent (state, action) pairs in increasing step order.

    Slots before the episode start are zero-filled; `valid` counts the
    trailing slots that hold real data.
    """

    pairs: np.ndarray  # [K, state_dim + action_dim]
    valid: int


def build_past_window(states: np.ndarray, actions: np.ndarray, index: int,
                      history: int) -> PastWindow:
    """Window of the `history` pairs preceding `index` in one trajectory."""
    width = states.shape[1] + actions.shape[1]
    pairs = np.zeros((history, width))
    valid = min(index, history)
    if valid > 0:
        pairs[history - valid:, :states.shape[1]] = states[index - valid:index]
        pairs[history - valid:, states.shape[1]:] = actions[index - valid:index]
    return PastWindow(pairs, valid)


@dataclass
class Normalizer:
    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    delta_mean: np.ndarray
    delta_std: np.ndarray

    @classmethod
    def identity(cls, state_dim: int, action_dim: int) -> "Normalizer":
        return cls(np.zeros(state_dim), np.ones(state_dim),
                   np.zeros(action_dim), np.ones(action_dim),
                   np.zeros(state_dim), np.ones(state_dim))

    @classmethod
    def fit(cls, states: np.ndarray, actions: np.ndarray,
            next_states: np.ndarray) -> "Normalizer":
        deltas = next_states - states
        return cls(states.mean(axis=0), np.maximum(states.std(axis=0), STD_FLOOR),
                   actions.mean(axis=0), np.maximum(actions.std(axis=0), STD_FLOOR),
                   deltas.mean(axis=0), np.maximum(deltas.std(axis=0), STD_FLOOR))

    def norm_state(self, s):
        return (s - self.state_mean) / self.state_std

    def norm_action(self, a):
        return (a - self.action_mean) / self.action_std

    def norm_delta(self, d):
        return (d - self.delta_mean) / self.delta_std

    def denorm_delta_mean(self, m):
        return m * self.delta_std + self.delta_mean

    def denorm_delta_var(self, v):
        return v * self.delta_std ** 2

    def arrays(self) -> list[np.ndarray]:
        return [self.state_mean, self.state_std, self.action_mean,
                self.action_std, self.delta_mean, self.delta_std]


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    variance: np.ndarray
    head_index: int


@dataclass
class MultiHeadDynamicsModel:
    state_dim: int
    action_dim: int
    history: int
    context_dim: int  # 0 disables the context path entirely
    backbone: nn.DenseNet
    heads: list[nn.GaussianHead]
    encoder: nn.DenseNet | None = None
    reverse_net: nn.DenseNet | None = None
    reverse_head: nn.GaussianHead | None = None
    normalizer: Normalizer = field(default=None)

    def __post_init__(self):
        if self.normalizer is None:
            self.normalizer = Normalizer.identity(self.state_dim, self.action_dim)

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def feature_dim(self) -> int:
        return self.backbone.out_dim + self.context_dim

    @property
    def has_context(self) -> bool:
        return self.context_dim > 0

    def parameters(self) -> list[np.ndarray]:
        params = self.backbone.parameters()
        for head in self.heads:
            params.extend(head.parameters())
        if self.has_context:
            params.extend(self.encoder.parameters())
            params.extend(self.reverse_net.parameters())
            params.extend(self.reverse_head.parameters())
        return params


def build_model(rng: np.random.Generator, *, state_dim: int, action_dim: int,
                n_heads: int, hidden_width: int, hidden_layers: int = 4,
                history: int = 10, context_dim: int = 10,
                encoder_layers: int = 3) -> MultiHeadDynamicsModel:
    pair_dim = state_dim + action_dim
    backbone = nn.init_dense(
        rng, [pair_dim] + [hidden_width] * hidden_layers, ["swish"] * hidden_layers)
    feature_dim = hidden_width + context_dim
    heads = [nn.init_gaussian_head(rng, feature_dim, state_dim)
             for _ in range(n_heads)]
    encoder = reverse_net = reverse_head = None
    if context_dim > 0:
        encoder = nn.init_dense(
            rng,
            [history * pair_dim] + [hidden_width] * encoder_layers + [context_dim],
            ["swish"] * encoder_layers + ["identity"])
        # Mirrored predictor (next_state, action) -> state; exists to give the
        # encoder a second gradient source, shares nothing but the context.
        reverse_net = nn.init_dense(
            rng, [pair_dim] + [hidden_width] * hidden_layers, ["swish"] * hidden_layers)
        reverse_head = nn.init_gaussian_head(rng, feature_dim, state_dim)
    return MultiHeadDynamicsModel(
        state_dim=state_dim, action_dim=action_dim, history=history,
        context_dim=context_dim, backbone=backbone, heads=heads,
        encoder=encoder, reverse_net=reverse_net, reverse_head=reverse_head)


def window_input(model: MultiHeadDynamicsModel, pairs: np.ndarray,
                 valid: np.ndarray) -> np.ndarray:
    """Normalize and mask raw history windows into flat encoder input.

    pairs: [n, K, state_dim + action_dim], valid: [n] counts of real
    trailing slots. Masked slots come out exactly zero, so every
    episode-start window maps to the same encoder input.
    """
    n, k, _ = pairs.shape
    ds = model.state_dim
    norm = np.empty_like(pairs)
    nrm = model.normalizer
    norm[:, :, :ds] = (pairs[:, :, :ds] - nrm.state_mean) / nrm.state_std
    norm[:, :, ds:] = (pairs[:, :, ds:] - nrm.action_mean) / nrm.action_std
    slot = np.arange(k)[None, :]
    mask = slot >= (k - np.asarray(valid)[:, None])
    norm *= mask[:, :, None]
    return norm.reshape(n, k * pairs.shape[2])


def encode_context(model: MultiHeadDynamicsModel, window: PastWindow) -> np.ndarray:
    """Deterministic context code for one history window."""
    if not model.has_context:
        return np.zeros(0)
    flat = window_input(model, window.pairs[None, :, :], np.array([window.valid]))
    return model.encoder.forward(flat[0])


def encode_context_batch(model: MultiHeadDynamicsModel, pairs: np.ndarray,
                         valid: np.ndarray) -> np.ndarray:
    if not model.has_context:
        return np.zeros((pairs.shape[0], 0))
    flat = window_input(model, pairs, valid)
    z, _ = model.encoder.forward_cached(flat)
    return z


def head_features(model: MultiHeadDynamicsModel, states: np.ndarray,
                  actions: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Backbone activation concatenated with the context code, batched."""
    states = np.atleast_2d(states)
    actions = np.atleast_2d(actions)
    x = np.hstack([model.normalizer.norm_state(states),
                   model.normalizer.norm_action(actions)])
    out, _ = model.backbone.forward_cached(x)
    if model.has_context:
        out = np.hstack([out, np.atleast_2d(z)])
    return out


def predict_norm(model: MultiHeadDynamicsModel, head_index: int,
                 states: np.ndarray, actions: np.ndarray, z: np.ndarray):
    """Normalized-delta Gaussian from one head, batched: (mean, log_var)."""
    feats = head_features(model, states, actions, z)
    mean, log_var, _ = model.heads[head_index].forward_cached(feats)
    return mean, log_var


def predict_all_heads(model: MultiHeadDynamicsModel, state: np.ndarray,
                      action: np.ndarray, z: np.ndarray) -> list[GaussianPrediction]:
    """Raw-space next-state Gaussians, one per head."""
    feats = head_features(model, state, action, z)
    nrm = model.normalizer
    state = np.atleast_2d(state)
    preds = []
    for h, head in enumerate(model.heads):
        mean_n, log_var, _ = head.forward_cached(feats)
        mean = state + nrm.denorm_delta_mean(mean_n)
        var = nrm.denorm_delta_var(np.exp(log_var))
        if state.shape[0] == 1:
            preds.append(GaussianPrediction(mean[0], var[0], h))
        else:
            preds.append(GaussianPrediction(mean, var, h))
    return preds


def head_nll(model: MultiHeadDynamicsModel, head_index: int,
             transition: Transition, z: np.ndarray) -> float:
    """Gaussian NLL of one transition's normalized delta under one head."""
    mean, log_var = predict_norm(model, head_index,
                                 transition.state, transition.action, z)
    target = model.normalizer.norm_delta(
        np.atleast_2d(transition.next_state - transition.state))
    return float(nn.nll_rows(mean, log_var, target)[0])
