"""Model-predictive control: adaptive head selection plus CEM planning.

The planner never sees the true dynamics parameter. Before every real
step it picks, per ensemble member, the head whose mean predictions best
explain the recent real transitions, then optimizes an action sequence
by the cross-entropy method against particle rollouts of the model.
Rewards come from the environment family's ground-truth reward function
evaluated at imagined states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (MultiHeadDynamicsModel, PastWindow, Transition,
                       encode_context_batch)


@dataclass
class CemConfig:
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int = 30
    candidates: int = 200
    iterations: int = 5
    elite_frac: float = 0.1
    particles: int = 20
    warm_start: bool = True
    std_floor: float = 1e-3

    def __post_init__(self):
        self.action_low = np.asarray(self.action_low, dtype=np.float64)
        self.action_high = np.asarray(self.action_high, dtype=np.float64)
        if self.horizon < 1 or self.candidates < 2 or self.iterations < 1:
            raise ValueError("CEM horizon/candidates/iterations out of range")
        if self.elite_count < 2:
            raise ValueError("elite fraction too small: need at least 2 elites")
        if self.particles < 1:
            raise ValueError("need at least one particle")

    @property
    def elite_count(self) -> int:
        return math.ceil(self.elite_frac * self.candidates)

    @property
    def action_dim(self) -> int:
        return self.action_low.shape[0]


@dataclass
class HeadSelection:
    """Per-ensemble-member head choice and the window size that drove it."""

    heads: np.ndarray  # [n_members]
    window: int = 0

    @classmethod
    def default(cls, n_members: int) -> "HeadSelection":
        return cls(np.zeros(n_members, dtype=np.int64), 0)


def select_head(model: MultiHeadDynamicsModel,
                recent: list[tuple[Transition, PastWindow]]) -> int:
    """Head whose mean predictions have the least summed MSE on the window.

    An empty window falls back to head 0. Ties go to the lowest index.
    """
    if not recent:
        return 0
    states = np.stack([tr.state for tr, _ in recent])
    actions = np.stack([tr.action for tr, _ in recent])
    targets = np.stack([tr.next_state for tr, _ in recent])
    pairs = np.stack([w.pairs for _, w in recent])
    valid = np.array([w.valid for _, w in recent])
    z = encode_context_batch(model, pairs, valid)
    feats = _features(model, states, actions, z)
    nrm = model.normalizer
    errors = np.empty(model.n_heads)
    for h, head in enumerate(model.heads):
        mean_n, _, _ = head.forward_cached(feats)
        pred = states + nrm.denorm_delta_mean(mean_n)
        errors[h] = np.mean((targets - pred) ** 2, axis=1).sum()
    return int(np.argmin(errors))


def select_heads(models: list[MultiHeadDynamicsModel],
                 recent: list[tuple[Transition, PastWindow]]) -> HeadSelection:
    heads = np.array([select_head(m, recent) for m in models], dtype=np.int64)
    return HeadSelection(heads, len(recent))


def _features(model, states, actions, z):
    nrm = model.normalizer
    x = np.hstack([nrm.norm_state(states), nrm.norm_action(actions)])
    out, _ = model.backbone.forward_cached(x)
    if model.has_context:
        out = np.hstack([out, z])
    return out


def _predict_sample(model, head_indices, states, actions, z, noise,
                    average_heads: bool):
    """Sample next states for rows that all belong to one model."""
    feats = _features(model, states, actions, z)
    if average_heads:
        means = []
        var = None
        for head in model.heads:
            mean_n, lv, _ = head.forward_cached(feats)
            means.append(mean_n)
            var = np.exp(lv) if var is None else var + np.exp(lv)
        mean_n = np.mean(means, axis=0)
        var_n = var / model.n_heads
    else:
        head = model.heads[int(head_indices)]
        mean_n, lv, _ = head.forward_cached(feats)
        var_n = np.exp(lv)
    delta_n = mean_n + np.sqrt(var_n) * noise
    nrm = model.normalizer
    return states + nrm.denorm_delta_mean(delta_n)


def _score_candidates(models, selection: HeadSelection, state, candidates,
                      reward_fn, particles: int, rng, window_pairs,
                      window_valid: int, particle_rngs=None,
                      average_heads: bool = False) -> np.ndarray:
    n_cand, horizon, action_dim = candidates.shape
    n_members = len(models)
    rows = n_cand * particles
    ds = models[0].state_dim
    k = models[0].history

    if particle_rngs is not None:
        if len(particle_rngs) != particles:
            raise ValueError("need one generator per particle")
        per_particle = np.array([int(g.integers(n_members)) for g in particle_rngs])
        members = np.tile(per_particle, n_cand)
    else:
        members = rng.integers(n_members, size=rows)

    states = np.tile(state, (rows, 1)).astype(np.float64)
    if window_pairs is None:
        win = np.zeros((rows, k, ds + action_dim))
        valid = np.zeros(rows, dtype=np.int64)
    else:
        win = np.tile(window_pairs, (rows, 1, 1)).astype(np.float64)
        valid = np.full(rows, int(window_valid), dtype=np.int64)

    member_rows = [np.flatnonzero(members == m) for m in range(n_members)]
    totals = np.zeros(rows)
    for t in range(horizon):
        acts = np.repeat(candidates[:, t, :], particles, axis=0)
        totals += reward_fn(states, acts)
        if particle_rngs is not None:
            step_noise = np.stack([g.standard_normal(ds) for g in particle_rngs])
            noise = np.tile(step_noise, (n_cand, 1))
        else:
            noise = rng.standard_normal((rows, ds))
        nxt = np.empty_like(states)
        for m, idx in enumerate(member_rows):
            if idx.size == 0:
                continue
            model = models[m]
            z = encode_context_batch(model, win[idx], valid[idx])
            nxt[idx] = _predict_sample(model, selection.heads[m], states[idx],
                                       acts[idx], z, noise[idx], average_heads)
        win[:, :-1] = win[:, 1:]
        win[:, -1, :ds] = states
        win[:, -1, ds:] = acts
        valid = np.minimum(valid + 1, k)
        states = nxt
    return totals.reshape(n_cand, particles).mean(axis=1)


def rollout_return(models, selection: HeadSelection, state, actions,
                   reward_fn, particles: int, rng, *, window_pairs=None,
                   window_valid: int = 0, particle_rngs=None,
                   average_heads: bool = False) -> float:
    """Mean over particles of the summed reward along imagined rollouts.

    Each particle commits to one uniformly drawn ensemble member for the
    whole rollout and samples next states from that member's selected
    head; the context code evolves with the imagined transitions.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2:
        raise ValueError("actions must be [horizon, action_dim]")
    scores = _score_candidates(models, selection, np.asarray(state, dtype=np.float64),
                               actions[None], reward_fn, particles, rng,
                               window_pairs, window_valid, particle_rngs,
                               average_heads)
    return float(scores[0])


def cem_plan(models, selection: HeadSelection, state, reward_fn,
             config: CemConfig, rng, *, window_pairs=None, window_valid: int = 0,
             init_mean=None, average_heads: bool = False):
    """One receding-horizon CEM solve; returns (first action, mean sequence).

    The sampling distribution is an independent Gaussian per timestep,
    refit to the elites each iteration with a floored std; candidates and
    the returned action are clipped to the action bounds as the final op.
    """
    horizon, da = config.horizon, config.action_dim
    mean = np.zeros((horizon, da)) if init_mean is None \
        else np.asarray(init_mean, dtype=np.float64).copy()
    if mean.shape != (horizon, da):
        raise ValueError("init_mean shape does not match the plan horizon")
    std = np.tile((config.action_high - config.action_low) / 2.0, (horizon, 1))
    for _ in range(config.iterations):
        eps = rng.standard_normal((config.candidates, horizon, da))
        cands = np.clip(mean + std * eps, config.action_low, config.action_high)
        scores = _score_candidates(models, selection, state, cands, reward_fn,
                                   config.particles, rng, window_pairs,
                                   window_valid, average_heads=average_heads)
        order = np.argsort(-scores, kind="stable")
        elites = cands[order[:config.elite_count]]
        mean = elites.mean(axis=0)
        std = np.maximum(elites.std(axis=0), config.std_floor)
    action = np.clip(mean[0], config.action_low, config.action_high)
    return action, mean


def shift_plan(mean: np.ndarray) -> np.ndarray:
    """Warm start for the next step: drop the first row, pad with zeros."""
    out = np.zeros_like(mean)
    out[:-1] = mean[1:]
    return out
