"""Iterated collect-train-evaluate loop over an ensemble of dynamics models.

Each outer iteration gathers trajectories with the current MPC policy on
the training split, refits normalization, trains every ensemble member
on segment batches (all-heads loss during warm-up, winner-take-all
after), then evaluates on held-out dynamics parameters and snapshots the
head-assignment table.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .analysis import compute_assignment_table
from .buffer import ReplayBuffer, Trajectory
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .dynamics import (MultiHeadDynamicsModel, Normalizer, Transition,
                       build_model, build_past_window)
from .envs import EnvContext, family_spec, make_env, sample_context
from .losses import (compute_dataset_assignments, sample_segments,
                     training_loss_and_grads)
from .planner import CemConfig, HeadSelection, cem_plan, select_heads, shift_plan
from .records import IterationRecord, RunRecord, RunWriter
from .seeding import SeedStreams

log = logging.getLogger(__name__)


@dataclass
class Ensemble:
    members: list[MultiHeadDynamicsModel]
    adam: list[nn.AdamState]

    def __len__(self) -> int:
        return len(self.members)


def build_ensemble(cfg: ExperimentConfig, streams: SeedStreams) -> Ensemble:
    spec = family_spec(cfg.env)
    members = []
    for m in range(cfg.ensemble_size):
        rng = streams.generator("init", m)
        members.append(build_model(
            rng, state_dim=spec.obs_dim, action_dim=spec.action_dim,
            n_heads=cfg.heads, hidden_width=cfg.hidden_width,
            history=cfg.history_length,
            context_dim=cfg.context_dim if cfg.context_enabled else 0))
    adam = [nn.init_adam(model.parameters(), lr=cfg.learning_rate)
            for model in members]
    return Ensemble(members, adam)


def cem_config(cfg: ExperimentConfig) -> CemConfig:
    spec = family_spec(cfg.env)
    return CemConfig(action_low=spec.action_low, action_high=spec.action_high,
                     horizon=cfg.plan_horizon, candidates=cfg.cem_candidates,
                     iterations=cfg.cem_iterations, elite_frac=cfg.elite_frac,
                     particles=cfg.particles, warm_start=cfg.warm_start,
                     std_floor=cfg.cem_std_floor)


def run_episode(cfg: ExperimentConfig, ensemble: Ensemble, context: EnvContext,
                env_rng: np.random.Generator, plan_rng: np.random.Generator,
                *, random_policy: bool = False):
    """One full episode; returns (states, actions, next_states, rewards).

    The policy replans every step: head selection from the recent real
    transitions (Eq-style window that excludes the newest one), then a
    warm-started CEM solve on the selected heads.
    """
    spec = family_spec(cfg.env)
    env = make_env(context, env_rng, cfg.env_noise)
    horizon = env.horizon
    planner_cfg = cem_config(cfg)
    k = cfg.history_length
    n = cfg.selection_horizon

    states = np.zeros((horizon, spec.obs_dim))
    actions = np.zeros((horizon, spec.action_dim))
    next_states = np.zeros((horizon, spec.obs_dim))
    rewards = np.zeros(horizon)

    obs = env.reset()
    recent: list[tuple[Transition, object]] = []
    prev_mean = None
    adaptive = not cfg.non_adaptive_planning
    selection = HeadSelection.default(len(ensemble))
    for t in range(horizon):
        if random_policy:
            action = plan_rng.uniform(spec.action_low, spec.action_high)
        else:
            window = build_past_window(states, actions, t, k)
            if adaptive and cfg.heads > 1:
                lo = max(0, t - n)
                selection = select_heads(ensemble.members, recent[lo:max(lo, t - 1)])
            init_mean = None
            if cfg.warm_start and prev_mean is not None:
                init_mean = shift_plan(prev_mean)
            action, prev_mean = cem_plan(
                ensemble.members, selection, obs, spec.reward_fn, planner_cfg,
                plan_rng, window_pairs=window.pairs, window_valid=window.valid,
                init_mean=init_mean, average_heads=cfg.non_adaptive_planning)
        new_obs, reward = env.step(action)
        states[t] = obs
        actions[t] = action
        next_states[t] = new_obs
        rewards[t] = reward
        if not random_policy:
            recent.append((Transition(obs, np.asarray(action, dtype=np.float64),
                                      new_obs, reward, -1, t),
                           build_past_window(states, actions, t, k)))
        obs = new_obs
    return states, actions, next_states, rewards


def collect_trajectories(cfg: ExperimentConfig, ensemble: Ensemble,
                         streams: SeedStreams, tag: str, iteration: int,
                         count: int, split: str = "train",
                         buffer: ReplayBuffer | None = None,
                         random_policy: bool = False) -> list[Trajectory]:
    """Roll `count` episodes on freshly sampled contexts from a split."""
    out = []
    for j in range(count):
        env_rng = streams.generator(tag, "env", iteration, j)
        plan_rng = streams.generator(tag, "plan", iteration, j)
        context = sample_context(cfg.env, split, env_rng)
        label = context.parameter  # diagnostics only; models never see it
        s, a, ns, r = run_episode(cfg, ensemble, context, env_rng, plan_rng,
                                  random_policy=random_policy)
        if buffer is not None:
            out.append(buffer.add(s, a, ns, r, label))
        else:
            out.append(Trajectory(s, a, ns, r, label, -1))
    return out


@dataclass
class EvalResult:
    returns: list[float]
    mean: float | None
    std: float | None
    empty: bool

    @classmethod
    def from_returns(cls, returns: list[float]) -> "EvalResult":
        if not returns:
            return cls([], None, None, True)
        arr = np.asarray(returns)
        return cls(list(map(float, returns)), float(arr.mean()), float(arr.std()), False)


def evaluate_generalization(cfg: ExperimentConfig, ensemble: Ensemble,
                            streams: SeedStreams, tag: str, episodes: int,
                            split: str = "test",
                            random_policy: bool = False) -> EvalResult:
    """Fresh-context episodes with the full adaptive planning path.

    Zero requested episodes yields an explicitly empty result, never a
    fabricated zero return. Evaluation transitions are discarded, so they
    can never leak into normalization or training.
    """
    if episodes == 0:
        return EvalResult.from_returns([])
    trajs = collect_trajectories(cfg, ensemble, streams, tag, 0, episodes,
                                 split=split, buffer=None,
                                 random_policy=random_policy)
    return EvalResult.from_returns([t.total_reward for t in trajs])


def train_models(cfg: ExperimentConfig, ensemble: Ensemble, buffer: ReplayBuffer,
                 streams: SeedStreams, iteration: int, *, warmup: bool):
    """One training phase over the buffer for every ensemble member.

    Returns (loss_kind, per-member mean loss over the final epoch).
    `multi_head_no_mcl` keeps the all-heads objective for the whole run.
    """
    winner = (not warmup) and (not cfg.multi_head_no_mcl)
    loss_kind = "winner" if winner else "all_heads"
    states, acts, next_states = buffer.all_arrays()
    normalizer = Normalizer.fit(states, acts, next_states)
    lam = cfg.lambda_aux if cfg.context_enabled else 0.0
    n_batches = max(1, math.ceil(
        buffer.n_transitions / (cfg.batch_size * cfg.segment_size)))
    final_losses = []
    for m, model in enumerate(ensemble.members):
        model.normalizer = normalizer
        rng = streams.generator("train", iteration, m)
        epoch_loss = float("nan")
        for _ in range(cfg.epochs):
            # The ablation must see no winner-conditioned signal at all,
            # so it also drops the assigned-head part of the aux loss.
            assignments = None
            if lam > 0.0 and not cfg.multi_head_no_mcl:
                assignments = compute_dataset_assignments(model, buffer,
                                                          cfg.segment_size)
            batch_losses = []
            for _ in range(n_batches):
                segments = sample_segments(buffer, cfg.batch_size,
                                           cfg.segment_size, cfg.history_length,
                                           rng)
                total, _, grads = training_loss_and_grads(
                    model, segments, winner_take_all=winner,
                    lambda_aux=lam, assignments=assignments)
                nn.adam_step(model.parameters(), grads, ensemble.adam[m])
                batch_losses.append(total)
            epoch_loss = float(np.mean(batch_losses))
        final_losses.append(epoch_loss)
    return loss_kind, final_losses


def run_outer_loop(cfg: ExperimentConfig, seed: int, out_dir) -> RunRecord:
    """Full training run for one seed; writes all declared outputs."""
    cfg.validate()
    start = time.time()
    streams = SeedStreams(seed)
    ensemble = build_ensemble(cfg, streams)
    buffer = ReplayBuffer()
    writer = RunWriter(out_dir, cfg.to_dict(), seed)
    for iteration in range(1, cfg.iterations + 1):
        trajs = collect_trajectories(cfg, ensemble, streams, "collect", iteration,
                                     cfg.trajectories_per_iteration,
                                     split="train", buffer=buffer)
        returns = np.array([t.total_reward for t in trajs])
        warmup = iteration <= cfg.warmup_iterations
        loss_kind, losses = train_models(cfg, ensemble, buffer, streams,
                                         iteration, warmup=warmup)
        evaluation = evaluate_generalization(cfg, ensemble, streams,
                                             f"eval_{iteration}",
                                             cfg.eval_episodes)
        tables = [compute_assignment_table(model, buffer, cfg.segment_size)
                  for model in ensemble.members]
        writer.add_iteration(IterationRecord(
            iteration=iteration, loss_kind=loss_kind, member_losses=losses,
            train_return_mean=float(returns.mean()),
            train_return_std=float(returns.std()),
            test_return_mean=evaluation.mean, test_return_std=evaluation.std,
            n_transitions=buffer.n_transitions, tables=tables))
        log.info("seed %d iteration %d/%d: loss=%s train=%.2f test=%s",
                 seed, iteration, cfg.iterations, loss_kind,
                 returns.mean(), evaluation.mean)
    save_checkpoint(writer.out_dir / "checkpoint", ensemble.members,
                    meta={"config": cfg.to_dict(), "seed": seed, "env": cfg.env})
    return writer.finish(time.time() - start)
