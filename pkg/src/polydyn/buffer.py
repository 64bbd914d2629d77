"""Trajectory replay buffer with per-trajectory diagnostic labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Trajectory:
    states: np.ndarray  # [T, state_dim]
    actions: np.ndarray  # [T, action_dim]
    next_states: np.ndarray  # [T, state_dim]
    rewards: np.ndarray  # [T]
    label: float  # true env parameter, diagnostics only
    trajectory_id: int

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


class ReplayBuffer:
    def __init__(self):
        self.trajectories: list[Trajectory] = []
        self._next_id = 0

    def add(self, states, actions, next_states, rewards, label=float("nan")) -> Trajectory:
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        next_states = np.asarray(next_states, dtype=np.float64)
        rewards = np.asarray(rewards, dtype=np.float64)
        if not (states.shape[0] == actions.shape[0] == next_states.shape[0]
                == rewards.shape[0]):
            raise ValueError("trajectory arrays must have equal length")
        traj = Trajectory(states, actions, next_states, rewards,
                          float(label), self._next_id)
        self._next_id += 1
        self.trajectories.append(traj)
        return traj

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def __len__(self) -> int:
        return len(self.trajectories)

    def all_arrays(self):
        """Concatenated (states, actions, next_states) over the whole buffer."""
        if not self.trajectories:
            raise ValueError("buffer is empty")
        states = np.vstack([t.states for t in self.trajectories])
        actions = np.vstack([t.actions for t in self.trajectories])
        next_states = np.vstack([t.next_states for t in self.trajectories])
        return states, actions, next_states


def as_trajectories(source) -> list[Trajectory]:
    if isinstance(source, ReplayBuffer):
        return source.trajectories
    return list(source)
