"""Specialization diagnostics: which head claims which dynamics mode.

Reads the true env parameter only through per-trajectory diagnostic
labels stored in the buffer; the model never sees them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buffer import as_trajectories
from .dynamics import MultiHeadDynamicsModel
from .losses import _trajectory_chunks, per_transition_head_nll


@dataclass
class AssignmentTable:
    """Fraction of each parameter's segments won by each head.

    Rows follow `parameters` (sorted unique labels); each row sums to 1.
    """

    parameters: list[float]
    counts: np.ndarray  # [P] segments per parameter
    fractions: np.ndarray  # [P, H]
    skipped_unlabeled: int = 0

    def purity_per_parameter(self) -> np.ndarray:
        return self.fractions.max(axis=1)

    def mean_purity(self) -> float:
        return float(self.purity_per_parameter().mean())


def compute_assignment_table(model: MultiHeadDynamicsModel, source,
                             segment_size: int) -> AssignmentTable:
    """Chunk every trajectory into segments and tally winning heads."""
    trajectories = as_trajectories(source)
    rows, _ = per_transition_head_nll(model, trajectories)
    wins: dict[float, np.ndarray] = {}
    skipped = 0
    offset = 0
    for traj in trajectories:
        n = len(traj)
        if np.isnan(traj.label):
            skipped += sum(1 for _ in _trajectory_chunks(n, segment_size))
            offset += n
            continue
        tally = wins.setdefault(traj.label, np.zeros(model.n_heads))
        for start, end in _trajectory_chunks(n, segment_size):
            head = int(np.argmin(rows[offset + start:offset + end].mean(axis=0)))
            tally[head] += 1
        offset += n
    if not wins:
        raise ValueError("no labeled trajectories to tabulate")
    parameters = sorted(wins)
    counts = np.array([wins[p].sum() for p in parameters])
    fractions = np.stack([wins[p] / wins[p].sum() for p in parameters])
    return AssignmentTable(parameters, counts, fractions, skipped)


def hidden_features(model: MultiHeadDynamicsModel, source):
    """Backbone activation ++ context code for every buffered transition.

    Returns (features [N, W+C], labels [N], trajectory_ids [N], steps [N]);
    a pure read of a frozen model, meant for offline structure analysis.
    """
    from .dynamics import encode_context_batch  # local to keep imports light
    from .losses import _stack_batch, segment_from_trajectory

    trajectories = as_trajectories(source)
    if not trajectories:
        raise ValueError("no trajectories to featurize")
    segs = [segment_from_trajectory(t, np.arange(len(t)), model.history)
            for t in trajectories]
    s, a, _, w, wv = _stack_batch(segs)
    nrm = model.normalizer
    x = np.hstack([nrm.norm_state(s), nrm.norm_action(a)])
    backbone_out, _ = model.backbone.forward_cached(x)
    if model.has_context:
        z = encode_context_batch(model, w, wv)
        feats = np.hstack([backbone_out, z])
    else:
        feats = backbone_out
    labels = np.concatenate([np.full(len(t), t.label) for t in trajectories])
    traj_ids = np.concatenate([np.full(len(t), t.trajectory_id, dtype=np.int64)
                               for t in trajectories])
    steps = np.concatenate([np.arange(len(t), dtype=np.int64) for t in trajectories])
    return feats, labels, traj_ids, steps
