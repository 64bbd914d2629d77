"""Segment sampling and the winner-take-all (oracle) training losses.

A segment is a handful of transitions from one trajectory; every head is
scored on the whole segment and only the best head receives gradient for
it. Averaging over several transitions before the argmin is what pushes
heads to specialize per dynamics mode rather than per state region. The
warm-up variant trains all heads on all segments so none starves early.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .buffer import as_trajectories
from .dynamics import MultiHeadDynamicsModel, build_past_window, window_input


@dataclass
class TrajectorySegment:
    states: np.ndarray  # [M, state_dim]
    actions: np.ndarray  # [M, action_dim]
    next_states: np.ndarray  # [M, state_dim]
    window_pairs: np.ndarray  # [M, K, state_dim + action_dim]
    window_valid: np.ndarray  # [M]
    trajectory_id: int
    indices: np.ndarray  # [M] positions inside the source trajectory
    label: float = float("nan")

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class OracleLossResult:
    loss: float
    assignments: np.ndarray  # [B] winning head per segment
    per_head: np.ndarray  # [B, H] mean NLL of each head on each segment


def segment_from_trajectory(traj, indices, history: int) -> TrajectorySegment:
    indices = np.asarray(indices, dtype=np.int64)
    pairs = np.stack([build_past_window(traj.states, traj.actions, int(i), history).pairs
                      for i in indices])
    valid = np.minimum(indices, history)
    return TrajectorySegment(
        states=traj.states[indices], actions=traj.actions[indices],
        next_states=traj.next_states[indices], window_pairs=pairs,
        window_valid=valid, trajectory_id=traj.trajectory_id,
        indices=indices, label=traj.label)


def sample_segments(source, batch_size: int, segment_size: int, history: int,
                    rng: np.random.Generator) -> list[TrajectorySegment]:
    """Draw segments, each from one uniformly chosen eligible trajectory.

    Transition indices are sampled uniformly without replacement, so a
    segment is generally non-consecutive; every transition keeps the
    history window from its true position.
    """
    trajectories = as_trajectories(source)
    eligible = [t for t in trajectories if len(t) >= segment_size]
    if not eligible:
        raise ValueError(
            f"no trajectory has at least segment_size={segment_size} transitions")
    segments = []
    for _ in range(batch_size):
        traj = eligible[int(rng.integers(len(eligible)))]
        idx = np.sort(rng.choice(len(traj), size=segment_size, replace=False))
        segments.append(segment_from_trajectory(traj, idx, history))
    return segments


# ------------------------------------------------------------ batched core

def _stack_batch(segments: list[TrajectorySegment]):
    s = np.concatenate([seg.states for seg in segments])
    a = np.concatenate([seg.actions for seg in segments])
    ns = np.concatenate([seg.next_states for seg in segments])
    w = np.concatenate([seg.window_pairs for seg in segments])
    wv = np.concatenate([seg.window_valid for seg in segments])
    return s, a, ns, w, wv


def _forward_batch(model: MultiHeadDynamicsModel, s, a, ns, w, wv):
    nrm = model.normalizer
    x = np.hstack([nrm.norm_state(s), nrm.norm_action(a)])
    bk_out, bk_cache = model.backbone.forward_cached(x)
    if model.has_context:
        flat = window_input(model, w, wv)
        z, enc_cache = model.encoder.forward_cached(flat)
        feats = np.hstack([bk_out, z])
    else:
        z, enc_cache, feats = None, None, bk_out
    target = nrm.norm_delta(ns - s)
    heads = [model.heads[h].forward_cached(feats) for h in range(model.n_heads)]
    rows = np.stack([nn.nll_rows(mean, lv, target)
                     for mean, lv, _ in heads], axis=1)  # [R, H]
    return {"bk_cache": bk_cache, "enc_cache": enc_cache, "z": z,
            "heads": heads, "rows": rows, "target": target}


def segment_head_losses(model: MultiHeadDynamicsModel,
                        segments: list[TrajectorySegment]):
    """Mean per-head NLL for each segment: [B, H], plus the forward pack."""
    if not segments:
        raise ValueError("need at least one segment")
    m = len(segments[0])
    if any(len(seg) != m for seg in segments):
        raise ValueError("segments in one batch must share a length")
    s, a, ns, w, wv = _stack_batch(segments)
    pack = _forward_batch(model, s, a, ns, w, wv)
    per_head = pack["rows"].reshape(len(segments), m, model.n_heads).mean(axis=1)
    return per_head, pack


def per_head_segment_loss(model: MultiHeadDynamicsModel,
                          segment: TrajectorySegment, head_index: int) -> float:
    per_head, _ = segment_head_losses(model, [segment])
    return float(per_head[0, head_index])


def oracle_loss(model: MultiHeadDynamicsModel,
                segments: list[TrajectorySegment]) -> OracleLossResult:
    """Mean over segments of the best head's segment loss."""
    per_head, _ = segment_head_losses(model, segments)
    winners = np.argmin(per_head, axis=1)  # ties -> lowest index
    loss = float(per_head[np.arange(len(segments)), winners].mean())
    return OracleLossResult(loss, winners, per_head)


def warmup_loss(model: MultiHeadDynamicsModel,
                segments: list[TrajectorySegment]) -> float:
    """Mean over segments and over all heads; used before specialization."""
    per_head, _ = segment_head_losses(model, segments)
    return float(per_head.mean())


# ----------------------------------------------- dataset-wide assignments

def _trajectory_chunks(length: int, segment_size: int):
    """Consecutive chunks of segment_size; a short remainder stands alone."""
    chunks = []
    start = 0
    while start < length:
        end = min(start + segment_size, length)
        chunks.append((start, end))
        start = end
    return chunks


def per_transition_head_nll(model: MultiHeadDynamicsModel, source):
    """NLL of every buffered transition under every head: [N, H] plus keys."""
    trajectories = as_trajectories(source)
    if not trajectories:
        raise ValueError("no trajectories to evaluate")
    history = model.history
    segs = [segment_from_trajectory(t, np.arange(len(t)), history)
            for t in trajectories if len(t) > 0]
    s, a, ns, w, wv = _stack_batch(segs)
    pack = _forward_batch(model, s, a, ns, w, wv)
    keys = [(t.trajectory_id, i) for t in trajectories for i in range(len(t))]
    return pack["rows"], keys


def compute_dataset_assignments(model: MultiHeadDynamicsModel, source,
                                segment_size: int) -> dict:
    """Winning head for every transition, via consecutive-chunk segments.

    Each trajectory is split into chunks of segment_size (remainder kept);
    the chunk's argmin head is inherited by all of its transitions.
    Deterministic: recomputing on a frozen model gives identical output.
    """
    trajectories = as_trajectories(source)
    rows, keys = per_transition_head_nll(model, trajectories)
    assignments = {}
    offset = 0
    for traj in trajectories:
        n = len(traj)
        for start, end in _trajectory_chunks(n, segment_size):
            head = int(np.argmin(rows[offset + start:offset + end].mean(axis=0)))
            for i in range(start, end):
                assignments[(traj.trajectory_id, i)] = head
        offset += n
    return assignments


# ------------------------------------------------------- auxiliary losses

def _reverse_forward(model: MultiHeadDynamicsModel, s, a, ns, z):
    nrm = model.normalizer
    xb = np.hstack([nrm.norm_state(ns), nrm.norm_action(a)])
    out, cache = model.reverse_net.forward_cached(xb)
    feats = np.hstack([out, z])
    mean, lv, head_cache = model.reverse_head.forward_cached(feats)
    target = nrm.norm_delta(s - ns)
    return mean, lv, target, cache, head_cache


def _segment_assignment_rows(segments, assignments, n_heads: int) -> np.ndarray:
    heads = []
    for seg in segments:
        for i in seg.indices:
            key = (seg.trajectory_id, int(i))
            if key not in assignments:
                raise ValueError(f"no precomputed assignment for transition {key}")
            head = assignments[key]
            if not 0 <= head < n_heads:
                raise ValueError(f"assignment {head} out of range for {key}")
            heads.append(head)
    return np.asarray(heads, dtype=np.int64)


def aux_loss_parts(model: MultiHeadDynamicsModel, segments, assignments):
    """(forward, backward) context-shaping losses on a segment batch."""
    if not model.has_context:
        raise ValueError("auxiliary losses require a context encoder")
    per_head, pack = segment_head_losses(model, segments)
    assign = _segment_assignment_rows(segments, assignments, model.n_heads)
    rows = pack["rows"]
    fwd = float(rows[np.arange(rows.shape[0]), assign].mean())
    s, a, ns, _, _ = _stack_batch(segments)
    mean, lv, target, _, _ = _reverse_forward(model, s, a, ns, pack["z"])
    bwd = float(nn.nll_rows(mean, lv, target).mean())
    return fwd, bwd


def aux_context_losses(model: MultiHeadDynamicsModel, segments, assignments) -> float:
    """Forward plus backward prediction loss, both conditioned on z."""
    fwd, bwd = aux_loss_parts(model, segments, assignments)
    return fwd + bwd


# ------------------------------------------------------ loss with gradient

def training_loss_and_grads(model: MultiHeadDynamicsModel,
                            segments: list[TrajectorySegment], *,
                            winner_take_all: bool,
                            lambda_aux: float = 0.0,
                            assignments: dict | None = None):
    """Total loss and exact gradients for one segment batch.

    Total = segment loss (winner-take-all or all-heads) plus
    lambda_aux * (forward + backward context losses). Returns
    (total, OracleLossResult, grads) with grads aligned to
    model.parameters(); heads that win nothing get exactly-zero grads.

    The forward context loss is defined by the precomputed head
    assignments; with assignments=None only the backward loss applies.
    That is the ablation that trains all heads with no selection
    pressure anywhere, so it must not condition anything on a winner.
    """
    if not segments:
        raise ValueError("need at least one segment")
    b = len(segments)
    m = len(segments[0])
    if any(len(seg) != m for seg in segments):
        raise ValueError("segments in one batch must share a length")
    h_count = model.n_heads
    s, a, ns, w, wv = _stack_batch(segments)
    pack = _forward_batch(model, s, a, ns, w, wv)
    rows = pack["rows"]
    r = rows.shape[0]
    per_head = rows.reshape(b, m, h_count).mean(axis=1)
    winners = np.argmin(per_head, axis=1)
    oracle_value = float(per_head[np.arange(b), winners].mean())
    warmup_value = float(per_head.mean())
    diag = OracleLossResult(oracle_value if winner_take_all else warmup_value,
                            winners, per_head)

    # Adjoint weight per (head, transition row).
    weights = np.zeros((h_count, b, m))
    if winner_take_all:
        weights[winners, np.arange(b), :] = 1.0 / (b * m)
    else:
        weights[:, :, :] = 1.0 / (b * m * h_count)
    weights = weights.reshape(h_count, r)

    total = diag.loss
    use_aux = lambda_aux != 0.0
    if use_aux:
        if not model.has_context:
            raise ValueError("auxiliary losses require a context encoder")
        aux = 0.0
        if assignments is not None:
            assign = _segment_assignment_rows(segments, assignments, h_count)
            aux += float(rows[np.arange(r), assign].mean())
            np.add.at(weights, (assign, np.arange(r)), lambda_aux / r)
        rev_mean, rev_lv, rev_target, rev_cache, rev_head_cache = \
            _reverse_forward(model, s, a, ns, pack["z"])
        rev_rows = nn.nll_rows(rev_mean, rev_lv, rev_target)
        aux += float(rev_rows.mean())
        total = total + lambda_aux * aux

    # Backward through heads into the shared feature.
    target = pack["target"]
    feat_dim = model.backbone.out_dim + model.context_dim
    d_feats = np.zeros((r, feat_dim))
    head_grads = []
    for h in range(h_count):
        mean, lv, cache = pack["heads"][h]
        d_mean, d_lv = nn.nll_rows_backward(mean, lv, target, weights[h])
        grads_h, d_f = model.heads[h].backward(cache, d_mean, d_lv)
        head_grads.extend(grads_h)
        d_feats += d_f

    bw = model.backbone.out_dim
    backbone_grads, _ = model.backbone.backward(pack["bk_cache"], d_feats[:, :bw])

    grads = list(backbone_grads) + head_grads
    if model.has_context:
        d_z = d_feats[:, bw:].copy()
        if use_aux:
            d_rev_mean, d_rev_lv = nn.nll_rows_backward(
                rev_mean, rev_lv, rev_target, np.full(r, lambda_aux / r))
            rev_head_grads, d_fb = model.reverse_head.backward(
                rev_head_cache, d_rev_mean, d_rev_lv)
            rev_grads, _ = model.reverse_net.backward(rev_cache, d_fb[:, :bw])
            d_z += d_fb[:, bw:]
        else:
            rev_head_grads = [np.zeros_like(p) for p in model.reverse_head.parameters()]
            rev_grads = [np.zeros_like(p) for p in model.reverse_net.parameters()]
        enc_grads, _ = model.encoder.backward(pack["enc_cache"], d_z)
        grads.extend(enc_grads)
        grads.extend(rev_grads)
        grads.extend(rev_head_grads)
    return total, diag, grads
