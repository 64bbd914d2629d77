"""Checkpoint format: flat little-endian float64 blob + JSON shape manifest.

A checkpoint is a directory holding `manifest.json` (format version, run
metadata, per-member layer sizes and activation tags, and the ordered
array table) and `params.bin` (every parameter array concatenated as
little-endian float64). Loading restores weights bit-exactly. The three
failure modes are distinguishable: version mismatch, truncated blob, and
a manifest that disagrees with itself.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import nn
from .dynamics import MultiHeadDynamicsModel, Normalizer

FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by an incompatible format version."""


class CorruptCheckpointError(CheckpointError):
    """The parameter blob or manifest file is unreadable or truncated."""


class ManifestError(CheckpointError):
    """The manifest is internally inconsistent with the declared shapes."""


def _member_arrays(model: MultiHeadDynamicsModel):
    named = []
    for i, p in enumerate(model.parameters()):
        named.append((f"param_{i}", p))
    for name, arr in zip(("state_mean", "state_std", "action_mean",
                          "action_std", "delta_mean", "delta_std"),
                         model.normalizer.arrays()):
        named.append((f"norm_{name}", arr))
    return named


def _member_layout(model: MultiHeadDynamicsModel) -> dict:
    layout = {
        "dims": {
            "state_dim": model.state_dim,
            "action_dim": model.action_dim,
            "history": model.history,
            "context_dim": model.context_dim,
            "n_heads": model.n_heads,
        },
        "backbone": nn.net_layout(model.backbone),
        "heads": [nn.head_layout(h) for h in model.heads],
    }
    if model.has_context:
        layout["encoder"] = nn.net_layout(model.encoder)
        layout["reverse_net"] = nn.net_layout(model.reverse_net)
        layout["reverse_head"] = nn.head_layout(model.reverse_head)
    return layout


def save_checkpoint(path, models: list[MultiHeadDynamicsModel],
                    meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    members = []
    table = []
    chunks = []
    offset = 0
    for m, model in enumerate(models):
        members.append(_member_layout(model))
        for name, arr in _member_arrays(model):
            arr = np.asarray(arr, dtype=np.float64)
            table.append({"member": m, "name": name,
                          "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.ravel().astype("<f8"))
            offset += arr.size
    manifest = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "members": members,
        "arrays": table,
        "total_elements": offset,
    }
    with open(path / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(path / PARAMS_NAME, "wb") as fh:
        for chunk in chunks:
            fh.write(chunk.tobytes())
    return path


def _rebuild_member(layout: dict) -> MultiHeadDynamicsModel:
    try:
        dims = layout["dims"]
        backbone = nn.dense_from_layout(layout["backbone"])
        heads = [nn.head_from_layout(h) for h in layout["heads"]]
        if len(heads) != dims["n_heads"]:
            raise ManifestError(
                f"manifest declares {dims['n_heads']} heads but lists {len(heads)}")
        encoder = reverse_net = reverse_head = None
        if dims["context_dim"] > 0:
            encoder = nn.dense_from_layout(layout["encoder"])
            reverse_net = nn.dense_from_layout(layout["reverse_net"])
            reverse_head = nn.head_from_layout(layout["reverse_head"])
        return MultiHeadDynamicsModel(
            state_dim=dims["state_dim"], action_dim=dims["action_dim"],
            history=dims["history"], context_dim=dims["context_dim"],
            backbone=backbone, heads=heads, encoder=encoder,
            reverse_net=reverse_net, reverse_head=reverse_head,
            normalizer=Normalizer.identity(dims["state_dim"], dims["action_dim"]))
    except ManifestError:
        raise
    except (KeyError, TypeError, nn.ShapeError, ValueError) as exc:
        raise ManifestError(f"bad member layout: {exc}") from exc


def load_checkpoint(path):
    """Restore (models, meta) from a checkpoint directory, bit-exactly."""
    path = Path(path)
    try:
        with open(path / MANIFEST_NAME) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CorruptCheckpointError(f"missing {MANIFEST_NAME} in {path}") from None
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"unparseable manifest: {exc}") from exc

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format {version!r}, expected {FORMAT_VERSION}")

    try:
        blob = (path / PARAMS_NAME).read_bytes()
    except FileNotFoundError:
        raise CorruptCheckpointError(f"missing {PARAMS_NAME} in {path}") from None
    total = manifest.get("total_elements", 0)
    if len(blob) != total * 8:
        raise CorruptCheckpointError(
            f"parameter blob holds {len(blob)} bytes, manifest expects {total * 8}")
    flat = np.frombuffer(blob, dtype="<f8")

    models = [_rebuild_member(layout) for layout in manifest.get("members", [])]
    table = manifest.get("arrays", [])
    expected = []
    for m, model in enumerate(models):
        for name, arr in _member_arrays(model):
            expected.append((m, name, arr))
    if len(table) != len(expected):
        raise ManifestError(
            f"manifest lists {len(table)} arrays, layouts imply {len(expected)}")
    for entry, (m, name, arr) in zip(table, expected):
        if entry.get("member") != m or entry.get("name") != name:
            raise ManifestError(
                f"array table order mismatch at {entry.get('name')!r}")
        shape = tuple(entry.get("shape", ()))
        if shape != arr.shape:
            raise ManifestError(
                f"{name}: manifest shape {shape} vs layout shape {arr.shape}")
        start = entry.get("offset", -1)
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if start < 0 or start + size > flat.size:
            raise ManifestError(f"{name}: offset {start} out of range")
        arr[...] = flat[start:start + size].reshape(shape)
    return models, manifest.get("meta", {})
