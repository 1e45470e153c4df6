"""Checkpoint I/O: a JSON manifest plus a little-endian float64 blob."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .layers import Module

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _registry():
    from .autoformer import AutoformerModel
    from .pointwise import PersistenceModel, PointwiseAttentionModel

    return {cls.tag: cls for cls in (AutoformerModel, PointwiseAttentionModel, PersistenceModel)}


def build_model(tag: str, config: ModelConfig) -> Module:
    try:
        return _registry()[tag](config)
    except KeyError:
        raise CheckpointError(f"unknown model tag {tag!r}") from None


def save_checkpoint(model: Module, path: str | Path, extra: dict | None = None) -> Path:
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path."""
    path = Path(path)
    params = model.parameters()
    entries, offset, chunks = [], 0, []
    for name, p in params.items():
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.size
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    blob = b"".join(chunks)
    bin_path = path.with_suffix(".bin")
    bin_path.write_bytes(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": model.tag,
        "config": model.config.to_dict(),
        "parameters": entries,
        "blob": bin_path.name,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return json_path


def load_checkpoint(path: str | Path) -> tuple[Module, dict]:
    """Rebuild a model from its manifest; shapes and blob hash are validated first."""
    json_path = Path(path).with_suffix(".json")
    manifest = json.loads(json_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    config = ModelConfig.from_dict(manifest["config"])
    model = build_model(manifest["model"], config)
    blob = (json_path.parent / manifest["blob"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError("checkpoint blob does not match its recorded hash")
    data = np.frombuffer(blob, dtype="<f8")
    params = model.parameters()
    recorded = {e["name"]: e for e in manifest["parameters"]}
    if set(recorded) != set(params):
        raise CheckpointError(f"parameter names differ: {sorted(set(recorded) ^ set(params))}")
    for name, p in params.items():
        e = recorded[name]
        if tuple(e["shape"]) != p.shape:
            raise CheckpointError(f"parameter {name}: checkpoint shape {tuple(e['shape'])} != model shape {p.shape}")
        if e["offset"] + p.size > data.size:
            raise CheckpointError(f"parameter {name} runs past the end of the blob")
    for name, p in params.items():
        e = recorded[name]
        p.data[...] = data[e["offset"] : e["offset"] + p.size].reshape(p.shape)
    return model, manifest.get("extra", {})


def parameter_hash(model: Module) -> str:
    h = hashlib.sha256()
    for name, p in model.parameters().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()
