"""Checkpoint archives: named tensor groups in one .npz plus a JSON meta blob.

A checkpoint bundles several modules (style encoders, backbone, transfer
heads) under dotted prefixes, e.g. "gst.table" or "tts.mel_out.weight".
Tensors are stored as float64-free raw numpy arrays with original dtypes, so
a save/load round trip is bit-exact and the frozen-encoder hashes computed
from a loaded model match the ones taken at save time.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import IngestionError
from .util import hash_tensors

_META_KEY = "__meta__"
FORMAT_VERSION = 1


def save_checkpoint(path, modules: dict, meta: dict | None = None) -> str:
    """Write modules (name -> nn.Module) to path; returns the content hash."""
    arrays = {}
    for prefix, module in modules.items():
        for k, v in module.state_dict().items():
            arrays[f"{prefix}.{k}"] = v.detach().cpu().numpy()
    digest = hash_tensors(arrays)
    blob = {"format_version": FORMAT_VERSION, "hash": digest,
            "modules": sorted(modules), "meta": meta or {}}
    payload = dict(arrays)
    payload[_META_KEY] = np.frombuffer(
        json.dumps(blob, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return digest


def read_checkpoint(path):
    """-> (arrays dict without meta, meta blob dict)."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: checkpoint not found")
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files if k != _META_KEY}
            if _META_KEY not in data.files:
                raise IngestionError(f"{path}: missing checkpoint meta block")
            blob = json.loads(bytes(data[_META_KEY]).decode("utf-8"))
    except (OSError, ValueError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise IngestionError(f"{path}: unreadable checkpoint: {exc}") from exc
    if blob.get("format_version") != FORMAT_VERSION:
        raise IngestionError(
            f"{path}: unsupported checkpoint version {blob.get('format_version')!r}")
    if hash_tensors(arrays) != blob.get("hash"):
        raise IngestionError(f"{path}: checkpoint content hash mismatch")
    return arrays, blob


def load_checkpoint(path, modules: dict, strict: bool = True) -> dict:
    """Load saved tensors into the given modules; returns the meta blob."""
    arrays, blob = read_checkpoint(path)
    for prefix, module in modules.items():
        state = {}
        plen = len(prefix) + 1
        for k, v in arrays.items():
            if k.startswith(prefix + "."):
                state[k[plen:]] = torch.from_numpy(np.array(v))
        if not state and strict:
            raise IngestionError(f"{path}: no tensors under prefix {prefix!r}")
        missing, unexpected = module.load_state_dict(state, strict=strict)
        if strict and (missing or unexpected):
            raise IngestionError(
                f"{path}: state mismatch for {prefix!r}: "
                f"missing={missing} unexpected={unexpected}")
    return blob


def module_hash(module: nn.Module) -> str:
    """Content hash of a module's parameters and buffers."""
    return hash_tensors({k: v.detach().cpu().numpy()
                         for k, v in module.state_dict().items()})
