"""Checkpoint persistence: manifest.json + tensors.bin.

Arrays are stored as contiguous little-endian float32 in name-sorted order;
the manifest records dtype/shape/offset per array, a SHA-256 of the payload,
and an echo of the run configuration for provenance.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1


def save_checkpoint(arrays: dict, config: dict, path: str) -> None:
    """arrays: name -> numpy array (stored as float32)."""
    os.makedirs(path, exist_ok=True)
    names = sorted(arrays)
    payload = bytearray()
    table = {}
    for name in names:
        # note: tobytes() emits C order regardless of the input layout, and
        # asarray (unlike ascontiguousarray) keeps 0-d shapes intact
        arr = np.asarray(arrays[name], dtype=np.float32)
        data = arr.astype("<f4").tobytes()
        table[name] = {
            "dtype": "float32",
            "shape": list(arr.shape),
            "offset": len(payload),
            "nbytes": len(data),
        }
        payload.extend(data)
    digest = hashlib.sha256(bytes(payload)).hexdigest()
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "arrays": table,
        "payload_sha256": digest,
    }
    with open(os.path.join(path, "tensors.bin"), "wb") as f:
        f.write(bytes(payload))
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str):
    """Returns (arrays, config). Verifies payload hash and format version."""
    manifest_path = os.path.join(path, "manifest.json")
    payload_path = os.path.join(path, "tensors.bin")
    if not os.path.exists(manifest_path) or not os.path.exists(payload_path):
        raise CheckpointError(f"no checkpoint at {path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format_version')!r}")
    with open(payload_path, "rb") as f:
        payload = f.read()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["payload_sha256"]:
        raise CheckpointError("payload hash mismatch (corrupt or truncated checkpoint)")
    arrays = {}
    for name, spec in manifest["arrays"].items():
        start, n = spec["offset"], spec["nbytes"]
        if start + n > len(payload):
            raise CheckpointError(f"array {name!r} extends past payload end")
        arr = np.frombuffer(payload[start:start + n], dtype="<f4")
        arrays[name] = arr.reshape(spec["shape"]).copy()
    return arrays, manifest["config"]


def state_dict_to_arrays(state_dict) -> dict:
    return {k: v.detach().cpu().numpy() for k, v in state_dict.items()}


def arrays_to_state_dict(arrays: dict):
    import torch

    return {k: torch.from_numpy(np.asarray(v)) for k, v in arrays.items()}


def params_checksum(module) -> str:
    """SHA-256 over a module's parameters, for frozen-weights assertions."""
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().astype("<f8").tobytes())
    return h.hexdigest()
