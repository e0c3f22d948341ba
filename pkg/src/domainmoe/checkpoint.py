"""Versioned checkpoint persistence.

A checkpoint is a directory holding manifest.json (tensor names, shapes,
dtypes, byte offsets, stage-completion flags, config snapshot, frozen-set
hashes) and payload.bin (concatenated little-endian tensor blobs).
Round-trips are bitwise; payload corruption is detected via sha256.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

STAGES = ("backbone", "domains", "discriminator", "experts")

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(RuntimeError):
    pass


def hash_tensors(tensors, prefix=""):
    """sha256 over the selected tensors' bytes, sorted by name."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(np.ascontiguousarray(tensors[name]).tobytes())
    return h.hexdigest()


class Checkpoint:
    def __init__(self, tensors=None, stages=None, config=None, frozen_hashes=None):
        self.tensors = dict(tensors or {})  # name -> ndarray
        self.stages = {s: False for s in STAGES}
        self.stages.update(stages or {})
        self.config = config or {}
        self.frozen_hashes = dict(frozen_hashes or {})

    def require_stage(self, stage):
        if not self.stages.get(stage, False):
            raise CheckpointError(f"{stage} stage incomplete")

    def save(self, ckpt_dir):
        out = Path(ckpt_dir)
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        blobs = []
        offset = 0
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name])
            dtype = str(arr.dtype)
            if dtype not in _DTYPES:
                raise CheckpointError(f"unsupported tensor dtype {dtype} for {name!r}")
            blob = arr.astype(_DTYPES[dtype]).tobytes()
            entries.append({"name": name, "shape": list(arr.shape),
                            "dtype": dtype, "offset": offset, "nbytes": len(blob)})
            blobs.append(blob)
            offset += len(blob)
        payload = b"".join(blobs)
        manifest = {
            "format_version": FORMAT_VERSION,
            "tensors": entries,
            "stages": self.stages,
            "config": self.config,
            "frozen_hashes": self.frozen_hashes,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }
        (out / "payload.bin").write_bytes(payload)
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, ckpt_dir):
        out = Path(ckpt_dir)
        try:
            manifest = json.loads((out / "manifest.json").read_text())
        except FileNotFoundError:
            raise CheckpointError(f"no checkpoint manifest under {ckpt_dir}")
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format {manifest.get('format_version')}")
        payload = (out / "payload.bin").read_bytes()
        if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
            raise CheckpointError("checkpoint integrity error: payload/manifest mismatch")
        tensors = {}
        for e in manifest["tensors"]:
            raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
            arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
            tensors[e["name"]] = arr.astype(e["dtype"])
        return cls(tensors, manifest["stages"], manifest["config"],
                   manifest["frozen_hashes"])


def params_to_arrays(named_params):
    return {name: p.data.copy() for name, p in named_params.items()}


def load_params_into(named_params, tensors, prefix=""):
    """Assign stored arrays into live parameter tensors, name by name."""
    for name, p in named_params.items():
        key = prefix + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {key!r}")
        arr = tensors[key]
        if tuple(arr.shape) != tuple(p.shape):
            raise CheckpointError(
                f"tensor {key!r} shape {arr.shape} does not match model {p.shape}")
        p.data = np.ascontiguousarray(arr, dtype=p.dtype)
