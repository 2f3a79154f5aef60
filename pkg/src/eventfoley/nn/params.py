"""Named parameter storage, seeded randomness and the checkpoint container."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"EFCKPT01"


def random_source(seed: int) -> np.random.Generator:
    """Seeded PCG64 stream; the same seed always yields the same draws."""
    return np.random.Generator(np.random.PCG64(seed))


class ParamStore:
    """Ordered map of named parameter arrays with matching gradient buffers.

    Gradients accumulate (``+=``) during backward passes and are cleared only
    by :meth:`zero_grad`.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> str:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=self.dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return name

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)

    def count(self, prefix: str = "") -> int:
        return sum(p.size for name, p in self.params.items() if name.startswith(prefix))

    def astype(self, dtype) -> "ParamStore":
        """Convert every parameter (and gradient buffer) in place."""
        self.dtype = np.dtype(dtype)
        for name in self.params:
            self.params[name] = self.params[name].astype(self.dtype)
            self.grads[name] = np.zeros_like(self.params[name])
        return self

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            if value.shape != self.params[name].shape:
                raise ValueError(f"{name}: shape {value.shape} != {self.params[name].shape}")
            self.params[name][...] = value


def encode_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize named arrays as little-endian float32 behind a JSON manifest.

    Layout: magic, u32 manifest length, manifest JSON, raw data. The manifest
    lists ``name``, ``shape``, ``dtype`` and ``offset`` for every entry in
    insertion order, so equal inputs give identical bytes.
    """
    manifest = []
    blobs = []
    offset = 0
    for name, value in arrays.items():
        blob = np.ascontiguousarray(value, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(value)), "dtype": "<f4", "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    head = json.dumps(manifest, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)


def decode_arrays(data: bytes) -> dict[str, np.ndarray]:
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    (head_len,) = struct.unpack("<I", data[8:12])
    manifest = json.loads(data[12:12 + head_len])
    body = data[12 + head_len:]
    out = {}
    for entry in manifest:
        if entry["dtype"] != "<f4":
            raise ValueError(f"{entry['name']}: unsupported dtype {entry['dtype']}")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=entry["offset"])
        out[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return out


def save_checkpoint(store: ParamStore, path, extra: dict[str, np.ndarray] | None = None) -> None:
    arrays = dict(store.params)
    for name, value in (extra or {}).items():
        arrays[f"__extra__/{name}"] = value
    Path(path).write_bytes(encode_arrays(arrays))


def load_checkpoint(store: ParamStore, path) -> dict[str, np.ndarray]:
    """Fill ``store`` from ``path``; returns any extra (non-parameter) arrays."""
    arrays = decode_arrays(Path(path).read_bytes())
    extra = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("__extra__/")}
    store.load_state({k: v for k, v in arrays.items() if not k.startswith("__extra__/")})
    return extra
