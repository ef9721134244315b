"""In-memory dataset and its on-disk container.

Container layout (all integers little-endian)::

    magic      8 bytes  b"XTRPDATA"
    version    u32      1
    task       8 bytes  ASCII, NUL padded
    count      u64
    in_ndim    u32, then in_ndim x u32   per-sample input shape
    tg_ndim    u32, then tg_ndim x u32   per-sample target shape
    inputs     count * prod(in_shape) float32, row-major
    targets    count * prod(tg_shape) uint8, row-major
    difficulty count int32

A JSON manifest with the generation parameters and the SHA-256 of the
container is written next to it as ``<file>.json``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"XTRPDATA"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    task: str
    inputs: np.ndarray
    targets: np.ndarray
    difficulty: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.uint8)
        self.difficulty = np.ascontiguousarray(self.difficulty, dtype=np.int32)
        n = len(self.inputs)
        if len(self.targets) != n or len(self.difficulty) != n:
            raise ValueError("inputs, targets and difficulty must have the same length")
        if self.inputs.shape[2:] != self.targets.shape[1:]:
            raise ValueError(f"input positions {self.inputs.shape[2:]} != target shape {self.targets.shape[1:]}")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.task, self.inputs[idx], self.targets[idx], self.difficulty[idx], dict(self.params))

    def to_bytes(self) -> bytes:
        tag = self.task.encode("ascii")
        if len(tag) > 8:
            raise ValueError("task tag longer than 8 bytes")
        in_shape = self.inputs.shape[1:]
        tg_shape = self.targets.shape[1:]
        head = [MAGIC, struct.pack("<I", VERSION), tag.ljust(8, b"\0"), struct.pack("<Q", len(self))]
        head.append(struct.pack(f"<I{len(in_shape)}I", len(in_shape), *in_shape))
        head.append(struct.pack(f"<I{len(tg_shape)}I", len(tg_shape), *tg_shape))
        return b"".join(head + [
            self.inputs.astype("<f4").tobytes(),
            self.targets.tobytes(),
            self.difficulty.astype("<i4").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, buf: bytes, params: dict | None = None) -> Dataset:
        if buf[:8] != MAGIC:
            raise DatasetFormatError("not a dataset container (bad magic)")
        (version,) = struct.unpack_from("<I", buf, 8)
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        task = buf[12:20].rstrip(b"\0").decode("ascii")
        (count,) = struct.unpack_from("<Q", buf, 20)
        off = 28
        shapes = []
        for _ in range(2):
            (nd,) = struct.unpack_from("<I", buf, off)
            shapes.append(struct.unpack_from(f"<{nd}I", buf, off + 4))
            off += 4 + 4 * nd
        in_shape, tg_shape = shapes
        n_in = count * int(np.prod(in_shape))
        n_tg = count * int(np.prod(tg_shape))
        expected = off + 4 * n_in + n_tg + 4 * count
        if len(buf) != expected:
            raise DatasetFormatError(f"container size {len(buf)} != expected {expected}")
        inputs = np.frombuffer(buf, "<f4", n_in, off).reshape((count,) + in_shape)
        off += 4 * n_in
        targets = np.frombuffer(buf, np.uint8, n_tg, off).reshape((count,) + tg_shape)
        off += n_tg
        diff = np.frombuffer(buf, "<i4", count, off)
        return cls(task, inputs.astype(np.float32), targets.copy(), diff.astype(np.int32), params or {})

    def save(self, path) -> str:
        """Write container + manifest; returns the container's SHA-256."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        buf = self.to_bytes()
        path.write_bytes(buf)
        digest = hashlib.sha256(buf).hexdigest()
        manifest = {"format": "xtrp-dataset", "version": VERSION, "task": self.task, "count": len(self),
                    "input_shape": list(self.inputs.shape[1:]), "target_shape": list(self.targets.shape[1:]),
                    "sha256": digest, "params": self.params}
        manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return digest


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_dataset(path) -> Dataset:
    path = Path(path)
    buf = path.read_bytes()
    params = {}
    mp = manifest_path(path)
    if mp.exists():
        manifest = json.loads(mp.read_text())
        if manifest.get("sha256") not in (None, hashlib.sha256(buf).hexdigest()):
            raise DatasetFormatError(f"{path}: content hash does not match manifest")
        params = manifest.get("params", {})
    return Dataset.from_bytes(buf, params)
