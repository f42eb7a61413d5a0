"""Binary model checkpoints.

Layout (all integers little-endian)::

    b"CGANSECK"                 8-byte magic
    u32 version
    u32 header length H
    H bytes UTF-8 JSON header   (sorted keys)
    float32 LE payloads         one per header["tensors"] entry, in order

The header carries the architecture descriptor, tensor names and shapes, the
magnitude normalization scale, the training seed and an echo of the config.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CGANSECK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    arch: dict
    tensors: dict  # name -> float32 array, insertion order is file order
    norm_scale: float | None = None
    seed: int = 0
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    history: list = field(default_factory=list)  # not serialized

    def header(self):
        return {
            "arch": self.arch,
            "config": self.config,
            "extra": self.extra,
            "norm_scale": self.norm_scale,
            "seed": self.seed,
            "tensors": [{"name": k, "shape": list(v.shape)} for k, v in self.tensors.items()],
            "version": VERSION,
        }

    def to_bytes(self):
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
        for v in self.tensors.values():
            parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
        return b"".join(parts)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob):
        if len(blob) < 16 or blob[:8] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack("<II", blob[8:16])
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        try:
            head = json.loads(blob[16:16 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        off = 16 + hlen
        tensors = {}
        for spec in head["tensors"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape, dtype=np.int64)) * 4
            if off + n > len(blob):
                raise CheckpointError(f"truncated payload for {spec['name']}")
            tensors[spec["name"]] = np.frombuffer(blob[off:off + n], dtype="<f4").reshape(shape).astype(np.float32)
            off += n
        if off != len(blob):
            raise CheckpointError("trailing bytes after payloads")
        return cls(head["arch"], tensors, head["norm_scale"], head["seed"], head["config"], head.get("extra", {}))

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def module_state(module, prefix):
    """Parameters then buffers of ``module`` as float32 arrays."""
    out = {}
    for name, p in module.named_parameters(prefix):
        out[name] = np.asarray(p.data, dtype=np.float32)
    for name, b in module.named_buffers(prefix):
        out[name] = np.asarray(b, dtype=np.float32)
    return out


def load_module_state(module, tensors, prefix):
    """Copy arrays into ``module``; every name and shape must match exactly."""
    expected = {}
    for name, p in module.named_parameters(prefix):
        expected[name] = p.data
    for name, b in module.named_buffers(prefix):
        expected[name] = b
    present = {k for k in tensors if k.startswith(prefix)}
    if present != set(expected):
        missing = sorted(set(expected) - present)[:3]
        unknown = sorted(present - set(expected))[:3]
        raise CheckpointError(f"architecture mismatch: missing {missing}, unexpected {unknown}")
    for name, dst in expected.items():
        src = tensors[name]
        if src.shape != dst.shape:
            raise CheckpointError(f"{name}: shape {src.shape} != {dst.shape}")
        dst[...] = src
