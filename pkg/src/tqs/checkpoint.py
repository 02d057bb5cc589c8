"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   7 bytes  b"TQSCKPT"
    format  u32
    hlen    u64      length of the canonical UTF-8 JSON header
    header  bytes    model config, family description, symmetries,
                     training scalars, seed lineage
    count   u32      number of named arrays
    per array:
        name_len u16, name UTF-8, rank u8, dims u64 * rank,
        data float64 little-endian, row-major

Arrays hold the model parameters followed by the Adam moment stores
("adam.m/<name>", "adam.v/<name>").  Loading reproduces forward outputs
bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TQSCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    header: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def format_version(self) -> int:
        return int(self.header.get("format", FORMAT_VERSION))

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not k.startswith("adam.")}

    def moment_arrays(self, kind: str) -> dict[str, np.ndarray]:
        prefix = f"adam.{kind}/"
        return {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_checkpoint(path, ck: Checkpoint) -> None:
    path = Path(path)
    header = dict(ck.header)
    header["format"] = FORMAT_VERSION
    blob = canonical_json(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(ck.arrays)))
        for name, arr in ck.arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(data.tobytes())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            size = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(dims)
            arrays[name] = data.copy()
    return Checkpoint(header=header, arrays=arrays)
