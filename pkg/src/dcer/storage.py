"""Binary named-tensor container and checkpoint persistence.

Container layout (all integers little-endian):

    magic  b"DCTC"
    version u32 (currently 1)
    count   u32
    entries: name_len u16 | name utf-8 | dtype u8 (0 = float32) |
             ndim u8 | dims u32[ndim] | payload f32 row-major

Round trips are bit-exact; unknown versions, bad magic, and truncated
files are rejected before any tensor is returned.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import CheckpointMismatchError, FormatError

MAGIC = b"DCTC"
VERSION = 1
DTYPE_F32 = 0


def write_container(path, tensors: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        # note: ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.asarray(arr, dtype="<f4")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"truncated container: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def read_container(path) -> Dict[str, np.ndarray]:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise FormatError(f"bad magic in {path}; not a tensor container")
    version, count = struct.unpack("<II", reader.take(8))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", reader.take(2))
        name = reader.take(name_len).decode("utf-8")
        dtype, ndim = struct.unpack("<BB", reader.take(2))
        if dtype != DTYPE_F32:
            raise FormatError(f"unknown dtype code {dtype} for tensor {name!r}")
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        n = int(np.prod(dims)) if ndim else 1
        payload = reader.take(4 * n)
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if reader.pos != len(reader.blob):
        raise FormatError(
            f"{len(reader.blob) - reader.pos} trailing bytes after last entry"
        )
    return out


# ---------------------------------------------------------------------------
# checkpoints: model parameters + optimizer moments + JSON sidecar
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, optimizer=None, config: Optional[dict] = None,
                    meta: Optional[dict] = None) -> None:
    """Write `<path>` (container) and `<path>.json` (sidecar)."""
    path = Path(path)
    tensors = {name: p.data for name, p in model.named_parameters()}
    sidecar = {
        "format": VERSION,
        "param_names": sorted(tensors),
        "config": config or {},
        "meta": meta or {},
    }
    if optimizer is not None:
        for name, _ in optimizer.params:
            tensors[f"optim.m.{name}"] = optimizer.m[name]
            tensors[f"optim.v.{name}"] = optimizer.v[name]
        sidecar["optim_steps"] = optimizer.steps
    write_container(path, tensors)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_checkpoint(path, model, optimizer=None) -> dict:
    """Restore parameters (and optimizer state) bit-exactly; returns sidecar."""
    path = Path(path)
    tensors = read_container(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    current = {name: p for name, p in model.named_parameters()}
    stored = {n for n in tensors if not n.startswith("optim.")}
    missing = set(current) - stored
    extra = stored - set(current)
    if missing or extra:
        raise CheckpointMismatchError(missing, extra)
    for name, p in current.items():
        arr = tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointMismatchError(
                {f"{name} (shape {p.data.shape}, stored {arr.shape})"}, set()
            )
        p.data = arr
        p.grad = None
    if optimizer is not None:
        steps = sidecar.get("optim_steps", {})
        for name, _ in optimizer.params:
            m_key, v_key = f"optim.m.{name}", f"optim.v.{name}"
            if m_key not in tensors or v_key not in tensors:
                raise CheckpointMismatchError({m_key}, set())
            optimizer.m[name] = tensors[m_key]
            optimizer.v[name] = tensors[v_key]
            optimizer.steps[name] = int(steps.get(name, 0))
    return sidecar
