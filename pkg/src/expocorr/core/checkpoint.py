"""Checkpoint directories: one raw little-endian float32 file per tensor.

``manifest.txt`` holds one tab-separated row per tensor::

    name    shape    nbytes    sha256

plus ``#meta key=value`` lines for scalar run state (Adam step counts etc.).
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Mapping

import numpy as np

MANIFEST = "manifest.txt"
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    def __init__(self, name: str, message: str):
        self.name = name
        super().__init__(f"{name}: {message}")


def _filename(name: str) -> str:
    return name.replace("/", "_") + ".f32"


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"#meta {key}={value}")
    for name in sorted(tensors):
        raw = np.ascontiguousarray(tensors[name], dtype=_DTYPE).tobytes()
        (root / _filename(name)).write_bytes(raw)
        shape = ",".join(str(s) for s in np.shape(tensors[name])) or "scalar"
        lines.append(f"{name}\t{shape}\t{len(raw)}\t{hashlib.sha256(raw).hexdigest()}")
    (root / MANIFEST).write_text("\n".join(lines) + "\n")
    return root


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise CheckpointError(MANIFEST, f"missing in {root}")
    tensors: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#meta "):
            key, _, value = line[len("#meta ") :].partition("=")
            meta[key] = value
            continue
        try:
            name, shape_txt, nbytes_txt, digest = line.split("\t")
        except ValueError:
            raise CheckpointError(MANIFEST, f"malformed row {line!r}") from None
        shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split(","))
        file = root / _filename(name)
        if not file.is_file():
            raise CheckpointError(name, f"file {file.name} missing")
        raw = file.read_bytes()
        expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if len(raw) != int(nbytes_txt) or len(raw) != expected:
            raise CheckpointError(name, f"expected {expected} bytes for shape {shape}, found {len(raw)}")
        if hashlib.sha256(raw).hexdigest() != digest:
            raise CheckpointError(name, "checksum mismatch")
        tensors[name] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(np.float32)
    return tensors, meta
