"""On-disk formats shared across the pipeline.

Embedding matrices use a small binary container: a 16-byte header
(magic ``GEMB``, u32 version, u32 rows, u32 dim, little-endian)
followed by rows x dim float32 values, with node ids in a line-JSON
sidecar mapping row -> id.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"GEMB"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class EmbeddingFileError(ValueError):
    """Corrupt or truncated embedding file."""


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {matrix.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise EmbeddingFileError(f"{path}: truncated header")
        magic, version, rows, dim = _HEADER.unpack(header)
        if magic != MAGIC:
            raise EmbeddingFileError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise EmbeddingFileError(f"{path}: unsupported version {version}")
        payload = fh.read()
    expected = rows * dim * 4
    if len(payload) != expected:
        raise EmbeddingFileError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(rows, dim).astype(np.float64)


def write_ids(path: str | Path, ids: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row, node_id in enumerate(ids):
            fh.write(json.dumps({"row": row, "id": node_id}, sort_keys=True) + "\n")


def read_ids(path: str | Path) -> list[str]:
    ids: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            ids[int(obj["row"])] = str(obj["id"])
    if sorted(ids) != list(range(len(ids))):
        raise EmbeddingFileError(f"{path}: non-contiguous row numbering")
    return [ids[i] for i in range(len(ids))]


def write_json_lines(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_json_lines(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def derive_seed(seed: int, label: str) -> int:
    """Stable per-stage seed derived from a run seed and a stage label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
