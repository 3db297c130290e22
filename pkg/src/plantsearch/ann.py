"""Exact nearest-neighbor search over L2-normalized embedding rows."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .graph_embed import EmbeddingTable


@dataclass
class FlatIndex:
    """Brute-force cosine index; rows are unit-norm (zero rows kept as-is)."""

    ids: list[str]
    matrix: np.ndarray  # (n, dim) float64, rows normalized
    degenerate: frozenset[str]  # ids whose vector had zero norm

    def __post_init__(self) -> None:
        self._row = {node_id: i for i, node_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._row

    def row(self, node_id: str) -> int:
        return self._row[node_id]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for node_id in self.ids:
            h.update(node_id.encode("utf-8"))
            h.update(b"\0")
        h.update(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def build_index(emb: EmbeddingTable, eligible: Iterable[str]) -> FlatIndex:
    """Index the eligible subset of an embedding table, rows in sorted-id order.

    Zero-norm vectors stay zero rows and are flagged degenerate; they score
    0 against everything instead of poisoning the normalization.
    """
    ids = sorted(set(eligible))
    if not ids:
        raise ValueError("no eligible ids to index")
    missing = [i for i in ids if i not in emb]
    if missing:
        raise KeyError(f"ids not in embedding table: {missing[:5]!r}")
    matrix = np.stack([emb.vector(i) for i in ids]).astype(np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    degenerate = frozenset(ids[i] for i in np.nonzero(norms == 0.0)[0])
    safe = np.where(norms == 0.0, 1.0, norms)
    return FlatIndex(ids, matrix / safe[:, None], degenerate)


def knn(
    idx: FlatIndex, query_id: str, k: int, among: Iterable[str] | None = None
) -> list[tuple[str, float]]:
    """Top-k cosine neighbors of an indexed node, query excluded.

    Sorted by descending cosine, ties broken by ascending id, so the
    result is a total order. ``among`` restricts candidates to a subset
    of the indexed ids. k must not exceed the candidate count.
    """
    if query_id not in idx:
        raise KeyError(f"query id {query_id!r} not in index")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if among is None:
        cand_rows = [i for i in range(len(idx)) if idx.ids[i] != query_id]
    else:
        cand_rows = []
        for node_id in set(among):
            if node_id == query_id:
                continue
            if node_id not in idx:
                raise KeyError(f"candidate id {node_id!r} not in index")
            cand_rows.append(idx.row(node_id))
    if k > len(cand_rows):
        raise ValueError(f"k={k} exceeds {len(cand_rows)} available candidates")
    scores = idx.matrix[cand_rows] @ idx.matrix[idx.row(query_id)]
    ranked = sorted(
        range(len(cand_rows)), key=lambda j: (-scores[j], idx.ids[cand_rows[j]])
    )
    return [(idx.ids[cand_rows[j]], float(scores[j])) for j in ranked[:k]]
