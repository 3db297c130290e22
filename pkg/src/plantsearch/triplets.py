"""Nearest-neighbor band sampling of training triplets.

A query document takes its positives from the top of its cosine
neighbor list, hard negatives from a band deeper in the list, and easy
negatives uniformly from the rest of the corpus. Band positions live in
the half-open interval (k - c, k]: with c=3 and k=10 that is the 8th,
9th and 10th neighbor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence, TypeVar

import numpy as np

from .ann import FlatIndex, knn
from .kg import KnowledgeGraph, NodeKind
from .storage import read_json_lines, write_json_lines

logger = logging.getLogger(__name__)

T = TypeVar("T")


class NegKind(str, Enum):
    EASY = "easy"
    HARD = "hard"


@dataclass
class SamplingParams:
    k_pos: int = 2
    c_pos: int = 2
    k_hard: int = 50
    c_hard: int = 1
    c_easy: int = 1
    min_text_chars: int = 100
    rng_seed: int = 0

    def validate(self) -> None:
        for band, k, c in (("positive", self.k_pos, self.c_pos), ("hard", self.k_hard, self.c_hard)):
            if k < 1:
                raise ValueError(f"{band} band k must be >= 1, got {k}")
            if not (1 <= c <= k):
                raise ValueError(f"{band} band needs 1 <= c <= k, got c={c}, k={k}")
        if self.c_easy < 1:
            raise ValueError(f"c_easy must be >= 1, got {self.c_easy}")
        # Disjoint bands keep the three triplet ids distinct.
        if self.k_pos > self.k_hard - self.c_hard:
            raise ValueError("positive band overlaps hard-negative band")
        if self.min_text_chars < 0:
            raise ValueError(f"min_text_chars must be >= 0, got {self.min_text_chars}")


@dataclass(frozen=True)
class Triplet:
    query: str
    positive: str
    negative: str
    neg_kind: NegKind


@dataclass
class TripletSet:
    triplets: list[Triplet]
    params: SamplingParams
    index_fingerprint: str
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.triplets)


def band_sample(neighbors: Sequence[T], k: int, c: int) -> list[T]:
    """Entries at 1-based positions k-c+1 .. k of an ordered neighbor list."""
    if not (1 <= c <= k):
        raise ValueError(f"need 1 <= c <= k, got c={c}, k={k}")
    if len(neighbors) < k:
        raise ValueError(f"need at least {k} neighbors, got {len(neighbors)}")
    return list(neighbors[k - c : k])


def filtered_random_sample(
    corpus: Sequence[str] | set[str],
    excluded: set[str],
    c: int,
    rng: np.random.Generator,
) -> list[str]:
    """c ids drawn uniformly without replacement from corpus minus excluded."""
    candidates = sorted(set(corpus) - excluded)
    if len(candidates) < c:
        raise ValueError(
            f"cannot draw {c} ids from {len(candidates)} remaining candidates"
        )
    picks = rng.choice(len(candidates), size=c, replace=False)
    return [candidates[i] for i in picks]


def sample_triplets(index: FlatIndex, g: KnowledgeGraph, p: SamplingParams) -> TripletSet:
    """Per-query easy and hard triplets over an indexed text-log corpus.

    Only logs with at least ``min_text_chars`` characters participate,
    as query, positive or negative alike. Queries are visited in sorted
    id order; one shared seeded generator makes the output
    deterministic. A query is skipped (and counted) when it is too
    short or when the eligible corpus cannot fill the hard band plus an
    easy draw.
    """
    p.validate()
    for node_id in index.ids:
        if node_id not in g.nodes:
            raise KeyError(f"indexed id {node_id!r} not in graph")
        if g.nodes[node_id].kind is not NodeKind.TEXT_LOG:
            raise ValueError(f"indexed id {node_id!r} is not a text log")

    corpus = sorted(index.ids)
    eligible = {i for i in corpus if len(g.nodes[i].text) >= p.min_text_chars}
    rng = np.random.default_rng(p.rng_seed)
    triplets: list[Triplet] = []
    skipped = 0
    for query in corpus:
        if query not in eligible:
            skipped += 1
            continue
        # Hard band needs k_hard neighbors and the easy draw needs c_easy
        # ids beyond them; skip rather than clamp when the corpus is small.
        if len(eligible) - 1 < p.k_hard + p.c_easy:
            skipped += 1
            continue
        neighbors = [n for n, _ in knn(index, query, p.k_hard, among=eligible)]
        positives = band_sample(neighbors, p.k_pos, p.c_pos)
        hard = band_sample(neighbors, p.k_hard, p.c_hard)
        easy = filtered_random_sample(
            eligible, excluded=set(neighbors) | {query}, c=p.c_easy, rng=rng
        )
        emitted = 0
        for neg in easy:
            triplets.append(Triplet(query, positives[emitted % len(positives)], neg, NegKind.EASY))
            emitted += 1
        for neg in hard:
            triplets.append(Triplet(query, positives[emitted % len(positives)], neg, NegKind.HARD))
            emitted += 1
    if skipped:
        logger.info("sample_triplets: skipped %d of %d queries", skipped, len(corpus))
    return TripletSet(triplets, p, index.fingerprint(), skipped)


def save_triplets(tset: TripletSet, path: str | Path) -> None:
    write_json_lines(
        path,
        (
            {"q": t.query, "pos": t.positive, "neg": t.negative, "neg_kind": t.neg_kind.value}
            for t in tset.triplets
        ),
    )


def load_triplets(
    path: str | Path, params: SamplingParams | None = None, index_fingerprint: str = ""
) -> TripletSet:
    triplets = [
        Triplet(r["q"], r["pos"], r["neg"], NegKind(r["neg_kind"]))
        for r in read_json_lines(path)
    ]
    return TripletSet(triplets, params or SamplingParams(), index_fingerprint)
