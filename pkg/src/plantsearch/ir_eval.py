"""Retrieval benchmark evaluation: MAP@10, MRR@10, nDCG@10 across plants.

Rankings come from encoder cosine against the full plant corpus, ties
broken by ascending doc id. AP@k uses the min(|relevant|, k)
normalizer, so a perfect top-k is 1.0 even when k is smaller than the
relevant set; the report header states this.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .encoder import EncoderParams, encode
from .storage import read_json_lines, write_json_lines

logger = logging.getLogger(__name__)

AP_NORMALIZER_NOTE = "AP@k normalizer: min(|relevant|, k)"


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str


@dataclass
class BenchmarkPlant:
    plant_id: str
    corpus: dict[str, str]  # doc id -> text
    queries: list[Query]
    qrels: dict[str, dict[str, int]]  # query id -> doc id -> grade
    training: bool = False


@dataclass
class Benchmark:
    plants: list[BenchmarkPlant]

    def validate(self) -> None:
        seen_plants: set[str] = set()
        seen_docs: set[str] = set()
        seen_queries: set[str] = set()
        for plant in self.plants:
            if plant.plant_id in seen_plants:
                raise ValueError(f"duplicate plant id {plant.plant_id!r}")
            seen_plants.add(plant.plant_id)
            for doc_id in plant.corpus:
                if doc_id in seen_docs:
                    raise ValueError(f"doc id {doc_id!r} appears in two plants")
                seen_docs.add(doc_id)
            query_ids = {q.query_id for q in plant.queries}
            for q in plant.queries:
                if q.query_id in seen_queries:
                    raise ValueError(f"duplicate query id {q.query_id!r}")
                seen_queries.add(q.query_id)
            for query_id, graded in plant.qrels.items():
                if query_id not in query_ids:
                    raise ValueError(
                        f"qrels reference unknown query {query_id!r} in {plant.plant_id}"
                    )
                for doc_id, grade in graded.items():
                    if doc_id not in plant.corpus:
                        raise ValueError(
                            f"qrels reference unknown doc {doc_id!r} in {plant.plant_id}"
                        )
                    if grade < 0:
                        raise ValueError(f"negative grade for {query_id!r}/{doc_id!r}")
            for q in plant.queries:
                graded = plant.qrels.get(q.query_id, {})
                if not any(g > 0 for g in graded.values()):
                    raise ValueError(f"query {q.query_id!r} has no relevant document")


def rank_corpus(p: EncoderParams, query_text: str, corpus: Mapping[str, str]) -> list[str]:
    """All doc ids by descending encoder cosine, ties by ascending id."""
    doc_ids = sorted(corpus)
    if not doc_ids:
        raise ValueError("empty corpus")
    q = encode(p, query_text)
    matrix = np.stack([encode(p, corpus[d]) for d in doc_ids])
    scores = _cosine_against(matrix, q)
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))
    return [doc_ids[i] for i in order]


def _cosine_against(matrix: np.ndarray, q: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(q)
    norms = np.linalg.norm(matrix, axis=1)
    if qn == 0.0:
        return np.zeros(matrix.shape[0])
    safe = np.where(norms == 0.0, 1.0, norms)
    scores = (matrix @ q) / (safe * qn)
    scores[norms == 0.0] = 0.0
    return scores


def ap_at_k(ranking: Sequence[str], relevant: set[str], k: int) -> float:
    """Average precision over the top k with a min(|relevant|, k) normalizer."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise ValueError("empty relevant set")
    hits = 0
    precision_sum = 0.0
    for i, doc_id in enumerate(ranking[:k], start=1):
        if doc_id in relevant:
            hits += 1
            precision_sum += hits / i
    return precision_sum / min(len(relevant), k)


def rr_at_k(ranking: Sequence[str], relevant: set[str], k: int) -> float:
    """Reciprocal rank of the first relevant doc within the top k, else 0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not relevant:
        raise ValueError("empty relevant set")
    for i, doc_id in enumerate(ranking[:k], start=1):
        if doc_id in relevant:
            return 1.0 / i
    return 0.0


def ndcg_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    """nDCG with DCG = sum grade / log2(position + 1) over the top k.

    Any grade > 0 counts as relevant; the ideal ranking sorts grades
    descending. Queries with no relevant doc are an error.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    positive = sorted((g for g in grades.values() if g > 0), reverse=True)
    if not positive:
        raise ValueError("no relevant documents in grades")
    dcg = 0.0
    for i, doc_id in enumerate(ranking[:k], start=1):
        g = grades.get(doc_id, 0)
        if g > 0:
            dcg += g / math.log2(i + 1)
    ideal = sum(g / math.log2(i + 1) for i, g in enumerate(positive[:k], start=1))
    return dcg / ideal


@dataclass
class PlantMetrics:
    map10: float
    mrr10: float
    ndcg10: float


@dataclass
class EvalReport:
    per_plant: dict[str, PlantMetrics]
    mean_map10: float
    mean_mrr10: float
    mean_ndcg10: float
    mean: float  # mean of the three cross-plant means
    note: str = AP_NORMALIZER_NOTE

    def to_dict(self) -> dict:
        return {
            "note": self.note,
            "per_plant": {
                pid: {"map10": m.map10, "mrr10": m.mrr10, "ndcg10": m.ndcg10}
                for pid, m in sorted(self.per_plant.items())
            },
            "mean_map10": self.mean_map10,
            "mean_mrr10": self.mean_mrr10,
            "mean_ndcg10": self.mean_ndcg10,
            "mean": self.mean,
        }

    def format_table(self) -> str:
        """Aligned text table, metrics scaled by 100."""
        lines = [f"# {self.note}"]
        header = f"{'plant':<12}{'MAP@10':>10}{'MRR@10':>10}{'nDCG@10':>10}"
        lines.append(header)
        lines.append("-" * len(header))
        for pid in sorted(self.per_plant):
            m = self.per_plant[pid]
            lines.append(
                f"{pid:<12}{100 * m.map10:>10.2f}{100 * m.mrr10:>10.2f}{100 * m.ndcg10:>10.2f}"
            )
        lines.append("-" * len(header))
        lines.append(
            f"{'mean':<12}{100 * self.mean_map10:>10.2f}{100 * self.mean_mrr10:>10.2f}"
            f"{100 * self.mean_ndcg10:>10.2f}"
        )
        lines.append(f"{'Mean':<12}{100 * self.mean:>10.2f}")
        return "\n".join(lines)


def evaluate_run(p: EncoderParams, b: Benchmark, k: int = 10) -> EvalReport:
    """Macro-averaged retrieval metrics: per plant, then unweighted across plants.

    Documents and queries are encoded once per plant; rankings match
    :func:`rank_corpus` exactly (same scores, same tie-break).
    """
    b.validate()
    if not b.plants:
        raise ValueError("benchmark has no plants")
    per_plant: dict[str, PlantMetrics] = {}
    for plant in b.plants:
        doc_ids = sorted(plant.corpus)
        matrix = np.stack([encode(p, plant.corpus[d]) for d in doc_ids])
        aps, rrs, ndcgs = [], [], []
        for q in plant.queries:
            scores = _cosine_against(matrix, encode(p, q.text))
            order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))
            ranking = [doc_ids[i] for i in order]
            grades = plant.qrels.get(q.query_id, {})
            relevant = {d for d, g in grades.items() if g > 0}
            aps.append(ap_at_k(ranking, relevant, k))
            rrs.append(rr_at_k(ranking, relevant, k))
            ndcgs.append(ndcg_at_k(ranking, grades, k))
        per_plant[plant.plant_id] = PlantMetrics(
            map10=float(np.mean(aps)), mrr10=float(np.mean(rrs)), ndcg10=float(np.mean(ndcgs))
        )
    mean_map = float(np.mean([m.map10 for m in per_plant.values()]))
    mean_mrr = float(np.mean([m.mrr10 for m in per_plant.values()]))
    mean_ndcg = float(np.mean([m.ndcg10 for m in per_plant.values()]))
    return EvalReport(
        per_plant=per_plant,
        mean_map10=mean_map,
        mean_mrr10=mean_mrr,
        mean_ndcg10=mean_ndcg,
        mean=float(np.mean([mean_map, mean_mrr, mean_ndcg])),
    )


# ---------------------------------------------------------------------------
# File formats: TREC qrels and line-JSON queries


def save_qrels(qrels: Mapping[str, Mapping[str, int]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for query_id in sorted(qrels):
            for doc_id in sorted(qrels[query_id]):
                fh.write(f"{query_id} 0 {doc_id} {qrels[query_id][doc_id]}\n")


def load_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{line_no}: expected 4 fields, got {len(parts)}")
            query_id, _, doc_id, grade = parts
            out.setdefault(query_id, {})[doc_id] = int(grade)
    return out


def save_queries(queries: Mapping[str, list[Query]], path: str | Path) -> None:
    """Write queries grouped per plant id."""
    records = []
    for plant_id in sorted(queries):
        for q in queries[plant_id]:
            records.append({"query_id": q.query_id, "text": q.text, "plant": plant_id})
    write_json_lines(path, records)


def load_queries(path: str | Path) -> dict[str, list[Query]]:
    out: dict[str, list[Query]] = {}
    for rec in read_json_lines(path):
        out.setdefault(str(rec["plant"]), []).append(
            Query(str(rec["query_id"]), str(rec["text"]))
        )
    return out
