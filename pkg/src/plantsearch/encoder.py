"""Hashed bag-of-features text encoder.

Features are lowercased word unigrams plus character 3-grams of each
word with boundary markers (the word "pumpe" contributes "<pumpe>" and
the 3-grams of "<pumpe>"). Feature strings are hashed with FNV-1a-64
into a fixed bucket table; a text's vector is the count-weighted mean
of its bucket rows, so the encoder is linear in its parameters.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .storage import read_matrix, write_matrix

DEFAULT_DIM = 64
DEFAULT_VOCAB_BUCKETS = 1 << 16
HASH_ALGO = "fnv1a-64"

_WORD_RE = re.compile(r"\w+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def word_tokens(text: str) -> list[str]:
    """Lowercased word tokens (unicode word characters, umlauts included)."""
    return _WORD_RE.findall(text.lower())


def feature_strings(text: str) -> list[str]:
    """All feature strings of a text, with multiplicity."""
    feats: list[str] = []
    for word in word_tokens(text):
        marked = f"<{word}>"
        feats.append(marked)
        feats.extend(marked[i : i + 3] for i in range(len(marked) - 2))
    return feats


@dataclass(frozen=True)
class TokenFeatures:
    """Multiset of hashed feature ids, stored as (unique ids, counts)."""

    bucket_ids: np.ndarray  # int64, sorted unique
    counts: np.ndarray  # int64, parallel to bucket_ids
    total: int


def featurize(text: str, vocab_buckets: int = DEFAULT_VOCAB_BUCKETS) -> TokenFeatures:
    feats = feature_strings(text)
    if not feats:
        empty = np.empty(0, dtype=np.int64)
        return TokenFeatures(empty, empty.copy(), 0)
    hashed = np.fromiter(
        (fnv1a_64(f.encode("utf-8")) % vocab_buckets for f in feats),
        dtype=np.int64,
        count=len(feats),
    )
    ids, counts = np.unique(hashed, return_counts=True)
    return TokenFeatures(ids, counts, len(feats))


@dataclass
class EncoderParams:
    """Bucket embedding table plus the hashing configuration.

    Pooling is fixed to the mean; the field exists so persisted headers
    stay self-describing.
    """

    embedding_table: np.ndarray  # (vocab_buckets, dim) float64
    vocab_buckets: int = DEFAULT_VOCAB_BUCKETS
    pooling: str = "mean"

    def __post_init__(self) -> None:
        if self.pooling != "mean":
            raise ValueError(f"unsupported pooling {self.pooling!r}")
        if self.embedding_table.ndim != 2 or self.embedding_table.shape[0] != self.vocab_buckets:
            raise ValueError(
                f"embedding table shape {self.embedding_table.shape} does not match "
                f"vocab_buckets={self.vocab_buckets}"
            )
        if not np.isfinite(self.embedding_table).all():
            raise ValueError("embedding table contains non-finite values")

    @property
    def dim(self) -> int:
        return int(self.embedding_table.shape[1])

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.embedding_table.copy(), self.vocab_buckets, self.pooling)


def init_encoder(
    dim: int = DEFAULT_DIM,
    vocab_buckets: int = DEFAULT_VOCAB_BUCKETS,
    seed: int = 0,
) -> EncoderParams:
    """Seeded Gaussian(0, 1/sqrt(dim)) bucket table."""
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if vocab_buckets < 1:
        raise ValueError(f"vocab_buckets must be positive, got {vocab_buckets}")
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab_buckets, dim))
    return EncoderParams(table, vocab_buckets)


def encode_features(p: EncoderParams, feats: TokenFeatures) -> np.ndarray:
    if feats.total == 0:
        return np.zeros(p.dim, dtype=np.float64)
    rows = p.embedding_table[feats.bucket_ids]
    return (feats.counts.astype(np.float64) @ rows) / feats.total


def encode(p: EncoderParams, text: str) -> np.ndarray:
    """Mean-pooled vector of a text; the empty feature set maps to zeros."""
    return encode_features(p, featurize(text, p.vocab_buckets))


def encode_batch(p: EncoderParams, texts: list[str]) -> np.ndarray:
    # Row-wise loop on purpose: bitwise identical to encoding one at a time.
    out = np.zeros((len(texts), p.dim), dtype=np.float64)
    for i, text in enumerate(texts):
        out[i] = encode(p, text)
    return out


def save_encoder(p: EncoderParams, matrix_path: str | Path, header_path: str | Path) -> None:
    write_matrix(matrix_path, p.embedding_table)
    header = {"dim": p.dim, "vocab_buckets": p.vocab_buckets, "hash_algo": HASH_ALGO,
              "pooling": p.pooling}
    Path(header_path).write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")


def load_encoder(matrix_path: str | Path, header_path: str | Path) -> EncoderParams:
    header = json.loads(Path(header_path).read_text(encoding="utf-8"))
    if header.get("hash_algo") != HASH_ALGO:
        raise ValueError(f"unsupported hash algorithm {header.get('hash_algo')!r}")
    table = read_matrix(matrix_path)
    if table.shape != (header["vocab_buckets"], header["dim"]):
        raise ValueError(
            f"matrix shape {table.shape} does not match header "
            f"({header['vocab_buckets']}, {header['dim']})"
        )
    return EncoderParams(table, int(header["vocab_buckets"]), header.get("pooling", "mean"))
