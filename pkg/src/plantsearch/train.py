"""Two-stage contrastive fine-tuning of the hashed text encoder.

Stage one (document similarity) fits triplets under a euclidean margin
loss; stage two (bi-encoder) fits query-document pairs under the
multiple negatives ranking loss with in-batch negatives. Both stages
update only the encoder's bucket table, and because the encoder is
linear in that table the chain rule reduces to scattering each text
vector gradient onto the text's buckets with its mean-pooling weights.
"""

from __future__ import annotations

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .encoder import EncoderParams, TokenFeatures, featurize
from .losses import NonFiniteError, mnr_loss_grad, triplet_loss_grad
from .pairs import PairLabel, QueryDocPair
from .triplets import TripletSet

logger = logging.getLogger(__name__)


@dataclass
class DocSimConfig:
    margin: float = 1.0
    epochs: int = 3
    learning_rate: float = 0.1
    batch_size: int = 16
    rng_seed: int = 0
    weight_decay: float = 0.0
    optimizer: str = "sgd"  # "sgd" or "adam"

    def validate(self) -> None:
        _validate_common(self.epochs, self.learning_rate, self.batch_size,
                         self.weight_decay, self.optimizer)
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


@dataclass
class BiEncoderConfig:
    epochs: int = 5
    batch_size: int = 64
    warmup_steps: int = 1000
    similarity_scale: float = 20.0
    learning_rate: float = 0.05
    rng_seed: int = 0
    weight_decay: float = 0.0
    optimizer: str = "sgd"

    def validate(self) -> None:
        _validate_common(self.epochs, self.learning_rate, self.batch_size,
                         self.weight_decay, self.optimizer)
        if self.warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.similarity_scale <= 0:
            raise ValueError(f"similarity_scale must be positive, got {self.similarity_scale}")


def _validate_common(epochs, learning_rate, batch_size, weight_decay, optimizer) -> None:
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if weight_decay < 0:
        raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"optimizer must be 'sgd' or 'adam', got {optimizer!r}")


def effective_lr(base: float, step: int, warmup_steps: int) -> float:
    """Linear warmup to the base rate, then constant (step is 1-based)."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return base
    return base * step / warmup_steps


@dataclass
class TrainResult:
    params: EncoderParams
    epoch_losses: list[float]
    steps: int
    wall_time: float


class _Sgd:
    def __init__(self, weight_decay: float):
        self.weight_decay = weight_decay

    def step(self, table: np.ndarray, rows: np.ndarray, grads: np.ndarray, lr: float) -> None:
        if self.weight_decay:
            grads = grads + self.weight_decay * table[rows]
        table[rows] -= lr * grads


class _Adam:
    """Adam applied lazily: moment updates touch only the rows in the step."""

    def __init__(self, weight_decay: float, shape: tuple[int, int],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, table: np.ndarray, rows: np.ndarray, grads: np.ndarray, lr: float) -> None:
        if self.weight_decay:
            grads = grads + self.weight_decay * table[rows]
        self.t += 1
        self.m[rows] = self.beta1 * self.m[rows] + (1 - self.beta1) * grads
        self.v[rows] = self.beta2 * self.v[rows] + (1 - self.beta2) * grads**2
        m_hat = self.m[rows] / (1 - self.beta1**self.t)
        v_hat = self.v[rows] / (1 - self.beta2**self.t)
        table[rows] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(name: str, weight_decay: float, shape: tuple[int, int]):
    if name == "adam":
        return _Adam(weight_decay, shape)
    return _Sgd(weight_decay)


def _scatter(acc: dict[int, np.ndarray], feats: TokenFeatures, g_vec: np.ndarray) -> None:
    # d encode / d table[b] = count_b / total, so the vector gradient
    # lands on each bucket with its pooling weight.
    if feats.total == 0:
        return
    weights = feats.counts.astype(np.float64) / feats.total
    for b, w in zip(feats.bucket_ids.tolist(), weights.tolist()):
        got = acc.get(b)
        if got is None:
            acc[b] = w * g_vec
        else:
            got += w * g_vec


def _flush(acc: dict[int, np.ndarray], table: np.ndarray, opt, lr: float) -> None:
    if not acc:
        return
    rows = np.fromiter(acc.keys(), dtype=np.int64, count=len(acc))
    grads = np.stack(list(acc.values()))
    opt.step(table, rows, grads, lr)


def _encode_cached(table: np.ndarray, feats: TokenFeatures, dim: int) -> np.ndarray:
    if feats.total == 0:
        return np.zeros(dim)
    return (feats.counts.astype(np.float64) @ table[feats.bucket_ids]) / feats.total


def train_docsim(
    p: EncoderParams,
    tset: TripletSet,
    texts: Mapping[str, str],
    cfg: DocSimConfig,
) -> TrainResult:
    """Triplet-margin SGD over document triplets; returns updated params.

    Texts are resolved once through ``texts`` (missing ids raise
    KeyError) and featurized once; mini-batches follow a seeded shuffle
    each epoch and the mean epoch loss is recorded in the result.
    """
    cfg.validate()
    start = time.perf_counter()
    out = p.copy()
    if cfg.epochs == 0 or not tset.triplets:
        return TrainResult(out, [], 0, time.perf_counter() - start)

    feats: dict[str, TokenFeatures] = {}
    for t in tset.triplets:
        for doc_id in (t.query, t.positive, t.negative):
            if doc_id not in feats:
                if doc_id not in texts:
                    raise KeyError(f"no text for document {doc_id!r}")
                feats[doc_id] = featurize(texts[doc_id], out.vocab_buckets)

    rng = np.random.default_rng(cfg.rng_seed)
    opt = _make_optimizer(cfg.optimizer, cfg.weight_decay, out.embedding_table.shape)
    table = out.embedding_table
    n = len(tset.triplets)
    epoch_losses: list[float] = []
    steps = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = [tset.triplets[i] for i in order[lo : lo + cfg.batch_size]]
            acc: dict[int, np.ndarray] = {}
            for t in batch:
                fq, fp, fn = feats[t.query], feats[t.positive], feats[t.negative]
                dq = _encode_cached(table, fq, out.dim)
                dp = _encode_cached(table, fp, out.dim)
                dn = _encode_cached(table, fn, out.dim)
                loss, gq, gp, gn = triplet_loss_grad(dq, dp, dn, cfg.margin)
                total_loss += loss
                if loss == 0.0:
                    continue
                coeff = 1.0 / len(batch)
                _scatter(acc, fq, coeff * gq)
                _scatter(acc, fp, coeff * gp)
                _scatter(acc, fn, coeff * gn)
            _flush(acc, table, opt, cfg.learning_rate)
            steps += 1
        if not np.isfinite(total_loss):
            raise NonFiniteError(f"non-finite docsim loss in epoch {epoch}")
        epoch_losses.append(total_loss / n)
        logger.debug("docsim epoch %d mean loss %.6f", epoch, epoch_losses[-1])
    if not np.isfinite(table).all():
        raise NonFiniteError("non-finite encoder table after docsim training")
    return TrainResult(out, epoch_losses, steps, time.perf_counter() - start)


def _pack_batches(
    positives: Sequence[QueryDocPair], order: np.ndarray, batch_size: int
) -> list[list[QueryDocPair]]:
    """Greedy packing that never repeats a query text within a batch."""
    batches: list[list[QueryDocPair]] = []
    queries: list[set[str]] = []
    for i in order:
        pair = positives[i]
        for b, qset in zip(batches, queries):
            if len(b) < batch_size and pair.query_text not in qset:
                b.append(pair)
                qset.add(pair.query_text)
                break
        else:
            batches.append([pair])
            queries.append({pair.query_text})
    return batches


def train_biencoder(
    p: EncoderParams,
    pairs: Sequence[QueryDocPair],
    texts: Mapping[str, str],
    cfg: BiEncoderConfig,
) -> TrainResult:
    """MNR training on positive pairs with in-batch plus explicit negatives.

    Positive rows form the batches (duplicate queries spread across
    batches); each query's label-0 docs are appended to its batch as
    extra negative columns. The learning rate follows a linear warmup
    over ``warmup_steps`` optimizer steps, then stays at the base rate.
    """
    cfg.validate()
    start = time.perf_counter()
    out = p.copy()
    positives = [pr for pr in pairs if pr.label is PairLabel.POSITIVE]
    if not positives:
        raise ValueError("no positive pairs to train on")
    negatives: dict[str, list[str]] = defaultdict(list)
    for pr in pairs:
        if pr.label is PairLabel.NEGATIVE and pr.doc_id not in negatives[pr.query_text]:
            negatives[pr.query_text].append(pr.doc_id)

    doc_feats: dict[str, TokenFeatures] = {}
    for pr in pairs:
        if pr.doc_id not in doc_feats:
            if pr.doc_id not in texts:
                raise KeyError(f"no text for document {pr.doc_id!r}")
            doc_feats[pr.doc_id] = featurize(texts[pr.doc_id], out.vocab_buckets)
    query_feats = {
        q: featurize(q, out.vocab_buckets)
        for q in {pr.query_text for pr in pairs}
    }

    if cfg.epochs == 0:
        return TrainResult(out, [], 0, time.perf_counter() - start)

    rng = np.random.default_rng(cfg.rng_seed)
    opt = _make_optimizer(cfg.optimizer, cfg.weight_decay, out.embedding_table.shape)
    table = out.embedding_table
    epoch_losses: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(positives))
        loss_sum = 0.0
        rows_seen = 0
        for batch in _pack_batches(positives, order, cfg.batch_size):
            batch_docs = [pr.doc_id for pr in batch]
            extras: list[str] = []
            for pr in batch:
                for doc_id in negatives.get(pr.query_text, ()):
                    if doc_id != pr.doc_id and doc_id not in batch_docs and doc_id not in extras:
                        extras.append(doc_id)
            all_docs = batch_docs + extras
            q_mat = np.stack([
                _encode_cached(table, query_feats[pr.query_text], out.dim) for pr in batch
            ])
            d_mat = np.stack([
                _encode_cached(table, doc_feats[d], out.dim) for d in all_docs
            ])
            loss, g_q, g_d = mnr_loss_grad(q_mat, d_mat, cfg.similarity_scale)
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite bi-encoder loss in epoch {epoch}")
            loss_sum += loss * len(batch)
            rows_seen += len(batch)
            step += 1
            lr = effective_lr(cfg.learning_rate, step, cfg.warmup_steps)
            acc: dict[int, np.ndarray] = {}
            for i, pr in enumerate(batch):
                _scatter(acc, query_feats[pr.query_text], g_q[i])
            for j, doc_id in enumerate(all_docs):
                _scatter(acc, doc_feats[doc_id], g_d[j])
            _flush(acc, table, opt, lr)
        epoch_losses.append(loss_sum / rows_seen)
        logger.debug("bi-encoder epoch %d mean loss %.6f", epoch, epoch_losses[-1])
    if not np.isfinite(table).all():
        raise NonFiniteError("non-finite encoder table after bi-encoder training")
    return TrainResult(out, epoch_losses, step, time.perf_counter() - start)
