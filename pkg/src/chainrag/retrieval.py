"""Sparse (BM25), dense (cosine) and hybrid (reciprocal rank fusion) retrieval.

Every ranking is total and deterministic: chunks are ordered by descending
score, ties by ascending ``chunk_id``.
"""

from __future__ import annotations

import json
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import ContextChunk

METHODS = ("sparse", "dense", "hybrid")
DEFAULT_K = 5
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_RRF_C = 60

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class ScoredContextList:
    entries: tuple[tuple[ContextChunk, float], ...]
    k: int
    method: str

    def __post_init__(self):
        if len(self.entries) > self.k:
            raise ValueError("more entries than requested depth")
        ids = [c.chunk_id for c, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate chunk ids in scored list")
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def chunks(self) -> list[ContextChunk]:
        return [c for c, _ in self.entries]

    @property
    def chunk_ids(self) -> list[str]:
        return [c.chunk_id for c, _ in self.entries]


@dataclass
class SparseIndexStats:
    doc_count: int
    avg_len: float
    term_postings: dict[str, list[tuple[str, int]]]
    chunk_lens: dict[str, int]
    _tf: dict[str, dict[str, int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._tf = {}
        for term, postings in self.term_postings.items():
            for chunk_id, tf in postings:
                self._tf.setdefault(chunk_id, {})[term] = tf

    def df(self, term: str) -> int:
        return len(self.term_postings.get(term, ()))

    def tf(self, term: str, chunk_id: str) -> int:
        return self._tf.get(chunk_id, {}).get(term, 0)

    def to_json(self) -> dict:
        return {
            "doc_count": self.doc_count,
            "avg_len": self.avg_len,
            "term_postings": {t: [list(p) for p in ps] for t, ps in self.term_postings.items()},
            "chunk_lens": self.chunk_lens,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SparseIndexStats":
        return cls(
            doc_count=data["doc_count"],
            avg_len=data["avg_len"],
            term_postings={t: [(c, tf) for c, tf in ps] for t, ps in data["term_postings"].items()},
            chunk_lens=data["chunk_lens"],
        )


def build_sparse_index(chunks: Sequence[ContextChunk]) -> SparseIndexStats:
    if not chunks:
        raise ValueError("cannot index an empty corpus")
    postings: dict[str, list[tuple[str, int]]] = {}
    lens = {}
    for chunk in chunks:
        tokens = tokenize(chunk.text)
        lens[chunk.chunk_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((chunk.chunk_id, tf))
    return SparseIndexStats(
        doc_count=len(chunks),
        avg_len=sum(lens.values()) / len(lens),
        term_postings=postings,
        chunk_lens=lens,
    )


def idf(df: int, n: int) -> float:
    return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def score_bm25(query_terms: Sequence[str], chunk_id: str, stats: SparseIndexStats,
               k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> float:
    """Okapi BM25; a repeated query term contributes once per occurrence."""
    if chunk_id not in stats.chunk_lens:
        raise KeyError(f"unknown chunk_id {chunk_id!r}")
    length_norm = 1.0 - b + b * stats.chunk_lens[chunk_id] / stats.avg_len if stats.avg_len else 1.0
    score = 0.0
    for term in query_terms:
        tf = stats.tf(term, chunk_id)
        if tf:
            score += idf(stats.df(term), stats.doc_count) * tf * (k1 + 1) / (tf + k1 * length_norm)
    return score


def dense_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class EmbeddingRecord:
    chunk_id: str
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


class EmbeddingStore:
    def __init__(self, records: Iterable[EmbeddingRecord]):
        records = list(records)
        dims = {r.dim for r in records}
        if len(dims) > 1:
            raise ValueError(f"embedding dims differ: {sorted(dims)}")
        self.chunk_ids = [r.chunk_id for r in records]
        self.dim = dims.pop() if dims else 0
        self.matrix = np.vstack([r.vector for r in records]) if records else np.zeros((0, 0))
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("embedding vectors must be finite")
        norms = np.linalg.norm(self.matrix, axis=1) if records else np.zeros(0)
        if np.any(norms == 0):
            raise ValueError("zero embedding vector")
        self._unit = self.matrix / norms[:, None] if records else self.matrix
        self._row = {cid: i for i, cid in enumerate(self.chunk_ids)}

    @classmethod
    def build(cls, chunks: Sequence[ContextChunk], embedder, batch_size: int = 64) -> "EmbeddingStore":
        records = []
        for start in range(0, len(chunks), batch_size):
            batch = chunks[start:start + batch_size]
            vectors = embedder.embed([c.text for c in batch])
            records.extend(EmbeddingRecord(c.chunk_id, np.asarray(v, dtype=float)) for c, v in zip(batch, vectors))
        return cls(records)

    def subset(self, chunk_ids: Iterable[str]) -> "EmbeddingStore":
        return EmbeddingStore(EmbeddingRecord(cid, self.matrix[self._row[cid]]) for cid in chunk_ids)

    def similarities(self, query_vector) -> np.ndarray:
        q = np.asarray(query_vector, dtype=float)
        nq = np.linalg.norm(q)
        if q.shape != (self.dim,) or nq == 0:
            raise ValueError("query vector has wrong dim or zero norm")
        return np.clip(self._unit @ (q / nq), -1.0, 1.0)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for cid, vec in zip(self.chunk_ids, self.matrix):
                f.write(json.dumps({"chunk_id": cid, "dim": self.dim, "vector": [float(x) for x in vec]}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        records = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    r = json.loads(line)
                    vec = np.asarray(r["vector"], dtype=float)
                    if vec.shape != (r["dim"],):
                        raise ValueError(f"{path}: {r['chunk_id']}: vector length != dim")
                    records.append(EmbeddingRecord(r["chunk_id"], vec))
        return cls(records)


def _ranked(scores: dict[str, float]) -> list[tuple[str, float]]:
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


class Retriever:
    """Ranks a fixed set of chunks for a query.

    ``embedder`` is anything with ``embed(list[str]) -> list[vector]``; it is
    only needed for the dense and hybrid methods.
    """

    def __init__(self, chunks: Sequence[ContextChunk], *, embedder=None,
                 embeddings: EmbeddingStore | None = None, sparse: SparseIndexStats | None = None,
                 k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.chunks = {c.chunk_id: c for c in chunks}
        self.sparse = sparse if sparse is not None else build_sparse_index(list(chunks))
        self.embedder = embedder
        self.embeddings = embeddings
        self.k1 = k1
        self.b = b
        self._subsets: dict[tuple[str, ...], Retriever] = {}
        self._lock = threading.Lock()

    def ensure_embeddings(self) -> EmbeddingStore:
        if self.embeddings is None:
            if self.embedder is None:
                raise RuntimeError("dense retrieval needs an embedder or a prebuilt embedding store")
            self.embeddings = EmbeddingStore.build(list(self.chunks.values()), self.embedder)
        return self.embeddings

    def subset(self, doc_ids: Sequence[str]) -> "Retriever":
        """A retriever over just these documents' chunks, with its own BM25 statistics."""
        key = tuple(doc_ids)
        with self._lock:
            sub = self._subsets.get(key)
            if sub is None:
                wanted = set(doc_ids)
                chunks = [c for c in self.chunks.values() if c.doc_id in wanted]
                if not chunks:
                    raise ValueError("question pool has no chunks in this corpus")
                embeddings = self.embeddings.subset(c.chunk_id for c in chunks) if self.embeddings else None
                sub = Retriever(chunks, embedder=self.embedder, embeddings=embeddings, k1=self.k1, b=self.b)
                self._subsets[key] = sub
            return sub

    def sparse_ranking(self, query: str) -> list[tuple[str, float]]:
        terms = tokenize(query)
        candidates = {cid for t in set(terms) for cid, _ in self.sparse.term_postings.get(t, ())}
        scores = {cid: 0.0 for cid in self.chunks}
        for cid in candidates:
            scores[cid] = score_bm25(terms, cid, self.sparse, self.k1, self.b)
        return _ranked(scores)

    def dense_ranking(self, query: str) -> list[tuple[str, float]]:
        store = self.ensure_embeddings()
        (qvec,) = self.embedder.embed([query])
        sims = store.similarities(qvec)
        return _ranked({cid: float(s) for cid, s in zip(store.chunk_ids, sims)})

    def hybrid_ranking(self, query: str, c: float = DEFAULT_RRF_C) -> list[tuple[str, float]]:
        fused = {cid: 0.0 for cid in self.chunks}
        for ranking in (self.sparse_ranking(query), self.dense_ranking(query)):
            for rank, (cid, _) in enumerate(ranking, start=1):
                fused[cid] += 1.0 / (c + rank)
        return _ranked(fused)

    def retrieve(self, query: str, k: int = DEFAULT_K, method: str = "sparse",
                 fusion_params: dict | None = None) -> ScoredContextList:
        if k < 1:
            raise ValueError(f"k must be >= 1 (got {k})")
        if method == "sparse":
            ranking = self.sparse_ranking(query)
        elif method == "dense":
            ranking = self.dense_ranking(query)
        elif method == "hybrid":
            ranking = self.hybrid_ranking(query, **(fusion_params or {}))
        else:
            raise ValueError(f"unknown retrieval method {method!r}; expected one of {METHODS}")
        return ScoredContextList(
            entries=tuple((self.chunks[cid], score) for cid, score in ranking[:k]),
            k=k,
            method=method,
        )
