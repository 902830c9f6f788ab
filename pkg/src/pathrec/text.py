"""Tokenization, TF-IDF statistics, word vectors and document embedders.

TF-IDF here is deliberately plain: tf is the raw count inside one document,
idf = ln(N / (1 + df)) + 1 over the corpus the caller supplies (the +1 keeps
idf positive so constant-idf corpora still rank by term frequency), ties
broken lexicographically.  Ranking helpers are shared by the review-based
feature word selection and by the per-category title documents.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np

from .errors import EmptyCorpus, EmptyText

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")
MIN_TOKEN_LEN = 3


def tokenize(text: str) -> List[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 3."""
    if not text:
        return []
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if len(t) >= MIN_TOKEN_LEN]


def document_frequencies(docs: Sequence[Sequence[str]]) -> Counter:
    df: Counter = Counter()
    for doc in docs:
        df.update(set(doc))
    return df


def idf_table(docs: Sequence[Sequence[str]]) -> Dict[str, float]:
    """idf(w) = ln(N / (1 + df(w))) + 1 over the given document collection."""
    n = len(docs)
    if n == 0:
        raise EmptyCorpus("no documents")
    return {w: math.log(n / (1.0 + df)) + 1.0
            for w, df in document_frequencies(docs).items()}


def top_tfidf(doc: Sequence[str], idf: Mapping[str, float], count: int) -> List[str]:
    """Top ``count`` tokens of one document by tf*idf, ties lexicographic."""
    if count < 1:
        raise ValueError("count must be >= 1")
    tf = Counter(doc)
    scored = sorted(((-(tf[w] * idf.get(w, 0.0)), w) for w in tf), key=lambda p: (p[0], p[1]))
    return [w for _, w in scored[:count]]


def _token_digest(token: str) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")


class WordVectors:
    """Fixed word-vector table.

    Either loaded from the usual text format (``token f1 ... f_d`` per line)
    or, in hashed test mode, generated deterministically per token from a
    seed.  Unknown tokens map to the zero vector in file mode.
    """

    def __init__(self, dim: int = 100, seed: int = 0, table: Dict[str, np.ndarray] | None = None):
        self.dim = dim
        self.seed = seed
        self._table = table
        self._hash_cache: Dict[str, np.ndarray] = {}

    @classmethod
    def from_file(cls, path) -> "WordVectors":
        table: Dict[str, np.ndarray] = {}
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                vec = np.asarray([float(x) for x in parts[1:]], dtype=np.float64)
                if dim is None:
                    dim = vec.shape[0]
                elif vec.shape[0] != dim:
                    continue
                table[parts[0]] = vec
        if dim is None:
            raise EmptyCorpus(f"no vectors in {path}")
        return cls(dim=dim, table=table)

    def get(self, token: str) -> np.ndarray:
        if self._table is not None:
            vec = self._table.get(token)
            return vec if vec is not None else np.zeros(self.dim)
        cached = self._hash_cache.get(token)
        if cached is None:
            rng = np.random.default_rng([self.seed, _token_digest(token)])
            vec = rng.standard_normal(self.dim)
            cached = vec / np.linalg.norm(vec)
            self._hash_cache[token] = cached
        return cached

    def mean(self, tokens: Iterable[str]) -> np.ndarray:
        vecs = [self.get(t) for t in tokens]
        if not vecs:
            return np.zeros(self.dim)
        return np.mean(vecs, axis=0)


class TfidfProjectionEmbedder:
    """Default document embedder: tf-idf weighted word-vector average,
    pushed through a fixed seeded random projection to ``out_dim``.

    Stands in for an external paragraph-embedding model; callers that have
    real document vectors can use :class:`PrecomputedEmbedder` instead.
    Weights use a smoothed, always-positive idf so the average stays a
    convex-ish combination.
    """

    def __init__(self, vectors: WordVectors, out_dim: int = 300, seed: int = 0):
        self.vectors = vectors
        self.out_dim = out_dim
        self.seed = seed
        rng = np.random.default_rng([seed, 0x70726F6A])
        self._projection = rng.standard_normal((vectors.dim, out_dim)) / math.sqrt(out_dim)
        self._idf: Dict[str, float] | None = None
        self._n_docs = 0

    def fit(self, texts: Sequence[str]) -> "TfidfProjectionEmbedder":
        docs = [tokenize(t) for t in texts]
        self._n_docs = len(docs)
        df = document_frequencies(docs)
        self._idf = {w: math.log((1.0 + self._n_docs) / (1.0 + c)) + 1.0 for w, c in df.items()}
        return self

    def _weight(self, token: str, tf: int) -> float:
        idf = self._idf.get(token, math.log(1.0 + self._n_docs) + 1.0) if self._idf else 1.0
        return tf * idf

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise EmptyText("document has no usable tokens")
        tf = Counter(tokens)
        acc = np.zeros(self.vectors.dim)
        total = 0.0
        for token, count in sorted(tf.items()):
            w = self._weight(token, count)
            acc += w * self.vectors.get(token)
            total += w
        if total > 0:
            acc /= total
        return acc @ self._projection


class PrecomputedEmbedder:
    """Document embedder backed by an externally produced vector table,
    keyed by product external id."""

    def __init__(self, table: Mapping[str, np.ndarray], out_dim: int = 300):
        self.out_dim = out_dim
        self._table = dict(table)

    def fit(self, texts: Sequence[str]) -> "PrecomputedEmbedder":
        return self

    def embed_id(self, external_id: str) -> np.ndarray:
        vec = self._table.get(external_id)
        if vec is None:
            raise EmptyText(f"no precomputed vector for {external_id}")
        return np.asarray(vec, dtype=np.float64)
