"""Learned pairwise relationship model and the walk reward built on it.

Two independent heads (substitute / complement) share the same design: a
soft mask gate over the product's document vector, a small stack of
standardized linear layers refining it, and an MLP classifier over the
refined vectors of both products concatenated with their pooled category
vectors.  The walk reward for a candidate product is the maximum of the two
heads, scored symmetrically (max over both argument orders).

Everything is float64 numpy with hand-written backprop; `bce_loss` computes
the plain sum-form binary cross entropy used by the training objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import EmptyCategory, EmptyText, MissingFeature
from .graph import (COMPLEMENT, SUBSTITUTE, EntityKind, EntityRef,
                    KnowledgeGraph, Relation)
from .ingest import ProductRecord
from .nn import (clip_gradients, relu, sigmoid, standardize,
                 standardize_backward, uniform_init)
from .text import WordVectors, idf_table, tokenize, top_tfidf

logger = logging.getLogger(__name__)

DEFAULT_PRODUCT_DIM = 300
DEFAULT_CATEGORY_DIM = 100
DEFAULT_LAYERS = 2
DEFAULT_HIDDEN = 256


def category_documents(products: Sequence[ProductRecord],
                       graph: KnowledgeGraph) -> List[List[str]]:
    """Token list per category id: the titles of its member products."""
    docs: List[List[str]] = [[] for _ in range(graph.population(EntityKind.CATEGORY))]
    for i, rec in enumerate(products):
        for r, e in graph.neighbors(EntityRef(EntityKind.PRODUCT, i), Relation.BELONG_TO):
            docs[e.id].extend(tokenize(rec.title))
    return docs


def category_feature(doc: Sequence[str], corpus_idf: Mapping[str, float],
                     vectors: WordVectors, count: int) -> Tuple[List[str], np.ndarray]:
    """Top-``count`` tf-idf words of one category document and the mean of
    their word vectors."""
    if not doc:
        raise EmptyCategory("category has no title text")
    words = top_tfidf(doc, corpus_idf, count)
    return words, vectors.mean(words)


def product_feature(record: ProductRecord, embedder) -> np.ndarray:
    """Document vector of a product: description text, title as fallback."""
    text = record.text()
    if not tokenize(text):
        raise EmptyText(f"{record.external_id} has no usable text")
    return embedder.embed(text)


class FeatureBank:
    """Precomputed per-product document vectors and pooled category vectors."""

    def __init__(self, product_vectors: np.ndarray, category_vectors: np.ndarray,
                 product_category: np.ndarray, missing: np.ndarray,
                 category_words: List[List[str]]):
        self.product_vectors = product_vectors       # (P, dp)
        self.category_vectors = category_vectors     # (C, dc)
        self.product_category = product_category     # (P, dc)
        self.missing = missing                       # (P,) bool
        self.category_words = category_words

    @property
    def product_dim(self) -> int:
        return self.product_vectors.shape[1]

    @property
    def category_dim(self) -> int:
        return self.product_category.shape[1]

    def check(self, i: int) -> None:
        if not 0 <= i < self.product_vectors.shape[0]:
            raise MissingFeature(f"product {i} outside the bank")
        if self.missing[i]:
            raise MissingFeature(f"product {i} has no document vector")


def _center_columns(arr: np.ndarray, rows: np.ndarray) -> None:
    """Per-feature standardization across the given rows, in place.

    Document vectors share a large common component (products share most of
    the vocabulary); without removing it the pair classifier sees nearly
    identical inputs everywhere and collapses to a constant.
    """
    if not np.any(rows):
        return
    mu = arr[rows].mean(axis=0)
    sd = arr[rows].std(axis=0)
    arr[rows] = (arr[rows] - mu) / np.maximum(sd, 1e-8)


def build_feature_bank(products: Sequence[ProductRecord], graph: KnowledgeGraph,
                       vectors: WordVectors, embedder,
                       feature_count: int = 15) -> FeatureBank:
    """Assemble the bank: fit the embedder on all product documents, embed
    each product, and pool top tf-idf title words per category."""
    texts = [p.text() for p in products]
    embedder.fit(texts)
    n = len(products)
    dp = embedder.out_dim
    prod_vecs = np.zeros((n, dp))
    missing = np.zeros(n, dtype=bool)
    for i, rec in enumerate(products):
        try:
            if hasattr(embedder, "embed_id"):
                prod_vecs[i] = embedder.embed_id(rec.external_id)
            else:
                prod_vecs[i] = product_feature(rec, embedder)
        except EmptyText:
            missing[i] = True
    _center_columns(prod_vecs, ~missing)

    docs = category_documents(products, graph)
    n_cat = len(docs)
    cat_vecs = np.zeros((n_cat, vectors.dim))
    cat_words: List[List[str]] = []
    if docs:
        idf = idf_table([d for d in docs]) if any(docs) else {}
        for c, doc in enumerate(docs):
            if doc:
                words, pooled = category_feature(doc, idf, vectors, feature_count)
            else:
                words, pooled = [], np.zeros(vectors.dim)
            cat_words.append(words)
            cat_vecs[c] = pooled

    prod_cat = np.zeros((n, vectors.dim))
    for i in range(n):
        cats = [e.id for _, e in graph.neighbors(EntityRef(EntityKind.PRODUCT, i),
                                                 Relation.BELONG_TO)]
        if cats:
            prod_cat[i] = cat_vecs[cats].mean(axis=0)
    _center_columns(prod_cat, np.ones(n, dtype=bool))
    return FeatureBank(prod_vecs, cat_vecs, prod_cat, missing, cat_words)


class RelationClassifier:
    """One relationship head: mask gate, refinement stack, pair classifier."""

    def __init__(self, product_dim: int = DEFAULT_PRODUCT_DIM,
                 category_dim: int = DEFAULT_CATEGORY_DIM,
                 layers: int = DEFAULT_LAYERS, hidden: int = DEFAULT_HIDDEN,
                 seed: int = 0, tag: str = SUBSTITUTE):
        self.product_dim = product_dim
        self.category_dim = category_dim
        self.layers = layers
        self.hidden = hidden
        self.tag = tag
        # symmetric pair encoding of the refined vectors and of the pooled
        # category vectors: sum, elementwise product, squared difference.
        # Similarity must be linearly readable or SGD cannot fit the pair
        # signal at desk scale, and the symmetric form both removes pair
        # order and resists memorizing individual training pairs.
        din = 3 * product_dim + 3 * category_dim
        rng = np.random.default_rng(seed)
        self.params: Dict[str, np.ndarray] = {
            "Wm": uniform_init(rng, product_dim, (product_dim, product_dim)),
            "bm": np.zeros(product_dim),
            "U1": uniform_init(rng, din, (din, hidden)),
            "c1": np.zeros(hidden),
            "U2": uniform_init(rng, hidden, (hidden, hidden)),
            "c2": np.zeros(hidden),
            "u3": uniform_init(rng, hidden, (hidden,)),
            "c3": np.zeros(1),
        }
        for k in range(1, layers + 1):
            self.params[f"W{k}"] = uniform_init(rng, product_dim, (product_dim, product_dim))
            self.params[f"b{k}"] = np.zeros(product_dim)
        self.train_losses: List[float] = []

    # -- forward ----------------------------------------------------------

    def mask_attention(self, V: np.ndarray) -> np.ndarray:
        """Soft mask gate: sigmoid(W v + b) elementwise-multiplied into v."""
        arr = np.atleast_2d(np.asarray(V, dtype=np.float64))
        out, _ = self._mask_forward(arr)
        return out[0] if np.asarray(V).ndim == 1 else out

    def _mask_forward(self, V: np.ndarray):
        m = V @ self.params["Wm"] + self.params["bm"]
        a = sigmoid(m)
        return a * V, (V, a)

    def refine(self, V: np.ndarray) -> np.ndarray:
        """Refined product vector: mask gate then the standardized linear
        stack (ReLU between layers, none after the last)."""
        out, _ = self._refine_forward(np.atleast_2d(np.asarray(V, dtype=np.float64)))
        return out[0] if np.asarray(V).ndim == 1 else out

    def _refine_forward(self, V: np.ndarray):
        y, mask_cache = self._mask_forward(V)
        caches = []
        for k in range(1, self.layers + 1):
            u = y @ self.params[f"W{k}"] + self.params[f"b{k}"]
            nrm, ncache = standardize(u)
            post = relu(nrm) if k < self.layers else nrm
            caches.append((y, nrm, ncache, k < self.layers))
            y = post
        return y, (mask_cache, caches)

    def _refine_backward(self, dY: np.ndarray, cache, grads: Dict[str, np.ndarray]) -> None:
        mask_cache, caches = cache
        for k in range(self.layers, 0, -1):
            y_in, nrm, ncache, had_relu = caches[k - 1]
            dn = dY * (nrm > 0) if had_relu else dY
            du = standardize_backward(dn, ncache)
            grads[f"W{k}"] += y_in.T @ du
            grads[f"b{k}"] += du.sum(axis=0)
            dY = du @ self.params[f"W{k}"].T
        V, a = mask_cache
        da = dY * V
        dm = da * a * (1.0 - a)
        grads["Wm"] += V.T @ dm
        grads["bm"] += dm.sum(axis=0)

    @staticmethod
    def _pair_encode(A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return np.concatenate([A + B, A * B, (A - B) ** 2], axis=1)

    def _pair_forward(self, Vi, Vj, Ci, Cj):
        Ei, cache_i = self._refine_forward(Vi)
        Ej, cache_j = self._refine_forward(Vj)
        X = np.concatenate([self._pair_encode(Ei, Ej), self._pair_encode(Ci, Cj)], axis=1)
        h1 = X @ self.params["U1"] + self.params["c1"]
        r1 = relu(h1)
        h2 = r1 @ self.params["U2"] + self.params["c2"]
        r2 = relu(h2)
        o = r2 @ self.params["u3"] + self.params["c3"][0]
        p = sigmoid(o)
        return p, (cache_i, cache_j, Ei, Ej, X, h1, r1, h2, r2)

    def predict_batch(self, bank: FeatureBank, pairs: np.ndarray) -> np.ndarray:
        """Probabilities for an (N, 2) array of product id pairs (one
        direction; see PairScorer for the symmetric score)."""
        pairs = np.atleast_2d(np.asarray(pairs, dtype=np.int64))
        for i in np.unique(pairs):
            bank.check(int(i))
        Vi = bank.product_vectors[pairs[:, 0]]
        Vj = bank.product_vectors[pairs[:, 1]]
        Ci = bank.product_category[pairs[:, 0]]
        Cj = bank.product_category[pairs[:, 1]]
        p, _ = self._pair_forward(Vi, Vj, Ci, Cj)
        return p

    def predict(self, bank: FeatureBank, i: int, j: int) -> float:
        return float(self.predict_batch(bank, np.array([[i, j]]))[0])

    # -- training ---------------------------------------------------------

    def bce_loss(self, bank: FeatureBank, pairs: np.ndarray, labels: np.ndarray) -> float:
        """Sum-form binary cross entropy over labeled pairs."""
        p = self.predict_batch(bank, pairs)
        y = np.asarray(labels, dtype=np.float64)
        p = np.clip(p, 1e-12, 1.0 - 1e-12)
        return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))

    def gradients(self, bank: FeatureBank, pairs: np.ndarray,
                  labels: np.ndarray) -> Tuple[Dict[str, np.ndarray], float]:
        """Mean-reduced BCE gradient over the batch, plus the mean loss."""
        pairs = np.atleast_2d(np.asarray(pairs, dtype=np.int64))
        y = np.asarray(labels, dtype=np.float64)
        n = pairs.shape[0]
        Vi = bank.product_vectors[pairs[:, 0]]
        Vj = bank.product_vectors[pairs[:, 1]]
        Ci = bank.product_category[pairs[:, 0]]
        Cj = bank.product_category[pairs[:, 1]]
        p, (cache_i, cache_j, Ei, Ej, X, h1, r1, h2, r2) = self._pair_forward(Vi, Vj, Ci, Cj)
        pc = np.clip(p, 1e-12, 1.0 - 1e-12)
        loss = float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        do = (p - y) / n
        grads["u3"] += r2.T @ do
        grads["c3"] += do.sum(keepdims=True)
        dr2 = np.outer(do, self.params["u3"])
        dh2 = dr2 * (h2 > 0)
        grads["U2"] += r1.T @ dh2
        grads["c2"] += dh2.sum(axis=0)
        dr1 = dh2 @ self.params["U2"].T
        dh1 = dr1 * (h1 > 0)
        grads["U1"] += X.T @ dh1
        grads["c1"] += dh1.sum(axis=0)
        dX = dh1 @ self.params["U1"].T
        dp = self.product_dim
        dsum = dX[:, :dp]
        dprod = dX[:, dp:2 * dp]
        dsq = dX[:, 2 * dp:3 * dp]
        diff = Ei - Ej
        dEi = dsum + dprod * Ej + 2.0 * dsq * diff
        dEj = dsum + dprod * Ei - 2.0 * dsq * diff
        self._refine_backward(dEi, cache_i, grads)
        self._refine_backward(dEj, cache_j, grads)
        return grads, loss

    def loss(self, bank: FeatureBank, pairs: np.ndarray, labels: np.ndarray) -> float:
        """Mean-reduced BCE matching :meth:`gradients` (for gradient checks)."""
        p = np.clip(self.predict_batch(bank, pairs), 1e-12, 1.0 - 1e-12)
        y = np.asarray(labels, dtype=np.float64)
        return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))

    def apply_gradients(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        for k, g in grads.items():
            self.params[k] -= lr * g


def train_pair_model(model: RelationClassifier, bank: FeatureBank,
                     positives: Sequence[Tuple[int, int]], negatives: int = 1,
                     epochs: int = 100, lr: float = 0.05, batch_size: int = 16,
                     seed: int = 0, n_products: Optional[int] = None,
                     clip_norm: float = 5.0) -> RelationClassifier:
    """Fit one head on positive pairs against per-epoch resampled non-links.

    Gradients are clipped to ``clip_norm`` (global L2); plain SGD diverges on
    the heavy-tailed interaction features otherwise.
    """
    if not positives:
        raise ValueError("need at least one positive pair")
    n_products = n_products or bank.product_vectors.shape[0]
    pos_set: Set[Tuple[int, int]] = set()
    for i, j in positives:
        pos_set.add((i, j))
        pos_set.add((j, i))
    usable = [i for i in range(n_products) if not bank.missing[i]]
    rng = np.random.default_rng([seed, 0x70616972])
    positives = list(positives)
    for epoch in range(epochs):
        samples: List[Tuple[int, int, int]] = []
        for i, j in positives:
            samples.append((i, j, 1))
            for _ in range(negatives):
                for _attempt in range(100):
                    jj = usable[int(rng.integers(len(usable)))]
                    if jj != i and (i, jj) not in pos_set:
                        samples.append((i, jj, 0))
                        break
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(samples), batch_size):
            batch = [samples[k] for k in order[lo:lo + batch_size]]
            pairs = np.array([(a, b) for a, b, _ in batch], dtype=np.int64)
            labels = np.array([y for _, _, y in batch], dtype=np.float64)
            grads, loss = model.gradients(bank, pairs, labels)
            clip_gradients(grads, clip_norm)
            model.apply_gradients(grads, lr)
            epoch_loss += loss
            n_batches += 1
        model.train_losses.append(epoch_loss / max(1, n_batches))
        logger.info("pair model [%s] epoch %d loss %.5f", model.tag, epoch,
                    model.train_losses[-1])
    return model


class PairScorer:
    """Reward model: both heads, symmetric max scoring, memo cache and a
    call counter for experiment manifests."""

    name = "pair_model"

    def __init__(self, substitute: RelationClassifier, complement: RelationClassifier,
                 bank: FeatureBank):
        self.heads = {SUBSTITUTE: substitute, COMPLEMENT: complement}
        self.bank = bank
        self.calls = 0
        self._cache: Dict[Tuple[int, int, str], float] = {}

    def head_score(self, i: int, j: int, tag: str) -> float:
        """Symmetric head probability: max over both argument orders."""
        key = (min(i, j), max(i, j), tag)
        hit = self._cache.get(key)
        if hit is None:
            head = self.heads[tag]
            hit = float(np.max(head.predict_batch(self.bank, np.array([[i, j], [j, i]]))))
            self._cache[key] = hit
        return hit

    def reward(self, v0: EntityRef, e: EntityRef) -> float:
        """Walk reward: the better of the two relationship probabilities."""
        return max(self.head_score(v0.id, e.id, SUBSTITUTE),
                   self.head_score(v0.id, e.id, COMPLEMENT))

    def score_pairs(self, pairs: Sequence[Tuple[EntityRef, EntityRef]]) -> np.ndarray:
        self.calls += len(pairs)
        return np.array([self.reward(v0, e) for v0, e in pairs])

    def score_many(self, v0_id: int, candidates: Sequence[int], tag: str) -> np.ndarray:
        """Vectorized symmetric head score of one source against many
        candidates (used by ranking and metric sweeps)."""
        if len(candidates) == 0:
            return np.zeros(0)
        self.calls += len(candidates)
        cand = np.asarray(candidates, dtype=np.int64)
        fwd = np.stack([np.full_like(cand, v0_id), cand], axis=1)
        bwd = np.stack([cand, np.full_like(cand, v0_id)], axis=1)
        head = self.heads[tag]
        return np.maximum(head.predict_batch(self.bank, fwd),
                          head.predict_batch(self.bank, bwd))
