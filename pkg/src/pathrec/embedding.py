"""Translational graph embeddings and the pruning score they back.

Training is classic TransE: margin ranking on L2 distances with one
corrupted tail per positive and post-update row normalization.  Because the
action scoring form is a dot product plus a per-entity bias, the biases are
fitted jointly through an auxiliary logistic term on those dot scores
(vectors receive no gradient from it).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import UnknownEntity
from .graph import (SCHEMA, EntityKind, EntityRef, KnowledgeGraph,
                    PRODUCT_RELATION, Relation)
from .nn import sigmoid

logger = logging.getLogger(__name__)


class EmbeddingTable:
    """Entity/relation vectors plus per-entity scalar biases.

    Entities of all kinds share one matrix through per-kind offsets, which
    keeps training vectorizable; lookups stay typed through EntityRef.
    """

    def __init__(self, counts: Dict[EntityKind, int], dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.counts = {k: int(counts.get(k, 0)) for k in EntityKind}
        self.offsets: Dict[EntityKind, int] = {}
        total = 0
        for k in EntityKind:
            self.offsets[k] = total
            total += self.counts[k]
        self.total = total
        rng = np.random.default_rng(seed)
        bound = 6.0 / np.sqrt(dim)
        self.entity = rng.uniform(-bound, bound, size=(total, dim))
        self.entity /= np.linalg.norm(self.entity, axis=1, keepdims=True)
        self.rel = rng.uniform(-bound, bound, size=(len(Relation), dim))
        self.rel /= np.linalg.norm(self.rel, axis=1, keepdims=True)
        self.bias = np.zeros(total)
        self.train_losses: List[float] = []

    def index(self, e: EntityRef) -> int:
        if not 0 <= e.id < self.counts[e.kind]:
            raise UnknownEntity(f"{e!r} not in embedding table")
        return self.offsets[e.kind] + e.id

    def indices(self, kind: EntityKind, ids: np.ndarray) -> np.ndarray:
        if ids.size and (ids.min() < 0 or ids.max() >= self.counts[kind]):
            raise UnknownEntity(f"{kind.name} ids out of range")
        return self.offsets[kind] + ids

    def entity_vector(self, e: EntityRef) -> np.ndarray:
        return self.entity[self.index(e)]

    def relation_vector(self, r: Relation) -> np.ndarray:
        return self.rel[int(r)]

    def bias_of(self, e: EntityRef) -> float:
        return float(self.bias[self.index(e)])


def _triple_arrays(g: KnowledgeGraph) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(head global index base info) arrays: head ids, relation ids, tail ids,
    tail kinds, in deterministic order."""
    heads, rels, tails, tkinds = [], [], [], []
    for r in Relation:
        hk, tk = SCHEMA[r]
        for h, t in g.pairs(r):
            heads.append(h)
            rels.append(int(r))
            tails.append(t)
            tkinds.append(int(tk))
    return (np.asarray(heads, dtype=np.int64), np.asarray(rels, dtype=np.int64),
            np.asarray(tails, dtype=np.int64), np.asarray(tkinds, dtype=np.int64))


def train_embeddings(g: KnowledgeGraph, dim: int = 100, epochs: int = 60,
                     negatives: int = 1, lr: float = 0.05, margin: float = 1.0,
                     seed: int = 0, batch_size: int = 512,
                     lr_decay: float = 0.05) -> EmbeddingTable:
    """Train the table on all graph triples; deterministic under ``seed``.

    The learning rate decays harmonically per epoch.  The per-epoch loss
    kept on ``table.train_losses`` is measured against a fixed evaluation
    negative sample so the logged curve reflects parameter progress, not
    negative-sampling noise.
    """
    counts = {k: g.population(k) for k in EntityKind}
    table = EmbeddingTable(counts, dim, seed=seed)
    h_raw, rels, t_raw, tkinds = _triple_arrays(g)
    n = h_raw.size
    if n == 0:
        logger.warning("graph has no edges; returning initialized table")
        return table
    head_kinds = np.asarray([int(SCHEMA[Relation(r)][0]) for r in rels], dtype=np.int64)
    kind_offsets = np.asarray([table.offsets[k] for k in EntityKind], dtype=np.int64)
    kind_counts = np.asarray([table.counts[k] for k in EntityKind], dtype=np.int64)
    h_idx = kind_offsets[head_kinds] + h_raw
    t_idx = kind_offsets[tkinds] + t_raw

    rng = np.random.default_rng([seed, 0x7472616E])

    def draw_negatives(tails, kinds_of_tails, gen):
        neg_local = gen.integers(0, kind_counts[kinds_of_tails])
        collide = (kind_offsets[kinds_of_tails] + neg_local) == tails
        while np.any(collide & (kind_counts[kinds_of_tails] > 1)):
            redo = collide & (kind_counts[kinds_of_tails] > 1)
            neg_local[redo] = gen.integers(0, kind_counts[kinds_of_tails[redo]])
            collide = (kind_offsets[kinds_of_tails] + neg_local) == tails
        return kind_offsets[kinds_of_tails] + neg_local

    eval_neg = draw_negatives(t_idx, tkinds, np.random.default_rng([seed, 0x6576616C]))

    def eval_loss() -> float:
        base = table.entity[h_idx] + table.rel[rels]
        dpos = np.linalg.norm(base - table.entity[t_idx], axis=1)
        dneg = np.linalg.norm(base - table.entity[eval_neg], axis=1)
        margin_term = float(np.sum(np.maximum(margin + dpos - dneg, 0.0)))
        s_pos = np.einsum("ij,ij->i", base, table.entity[t_idx]) + table.bias[t_idx]
        s_neg = np.einsum("ij,ij->i", base, table.entity[eval_neg]) + table.bias[eval_neg]
        bce = float(-np.sum(np.log(np.maximum(sigmoid(s_pos), 1e-12)))
                    - np.sum(np.log(np.maximum(1.0 - sigmoid(s_neg), 1e-12))))
        return (margin_term + bce) / n

    for epoch in range(epochs):
        rate = lr / (1.0 + lr_decay * epoch)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            for _ in range(max(1, negatives)):
                bh, br, bt = h_idx[sel], rels[sel], t_idx[sel]
                bn = draw_negatives(bt, tkinds[sel], rng)

                H = table.entity[bh]
                R = table.rel[br]
                Tp = table.entity[bt]
                Tn = table.entity[bn]
                dpos_v = H + R - Tp
                dneg_v = H + R - Tn
                dpos = np.linalg.norm(dpos_v, axis=1)
                dneg = np.linalg.norm(dneg_v, axis=1)
                active = (margin + dpos - dneg) > 0
                if np.any(active):
                    gp = dpos_v[active] / np.maximum(dpos[active, None], 1e-12)
                    gn = dneg_v[active] / np.maximum(dneg[active, None], 1e-12)
                    ah, ar = bh[active], br[active]
                    at, an = bt[active], bn[active]
                    np.add.at(table.entity, ah, -rate * (gp - gn))
                    np.add.at(table.rel, ar, -rate * (gp - gn))
                    np.add.at(table.entity, at, rate * gp)
                    np.add.at(table.entity, an, -rate * gn)
                    touched = np.unique(np.concatenate([ah, at, an]))
                    norms = np.linalg.norm(table.entity[touched], axis=1, keepdims=True)
                    table.entity[touched] /= np.maximum(norms, 1e-12)

                # bias calibration on dot scores, gradient to biases only
                base = table.entity[bh] + table.rel[br]
                p_pos = sigmoid(np.einsum("ij,ij->i", base, table.entity[bt]) + table.bias[bt])
                p_neg = sigmoid(np.einsum("ij,ij->i", base, table.entity[bn]) + table.bias[bn])
                np.add.at(table.bias, bt, -rate * (p_pos - 1.0))
                np.add.at(table.bias, bn, -rate * p_neg)
        table.train_losses.append(eval_loss())
        logger.info("embed epoch %d loss %.6f", epoch, table.train_losses[-1])
    return table


def action_score(table: EmbeddingTable, v0: EntityRef, r: Optional[Relation],
                 e: EntityRef) -> float:
    """Pruning score of reaching ``e``, conditioned on the walk's source.

    Non-products use the single relation that ties their kind to products;
    products take the maximum over the two product-product relations.
    """
    v = table.entity_vector(v0)
    ev = table.entity_vector(e)
    b = table.bias_of(e)
    if e.kind == EntityKind.PRODUCT:
        s1 = float((v + table.relation_vector(Relation.ALSO_VIEWED)) @ ev) + b
        s2 = float((v + table.relation_vector(Relation.ALSO_BOUGHT)) @ ev) + b
        return max(s1, s2)
    rd = PRODUCT_RELATION[e.kind]
    return float((v + table.relation_vector(rd)) @ ev) + b


def score_actions(table: EmbeddingTable, v0: EntityRef,
                  actions: Sequence[Tuple[Relation, EntityRef]]) -> np.ndarray:
    """Vectorized :func:`action_score` over an action list."""
    if not actions:
        return np.zeros(0)
    v = table.entity_vector(v0)
    out = np.empty(len(actions))
    kinds = np.asarray([int(e.kind) for _, e in actions])
    ids = np.asarray([e.id for _, e in actions])
    gidx = np.asarray([table.offsets[EntityKind(k)] for k in kinds]) + ids
    for k in np.unique(kinds):
        kind = EntityKind(int(k))
        mask = kinds == k
        E = table.entity[gidx[mask]]
        b = table.bias[gidx[mask]]
        if kind == EntityKind.PRODUCT:
            s1 = E @ (v + table.rel[int(Relation.ALSO_VIEWED)]) + b
            s2 = E @ (v + table.rel[int(Relation.ALSO_BOUGHT)]) + b
            out[mask] = np.maximum(s1, s2)
        else:
            rd = PRODUCT_RELATION[kind]
            out[mask] = E @ (v + table.rel[int(rd)]) + b
    return out


def embedding_reward(table: EmbeddingTable, pairs: Sequence[Tuple[EntityRef, EntityRef]],
                     relation: Optional[Relation] = None) -> np.ndarray:
    """Embedding-based reward for (source, product) pairs, affinely rescaled
    to [0, 1] within this batch.  A pair with e == v0 is pinned to 0."""
    raw = np.zeros(len(pairs))
    live = []
    for i, (v0, e) in enumerate(pairs):
        if e.kind != EntityKind.PRODUCT:
            raise UnknownEntity(f"reward target must be a product, got {e!r}")
        if e == v0:
            continue
        if relation is None:
            raw[i] = action_score(table, v0, None, e)
        else:
            v = table.entity_vector(v0)
            raw[i] = float((v + table.relation_vector(relation)) @ table.entity_vector(e)) \
                + table.bias_of(e)
        live.append(i)
    if not live:
        return raw
    vals = raw[live]
    lo, hi = vals.min(), vals.max()
    if hi - lo < 1e-12:
        raw[live] = 1.0
    else:
        raw[live] = (vals - lo) / (hi - lo)
    return raw


class EmbeddingRewarder:
    """Rewarder protocol adapter for the embedding score; counts calls so
    experiment manifests can prove reward dispatch."""

    name = "embedding"

    def __init__(self, table: EmbeddingTable, relation: Optional[Relation] = None):
        self.table = table
        self.relation = relation
        self.calls = 0

    def score_pairs(self, pairs: Sequence[Tuple[EntityRef, EntityRef]]) -> np.ndarray:
        self.calls += len(pairs)
        return embedding_reward(self.table, pairs, self.relation)
