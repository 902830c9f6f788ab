"""In-memory heterogeneous product knowledge graph.

Five entity kinds (product, user, word, brand, category) with dense
per-kind integer ids, six relation kinds with a fixed schema, adjacency
navigable from both endpoints, and meta-path pattern matching for walks.

Graphs are built once and then treated as read-only; the helpers that
produce modified graphs (edge removal, relation removal) return copies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ArtifactError, SchemaViolation, UnknownEntity

GRAPH_FORMAT_VERSION = 1


class EntityKind(IntEnum):
    PRODUCT = 0
    USER = 1
    WORD = 2
    BRAND = 3
    CATEGORY = 4


class Relation(IntEnum):
    ALSO_VIEWED = 0
    ALSO_BOUGHT = 1
    DESCRIBED_BY = 2
    PRODUCED_BY = 3
    BELONG_TO = 4
    PURCHASE = 5


#: (head kind, tail kind) for every relation.
SCHEMA: Dict[Relation, Tuple[EntityKind, EntityKind]] = {
    Relation.ALSO_VIEWED: (EntityKind.PRODUCT, EntityKind.PRODUCT),
    Relation.ALSO_BOUGHT: (EntityKind.PRODUCT, EntityKind.PRODUCT),
    Relation.DESCRIBED_BY: (EntityKind.PRODUCT, EntityKind.WORD),
    Relation.PRODUCED_BY: (EntityKind.PRODUCT, EntityKind.BRAND),
    Relation.BELONG_TO: (EntityKind.PRODUCT, EntityKind.CATEGORY),
    Relation.PURCHASE: (EntityKind.USER, EntityKind.PRODUCT),
}

#: The single relation connecting products to each non-product kind.
PRODUCT_RELATION: Dict[EntityKind, Relation] = {
    EntityKind.WORD: Relation.DESCRIBED_BY,
    EntityKind.BRAND: Relation.PRODUCED_BY,
    EntityKind.CATEGORY: Relation.BELONG_TO,
    EntityKind.USER: Relation.PURCHASE,
}

#: Relation tags for the two target relationships.
SUBSTITUTE = "substitute"
COMPLEMENT = "complement"
TARGET_RELATION = {SUBSTITUTE: Relation.ALSO_VIEWED, COMPLEMENT: Relation.ALSO_BOUGHT}


class EntityRef(Tuple[EntityKind, int]):
    """Typed entity handle: (kind, dense id)."""

    __slots__ = ()

    def __new__(cls, kind: EntityKind, id: int):
        return tuple.__new__(cls, (EntityKind(kind), int(id)))

    @property
    def kind(self) -> EntityKind:
        return self[0]

    @property
    def id(self) -> int:
        return self[1]

    def __repr__(self) -> str:
        return f"{self.kind.name.lower()}:{self.id}"


def product(i: int) -> EntityRef:
    return EntityRef(EntityKind.PRODUCT, i)


def _is_product_pair(r: Relation) -> bool:
    hk, tk = SCHEMA[r]
    return hk == tk


def next_kind(kind: EntityKind, r: Relation) -> Optional[EntityKind]:
    """Entity kind reached by traversing ``r`` from ``kind``; None if impossible."""
    hk, tk = SCHEMA[r]
    if kind == hk:
        return tk
    if kind == tk:
        return hk
    return None


class KnowledgeGraph:
    """Typed adjacency store with symmetric traversal.

    Product-product edges are canonicalized to (min id, max id) so a
    symmetric pair counts once.  Every relation keeps forward and backward
    maps, so ``neighbors`` works from either endpoint.
    """

    def __init__(self, counts: Mapping[EntityKind, int],
                 names: Optional[Mapping[EntityKind, Sequence[str]]] = None):
        self._counts: Dict[EntityKind, int] = {k: int(counts.get(k, 0)) for k in EntityKind}
        self._names: Dict[EntityKind, List[str]] = {}
        if names:
            for kind, table in names.items():
                kind = EntityKind[kind] if isinstance(kind, str) else EntityKind(kind)
                if len(table) != self._counts[kind]:
                    raise ValueError(f"name table size mismatch for {kind.name}")
                self._names[kind] = list(table)
        self._fwd: Dict[Relation, Dict[int, Set[int]]] = {r: {} for r in Relation}
        self._bwd: Dict[Relation, Dict[int, Set[int]]] = {r: {} for r in Relation}
        self._edge_counts: Dict[Relation, int] = {r: 0 for r in Relation}

    # -- entities ---------------------------------------------------------

    def population(self, kind: EntityKind) -> int:
        return self._counts[kind]

    def has_entity(self, e: EntityRef) -> bool:
        return 0 <= e.id < self._counts[e.kind]

    def check_entity(self, e: EntityRef) -> None:
        if not self.has_entity(e):
            raise UnknownEntity(f"{e!r} out of range (population {self._counts[e.kind]})")

    def name(self, e: EntityRef) -> str:
        table = self._names.get(e.kind)
        if table is not None and 0 <= e.id < len(table):
            return table[e.id]
        return repr(e)

    def entities(self, kind: EntityKind) -> Iterator[EntityRef]:
        for i in range(self._counts[kind]):
            yield EntityRef(kind, i)

    # -- edges ------------------------------------------------------------

    @staticmethod
    def _canonical(h: EntityRef, r: Relation, t: EntityRef) -> Tuple[int, int]:
        if _is_product_pair(r) and t.id < h.id:
            return t.id, h.id
        return h.id, t.id

    def add_triple(self, h: EntityRef, r: Relation, t: EntityRef) -> None:
        """Insert (h, r, t); no-op on duplicates (including the symmetric
        duplicate of a product-product edge)."""
        self.check_entity(h)
        self.check_entity(t)
        if (h.kind, t.kind) != SCHEMA[r]:
            raise SchemaViolation(
                f"{r.name} connects {SCHEMA[r][0].name}->{SCHEMA[r][1].name}, "
                f"got {h.kind.name}->{t.kind.name}")
        hid, tid = self._canonical(h, r, t)
        bucket = self._fwd[r].setdefault(hid, set())
        if tid in bucket:
            return
        bucket.add(tid)
        self._bwd[r].setdefault(tid, set()).add(hid)
        self._edge_counts[r] += 1

    def remove_triple(self, h: EntityRef, r: Relation, t: EntityRef) -> bool:
        hid, tid = self._canonical(h, r, t)
        bucket = self._fwd[r].get(hid)
        if bucket is None or tid not in bucket:
            return False
        bucket.discard(tid)
        self._bwd[r][tid].discard(hid)
        self._edge_counts[r] -= 1
        return True

    def has_triple(self, h: EntityRef, r: Relation, t: EntityRef) -> bool:
        if (h.kind, t.kind) != SCHEMA[r]:
            return False
        hid, tid = self._canonical(h, r, t)
        return tid in self._fwd[r].get(hid, ())

    def has_edge(self, a: EntityRef, r: Relation, b: EntityRef) -> bool:
        """Edge test in either direction (traversal view)."""
        hk, tk = SCHEMA[r]
        if (a.kind, b.kind) == (hk, tk) and self.has_triple(a, r, b):
            return True
        return (b.kind, a.kind) == (hk, tk) and self.has_triple(b, r, a)

    def edge_count(self, r: Relation) -> int:
        return self._edge_counts[r]

    def pairs(self, r: Relation) -> List[Tuple[int, int]]:
        """All (head id, tail id) pairs of a relation, sorted."""
        out = [(h, t) for h, ts in self._fwd[r].items() for t in ts]
        out.sort()
        return out

    def triples(self) -> Iterator[Tuple[EntityRef, Relation, EntityRef]]:
        for r in Relation:
            hk, tk = SCHEMA[r]
            for h, t in self.pairs(r):
                yield EntityRef(hk, h), r, EntityRef(tk, t)

    def neighbors(self, e: EntityRef,
                  relation: Optional[Relation] = None) -> List[Tuple[Relation, EntityRef]]:
        """Edges touching ``e`` in either direction, ordered by
        (relation ordinal, neighbor id)."""
        self.check_entity(e)
        rels = [relation] if relation is not None else list(Relation)
        out: List[Tuple[Relation, EntityRef]] = []
        for r in rels:
            hk, tk = SCHEMA[r]
            if hk == tk:
                if e.kind != hk:
                    continue
                ids = self._fwd[r].get(e.id, set()) | self._bwd[r].get(e.id, set())
                out.extend((r, EntityRef(tk, i)) for i in sorted(ids))
            elif e.kind == hk:
                out.extend((r, EntityRef(tk, i)) for i in sorted(self._fwd[r].get(e.id, ())))
            elif e.kind == tk:
                out.extend((r, EntityRef(hk, i)) for i in sorted(self._bwd[r].get(e.id, ())))
        return out

    def neighbor_ids(self, e: EntityRef, r: Relation) -> Set[int]:
        """Ids reachable from ``e`` over ``r`` (no ordering)."""
        hk, tk = SCHEMA[r]
        if hk == tk:
            if e.kind != hk:
                return set()
            return set(self._fwd[r].get(e.id, ())) | set(self._bwd[r].get(e.id, ()))
        if e.kind == hk:
            return set(self._fwd[r].get(e.id, ()))
        if e.kind == tk:
            return set(self._bwd[r].get(e.id, ()))
        return set()

    def stats(self) -> Dict[Relation, float]:
        """Average number of edges per head-kind entity, per relation."""
        out = {}
        for r in Relation:
            heads = self._counts[SCHEMA[r][0]]
            out[r] = self._edge_counts[r] / heads if heads else 0.0
        return out

    # -- derived graphs ---------------------------------------------------

    def copy(self) -> "KnowledgeGraph":
        g = KnowledgeGraph(self._counts, self._names or None)
        for r in Relation:
            g._fwd[r] = {h: set(ts) for h, ts in self._fwd[r].items()}
            g._bwd[r] = {t: set(hs) for t, hs in self._bwd[r].items()}
            g._edge_counts[r] = self._edge_counts[r]
        return g

    def without_edges(self, r: Relation, pairs: Iterable[Tuple[int, int]]) -> "KnowledgeGraph":
        g = self.copy()
        hk, tk = SCHEMA[r]
        for h, t in pairs:
            g.remove_triple(EntityRef(hk, h), r, EntityRef(tk, t))
        return g

    def without_relation(self, r: Relation) -> "KnowledgeGraph":
        g = self.copy()
        g._fwd[r] = {}
        g._bwd[r] = {}
        g._edge_counts[r] = 0
        return g

    # -- serialization ----------------------------------------------------

    def save(self, path) -> None:
        """JSON header line, then per-relation edge lists as little-endian
        uint32 (head, tail) pairs in header-declared order."""
        header = {
            "format": "pathrec-graph",
            "version": GRAPH_FORMAT_VERSION,
            "counts": {k.name: self._counts[k] for k in EntityKind},
            "relations": [{"name": r.name, "edges": self._edge_counts[r]} for r in Relation],
            "names": {k.name: v for k, v in self._names.items()} or None,
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for r in Relation:
                pairs = self.pairs(r)
                arr = np.asarray(pairs, dtype="<u4").reshape(-1, 2)
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path) -> "KnowledgeGraph":
        with open(path, "rb") as fh:
            header_line = fh.readline()
            try:
                header = json.loads(header_line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise ArtifactError(f"bad graph header in {path}") from exc
            if header.get("format") != "pathrec-graph":
                raise ArtifactError(f"{path} is not a graph file")
            if header.get("version") != GRAPH_FORMAT_VERSION:
                raise ArtifactError(f"unsupported graph version {header.get('version')}")
            counts = {EntityKind[k]: n for k, n in header["counts"].items()}
            g = cls(counts, header.get("names") or None)
            for spec in header["relations"]:
                r = Relation[spec["name"]]
                n = int(spec["edges"])
                raw = fh.read(8 * n)
                if len(raw) != 8 * n:
                    raise ArtifactError(f"truncated edge list for {r.name} in {path}")
                arr = np.frombuffer(raw, dtype="<u4").reshape(-1, 2)
                hk, tk = SCHEMA[r]
                for h, t in arr:
                    g.add_triple(EntityRef(hk, int(h)), r, EntityRef(tk, int(t)))
        return g


# -- reasoning paths and meta-path patterns -------------------------------


@dataclass(frozen=True)
class ReasoningPath:
    """Alternating entity/relation walk starting at a source product.

    ``entities`` has one more element than ``relations``; self-loop steps
    are already stripped.  ``sub_score``/``comp_score`` hold the terminal
    pair-model probabilities once scoring has run.
    """

    entities: Tuple[EntityRef, ...]
    relations: Tuple[Relation, ...]
    log_prob: float = 0.0
    sub_score: Optional[float] = None
    comp_score: Optional[float] = None

    def __post_init__(self):
        if len(self.entities) != len(self.relations) + 1:
            raise ValueError("path must alternate entities and relations")

    @property
    def source(self) -> EntityRef:
        return self.entities[0]

    @property
    def end(self) -> EntityRef:
        return self.entities[-1]

    def __len__(self) -> int:
        return len(self.relations)

    def edges_valid(self, g: KnowledgeGraph) -> bool:
        return all(
            g.has_edge(self.entities[i], self.relations[i], self.entities[i + 1])
            for i in range(len(self.relations)))

    def render(self, g: KnowledgeGraph) -> List[str]:
        out = [g.name(self.entities[0])]
        for r, e in zip(self.relations, self.entities[1:]):
            out.append(r.name.lower())
            out.append(g.name(e))
        return out


@dataclass(frozen=True)
class MetaPath:
    """A typed relation sequence a valid walk must follow, product to product."""

    relations: Tuple[Relation, ...]
    tag: str

    def __post_init__(self):
        if self.tag not in (SUBSTITUTE, COMPLEMENT):
            raise ValueError(f"unknown tag {self.tag!r}")
        if not 2 <= len(self.relations) <= 3:
            raise ValueError("meta-path length must be 2 or 3")
        kinds = self.walk_kinds()
        if kinds is None or kinds[-1] != EntityKind.PRODUCT:
            raise ValueError(f"{self.relations} does not walk product->product")

    def walk_kinds(self) -> Optional[List[EntityKind]]:
        kinds = [EntityKind.PRODUCT]
        for r in self.relations:
            nk = next_kind(kinds[-1], r)
            if nk is None:
                return None
            kinds.append(nk)
        return kinds


class MetaPathSet:
    """Pattern collection with prefix-feasibility queries for walking."""

    def __init__(self, paths: Iterable[MetaPath]):
        self.paths: Tuple[MetaPath, ...] = tuple(paths)
        self._sequences: Dict[str, Set[Tuple[Relation, ...]]] = {SUBSTITUTE: set(), COMPLEMENT: set()}
        for p in self.paths:
            self._sequences[p.tag].add(p.relations)
        self._all: Set[Tuple[Relation, ...]] = set().union(*self._sequences.values()) if self.paths else set()

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def max_length(self) -> int:
        return max((len(p.relations) for p in self.paths), default=0)

    def matches(self, relations: Sequence[Relation], tag: Optional[str] = None) -> bool:
        seq = tuple(relations)
        pool = self._all if tag is None else self._sequences[tag]
        return seq in pool

    def continuations(self, prefix: Sequence[Relation]) -> Set[Relation]:
        """Relations that can extend ``prefix`` toward some full pattern."""
        prefix = tuple(prefix)
        k = len(prefix)
        return {seq[k] for seq in self._all if len(seq) > k and seq[:k] == prefix}

    def to_config(self) -> List[Dict[str, object]]:
        return [{"tag": p.tag, "relations": [r.name.lower() for r in p.relations]}
                for p in self.paths]

    @classmethod
    def from_config(cls, entries: Sequence[Mapping[str, object]]) -> "MetaPathSet":
        paths = []
        for e in entries:
            rels = tuple(Relation[str(r).upper()] for r in e["relations"])
            paths.append(MetaPath(rels, str(e["tag"])))
        return cls(paths)


def default_meta_paths() -> MetaPathSet:
    """Built-in pattern set, identical for both target relationships.

    Length-2: one attribute bridge (word/brand/category/user) or a chain of
    two product-product hops.  Length-3: an attribute bridge extended by one
    product-product hop on either side.
    """
    bridges = [Relation.DESCRIBED_BY, Relation.PRODUCED_BY, Relation.BELONG_TO, Relation.PURCHASE]
    hops = [Relation.ALSO_VIEWED, Relation.ALSO_BOUGHT]
    sequences: List[Tuple[Relation, ...]] = []
    for r in bridges:
        sequences.append((r, r))
    for r1 in hops:
        for r2 in hops:
            sequences.append((r1, r2))
    for r in bridges:
        for s in hops:
            sequences.append((r, r, s))
            sequences.append((s, r, r))
    paths = [MetaPath(seq, tag) for tag in (SUBSTITUTE, COMPLEMENT) for seq in sequences]
    return MetaPathSet(paths)


def match_meta_path(path: ReasoningPath, patterns: MetaPathSet, tag: Optional[str] = None) -> bool:
    """True iff the path's relation sequence is a pattern and it ends at a product."""
    if path.end.kind != EntityKind.PRODUCT:
        return False
    return patterns.matches(path.relations, tag)
