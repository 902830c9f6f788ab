import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathrec.errors import SchemaViolation, UnknownEntity
from pathrec.graph import (COMPLEMENT, SCHEMA, SUBSTITUTE, EntityKind,
                           EntityRef, KnowledgeGraph, MetaPath, MetaPathSet,
                           ReasoningPath, Relation, default_meta_paths,
                           match_meta_path, next_kind)

from conftest import brand, category, product, user, word


def small_counts(**kw):
    counts = {EntityKind.PRODUCT: 6, EntityKind.USER: 3, EntityKind.WORD: 6,
              EntityKind.BRAND: 2, EntityKind.CATEGORY: 2}
    counts.update({EntityKind[k.upper()]: v for k, v in kw.items()})
    return counts


class TestAddTriple:
    def test_traversal_symmetry(self):
        g = KnowledgeGraph(small_counts())
        g.add_triple(product(0), Relation.DESCRIBED_BY, word(3))
        assert (Relation.DESCRIBED_BY, product(0)) in g.neighbors(word(3))
        assert (Relation.DESCRIBED_BY, word(3)) in g.neighbors(product(0))

    def test_duplicate_is_idempotent(self):
        g = KnowledgeGraph(small_counts())
        g.add_triple(user(1), Relation.PURCHASE, product(2))
        g.add_triple(user(1), Relation.PURCHASE, product(2))
        assert g.edge_count(Relation.PURCHASE) == 1

    def test_symmetric_product_pair_counts_once(self):
        g = KnowledgeGraph(small_counts())
        g.add_triple(product(0), Relation.ALSO_VIEWED, product(1))
        g.add_triple(product(1), Relation.ALSO_VIEWED, product(0))
        assert g.edge_count(Relation.ALSO_VIEWED) == 1

    def test_schema_violation(self):
        g = KnowledgeGraph(small_counts())
        with pytest.raises(SchemaViolation):
            g.add_triple(product(0), Relation.PURCHASE, word(1))

    def test_unknown_entity(self):
        g = KnowledgeGraph(small_counts())
        with pytest.raises(UnknownEntity):
            g.add_triple(product(99), Relation.DESCRIBED_BY, word(0))
        with pytest.raises(UnknownEntity):
            g.neighbors(word(42))


class TestNeighbors:
    def test_empty_graph(self):
        g = KnowledgeGraph(small_counts())
        assert g.neighbors(product(0)) == []

    def test_star_graph_order(self):
        g = KnowledgeGraph(small_counts())
        for i in [5, 1, 3, 2, 4]:
            g.add_triple(product(0), Relation.DESCRIBED_BY, word(i))
        out = g.neighbors(product(0))
        assert out == [(Relation.DESCRIBED_BY, word(i)) for i in range(1, 6)]

    def test_matches_enumerated_edge_list(self):
        # brute-force oracle: derive each entity's neighborhood from the
        # stored triple list directly
        triples = [
            (product(0), Relation.DESCRIBED_BY, word(1)),
            (user(2), Relation.PURCHASE, product(0)),
            (product(0), Relation.ALSO_BOUGHT, product(3)),
        ]
        g = KnowledgeGraph(small_counts())
        for h, r, t in triples:
            g.add_triple(h, r, t)

        def oracle(e):
            out = []
            for h, r, t in triples:
                if h == e:
                    out.append((r, t))
                if t == e:
                    out.append((r, h))
            return sorted(out, key=lambda p: (int(p[0]), p[1].id))

        for e in [product(0), word(1), user(2), product(3), product(5)]:
            assert g.neighbors(e) == oracle(e)

    def test_relation_filter(self):
        g = KnowledgeGraph(small_counts())
        g.add_triple(product(0), Relation.DESCRIBED_BY, word(1))
        g.add_triple(product(0), Relation.ALSO_VIEWED, product(2))
        assert g.neighbors(product(0), Relation.ALSO_VIEWED) == [(Relation.ALSO_VIEWED, product(2))]


class TestStats:
    def test_simple_ratio(self):
        g = KnowledgeGraph(small_counts(product=10))
        pairs = [(0, 1), (0, 2), (1, 3), (2, 5), (3, 7), (4, 8), (4, 9),
                 (5, 6), (6, 9), (7, 8), (0, 9), (1, 8), (2, 7), (3, 6),
                 (4, 5), (5, 9), (6, 8), (1, 2), (2, 3), (8, 9)]
        for h, t in pairs:
            g.add_triple(product(h), Relation.ALSO_BOUGHT, product(t))
        assert g.stats()[Relation.ALSO_BOUGHT] == pytest.approx(2.0)

    def test_synth_graph_recount(self, synth_graph):
        # recount edges per relation straight from the triple iterator
        counted = {r: 0 for r in Relation}
        for _h, r, _t in synth_graph.triples():
            counted[r] += 1
        stats = synth_graph.stats()
        for r in Relation:
            heads = synth_graph.population(SCHEMA[r][0])
            assert stats[r] == pytest.approx(counted[r] / heads)

    def test_round_trip_preserves_stats(self, synth_graph, tmp_path):
        path = tmp_path / "graph.bin"
        synth_graph.save(path)
        loaded = KnowledgeGraph.load(path)
        assert loaded.stats() == synth_graph.stats()
        for kind in EntityKind:
            assert loaded.population(kind) == synth_graph.population(kind)
        for e in [product(0), product(7), word(0)]:
            assert loaded.neighbors(e) == synth_graph.neighbors(e)
        assert loaded.name(product(0)) == synth_graph.name(product(0))


class TestMetaPaths:
    def test_word_bridge_matches(self, patterns):
        p = ReasoningPath(entities=(product(0), word(1), product(2)),
                          relations=(Relation.DESCRIBED_BY, Relation.DESCRIBED_BY))
        assert match_meta_path(p, patterns)
        assert match_meta_path(p, patterns, SUBSTITUTE)
        assert match_meta_path(p, patterns, COMPLEMENT)

    def test_non_product_terminus(self, patterns):
        p = ReasoningPath(entities=(product(0), word(1)),
                          relations=(Relation.DESCRIBED_BY,))
        assert not match_meta_path(p, patterns)

    def test_random_walks_agree_with_sequence_oracle(self, synth_graph, patterns):
        # regex-style oracle over relation-name sequences
        pattern_strings = {"/".join(r.name for r in mp.relations) for mp in patterns.paths}

        def oracle(path):
            if path.end.kind != EntityKind.PRODUCT:
                return False
            return "/".join(r.name for r in path.relations) in pattern_strings

        rng = np.random.default_rng(0)
        agree = 0
        for _ in range(300):
            e = product(int(rng.integers(synth_graph.population(EntityKind.PRODUCT))))
            entities, relations = [e], []
            for _step in range(int(rng.integers(2, 4))):
                nbrs = synth_graph.neighbors(entities[-1])
                if not nbrs:
                    break
                r, nxt = nbrs[int(rng.integers(len(nbrs)))]
                relations.append(r)
                entities.append(nxt)
            if len(relations) < 2:
                continue
            path = ReasoningPath(entities=tuple(entities), relations=tuple(relations))
            assert match_meta_path(path, patterns) == oracle(path)
            agree += 1
        assert agree > 100

    def test_default_set_lengths(self, patterns):
        assert all(len(mp.relations) in (2, 3) for mp in patterns.paths)

    def test_pattern_must_walk_products(self):
        with pytest.raises(ValueError):
            MetaPath((Relation.DESCRIBED_BY, Relation.PURCHASE), SUBSTITUTE)
        with pytest.raises(ValueError):
            MetaPath((Relation.DESCRIBED_BY,), SUBSTITUTE)

    def test_continuations(self, patterns):
        first = patterns.continuations(())
        assert Relation.DESCRIBED_BY in first and Relation.ALSO_VIEWED in first
        after_word = patterns.continuations((Relation.DESCRIBED_BY,))
        assert after_word == {Relation.DESCRIBED_BY}
        assert patterns.continuations((Relation.PURCHASE, Relation.PURCHASE,
                                       Relation.ALSO_VIEWED)) == set()

    def test_config_round_trip(self, patterns):
        rebuilt = MetaPathSet.from_config(patterns.to_config())
        assert {p.relations for p in rebuilt.paths} == {p.relations for p in patterns.paths}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.sampled_from(list(Relation)),
                          st.integers(0, 5)), max_size=25))
def test_neighbors_always_symmetric(edges):
    g = KnowledgeGraph(small_counts())
    for h, r, t in edges:
        hk, tk = SCHEMA[r]
        he = EntityRef(hk, h % max(1, g.population(hk)))
        te = EntityRef(tk, t % max(1, g.population(tk)))
        g.add_triple(he, r, te)
    for h, r, t in g.triples():
        assert (r, t) in g.neighbors(h)
        assert (r, h) in g.neighbors(t)


def test_walk_kind_determinism():
    assert next_kind(EntityKind.PRODUCT, Relation.DESCRIBED_BY) == EntityKind.WORD
    assert next_kind(EntityKind.WORD, Relation.DESCRIBED_BY) == EntityKind.PRODUCT
    assert next_kind(EntityKind.PRODUCT, Relation.ALSO_VIEWED) == EntityKind.PRODUCT
    assert next_kind(EntityKind.WORD, Relation.PURCHASE) is None
