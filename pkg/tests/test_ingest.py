import json
import math
from collections import Counter

import numpy as np
import pytest

from pathrec.errors import EmptyCorpus, InvalidFraction, MalformedInput
from pathrec.graph import EntityKind, Relation
from pathrec.ingest import (ProductRecord, ReviewRecord, SplitSpec, build_graph,
                            parse_metadata, parse_reviews, select_feature_words,
                            split_pairs, training_graph)
from pathrec.text import tokenize

from conftest import product, word


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(row if isinstance(row, str) else json.dumps(row))
            fh.write("\n")


def meta_row(asin, title="thing one", **kw):
    row = {"asin": asin, "title": title}
    row.update(kw)
    return row


class TestParseMetadata:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        write_jsonl(path, [meta_row("A1"), meta_row("A2"), meta_row("A3")])
        records, problems = parse_metadata(path)
        assert len(records) == 3 and not problems

    def test_missing_title_reported(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        write_jsonl(path, [meta_row("A1"), {"asin": "A2"}])
        records, problems = parse_metadata(path)
        assert [r.external_id for r in records] == ["A1"]
        assert problems[0].line == 2 and "title" in problems[0].message

    def test_fixture_with_two_broken_lines(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        rows = [meta_row(f"A{i}") for i in range(8)]
        rows.insert(3, "{not json")
        rows.insert(7, json.dumps({"title": "no id"}))
        write_jsonl(path, rows)
        records, problems = parse_metadata(path)
        assert len(records) == 8
        assert sorted(p.line for p in problems) == [4, 8]

    def test_duplicate_id_is_malformed(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        write_jsonl(path, [meta_row("A1"), meta_row("A1")])
        records, problems = parse_metadata(path)
        assert len(records) == 1 and len(problems) == 1

    def test_mostly_broken_file_raises(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        write_jsonl(path, ["oops", "nope", json.dumps(meta_row("A1"))])
        with pytest.raises(MalformedInput):
            parse_metadata(path)

    def test_related_and_categories_parsed(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        write_jsonl(path, [meta_row("A1", brand="Kodak",
                                    categories=[["Cameras", "Film"], ["Cameras"]],
                                    related={"also_viewed": ["A2"], "also_bought": []})])
        records, _ = parse_metadata(path)
        rec = records[0]
        assert rec.brand == "Kodak"
        assert rec.category_labels() == ["Cameras", "Film"]
        assert rec.also_viewed == ["A2"]


class TestParseReviews:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "reviews.jsonl"
        write_jsonl(path, [{"reviewerID": "U1", "asin": "A1", "reviewText": "nice product"}])
        records, problems = parse_reviews(path)
        assert records == [ReviewRecord("U1", "A1", "nice product")]
        assert not problems

    def test_missing_fields(self, tmp_path):
        path = tmp_path / "reviews.jsonl"
        write_jsonl(path, [{"reviewerID": "U1", "asin": "A1", "reviewText": "ok fine"},
                           {"reviewerID": "U2", "asin": "A1", "reviewText": "meh"},
                           {"reviewerID": "U3", "asin": "A2", "reviewText": "yep"},
                           {"asin": "A1", "reviewText": "x"},
                           {"reviewerID": "U1", "asin": "A2"}])
        records, problems = parse_reviews(path)
        assert len(records) == 3 and len(problems) == 2


class TestFeatureWords:
    def test_single_one_word_review(self):
        out = select_feature_words([ReviewRecord("u", "p", "excellent")], 15)
        assert out == {"p": {"excellent"}}

    def test_idf_suppresses_shared_term(self):
        reviews = [ReviewRecord("u1", "p1", "common unique"),
                   ReviewRecord("u2", "p2", "common special")]
        out = select_feature_words(reviews, 1)
        assert out == {"p1": {"unique"}, "p2": {"special"}}

    def test_matches_hand_tfidf(self):
        texts = ["soft plush bear plush", "soft blanket warm", "bear hunt guide",
                 "warm soft socks", "guide book book travel"]
        reviews = [ReviewRecord(f"u{i}", f"p{i}", t) for i, t in enumerate(texts)]
        out = select_feature_words(reviews, 2)

        # independent tf-idf oracle with the same formula
        docs = [tokenize(t) for t in texts]
        df = Counter(w for d in docs for w in set(d))
        n = len(docs)
        expected = {}
        for i, doc in enumerate(docs):
            tf = Counter(doc)
            scored = sorted(tf, key=lambda w: (-(tf[w] * (math.log(n / (1 + df[w])) + 1.0)), w))
            expected[f"p{i}"] = set(scored[:2])
        assert out == expected

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            select_feature_words([], 15)


class TestBuildGraph:
    def test_mutual_also_viewed_deduplicated(self):
        products = [ProductRecord("A", "thing alpha", also_viewed=["B"]),
                    ProductRecord("B", "thing beta", also_viewed=["A"])]
        g, report = build_graph(products, [], {})
        assert g.edge_count(Relation.ALSO_VIEWED) == 1
        assert report.dropped_also_viewed == 0

    def test_brand_edge(self):
        from pathrec.graph import EntityRef
        products = [ProductRecord("A", "camera gear", brand="Kodak")]
        g, _ = build_graph(products, [], {})
        assert g.edge_count(Relation.PRODUCED_BY) == 1
        assert g.name(EntityRef(EntityKind.BRAND, 0)) == "Kodak"

    def test_dangling_references_dropped(self):
        products = [ProductRecord("A", "thing alpha", also_viewed=["MISSING", "B"],
                                  also_bought=["GONE"]),
                    ProductRecord("B", "thing beta")]
        g, report = build_graph(products, [], {})
        assert g.edge_count(Relation.ALSO_VIEWED) == 1
        assert report.dropped_also_viewed == 1
        assert report.dropped_also_bought == 1

    def test_fixture_edge_counts_match_hand_tally(self):
        products = []
        reviews = []
        for i in range(10):
            also = [f"P{(i + 1) % 10}"] if i % 2 == 0 else []
            products.append(ProductRecord(
                f"P{i}", f"title {i}", brand=f"B{i % 3}",
                categories=[[f"C{i % 2}"]], also_viewed=also))
            reviews.append(ReviewRecord(f"U{i % 4}", f"P{i}", f"token{i} shared"))
        feature_words = select_feature_words(reviews, 15)
        g, _ = build_graph(products, reviews, feature_words)

        # hand tally from the records
        assert g.edge_count(Relation.ALSO_VIEWED) == 5
        assert g.edge_count(Relation.PRODUCED_BY) == 10
        assert g.edge_count(Relation.BELONG_TO) == 10
        assert g.edge_count(Relation.PURCHASE) == 10
        expected_words = set()
        for ws in feature_words.values():
            expected_words |= ws
        assert g.population(EntityKind.WORD) == len(expected_words)
        assert g.edge_count(Relation.DESCRIBED_BY) == sum(
            len(ws) for ws in feature_words.values())

    def test_parser_tallies_round_trip(self, synth_dataset, synth_graph):
        # per-relation edge counts equal tallies recomputed from the records
        products = synth_dataset.products
        index = {p.external_id: i for i, p in enumerate(products)}
        av = set()
        ab = set()
        for p in products:
            for ext in p.also_viewed:
                if ext in index:
                    pair = tuple(sorted((index[p.external_id], index[ext])))
                    av.add(pair)
            for ext in p.also_bought:
                if ext in index:
                    ab.add(tuple(sorted((index[p.external_id], index[ext]))))
        assert synth_graph.edge_count(Relation.ALSO_VIEWED) == len(av)
        assert synth_graph.edge_count(Relation.ALSO_BOUGHT) == len(ab)
        purchases = {(r.user_id, r.product_id) for r in synth_dataset.reviews
                     if r.product_id in index}
        assert synth_graph.edge_count(Relation.PURCHASE) == len(purchases)


class TestSplits:
    def test_sizes(self, synth_graph):
        g = synth_graph
        # a dedicated 100-edge graph for the exact 85/15 check
        from pathrec.graph import KnowledgeGraph
        big = KnowledgeGraph({EntityKind.PRODUCT: 40})
        rng = np.random.default_rng(1)
        pairs = set()
        while len(pairs) < 100:
            a, b = sorted(int(x) for x in rng.choice(40, size=2, replace=False))
            pairs.add((a, b))
        for a, b in pairs:
            big.add_triple(product(a), Relation.ALSO_VIEWED, product(b))
        train, test = split_pairs(big, Relation.ALSO_VIEWED, SplitSpec(0.85, 0))
        assert len(train) == 85 and len(test) == 15
        assert set(train) | set(test) == pairs
        assert set(train) & set(test) == set()

    def test_deterministic(self, synth_graph):
        a = split_pairs(synth_graph, Relation.ALSO_VIEWED, SplitSpec(0.85, 9))
        b = split_pairs(synth_graph, Relation.ALSO_VIEWED, SplitSpec(0.85, 9))
        assert a == b

    def test_invalid_fraction(self, synth_graph):
        with pytest.raises(InvalidFraction):
            split_pairs(synth_graph, Relation.ALSO_VIEWED, SplitSpec(1.0, 0))
        with pytest.raises(InvalidFraction):
            split_pairs(synth_graph, Relation.ALSO_VIEWED, SplitSpec(0.0, 0))

    def test_wrong_relation_rejected(self, synth_graph):
        with pytest.raises(ValueError):
            split_pairs(synth_graph, Relation.PURCHASE, SplitSpec(0.85, 0))

    def test_no_test_edge_in_training_graph(self, synth_graph, synth_splits,
                                            synth_train_graph):
        for rel, (_train, test) in synth_splits.items():
            for a, b in test:
                assert not synth_train_graph.has_triple(product(a), rel, product(b))
            assert (synth_train_graph.edge_count(rel)
                    == synth_graph.edge_count(rel) - len(test))
