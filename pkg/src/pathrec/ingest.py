"""Parse Amazon-style metadata/review files and assemble the knowledge graph.

Metadata is JSON-lines with fields
``{asin, title, description, brand, categories: [[...]], related: {also_viewed: [], also_bought: []}}``;
reviews are JSON-lines with ``{reviewerID, asin, reviewText}``.  Malformed
lines are collected as diagnostics instead of aborting the parse, unless
more than half the file is broken.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Set, Tuple

import numpy as np

from .errors import EmptyCorpus, InvalidFraction, MalformedInput
from .graph import EntityKind, EntityRef, KnowledgeGraph, Relation

logger = logging.getLogger(__name__)

DEFAULT_FEATURE_WORDS = 15
DEFAULT_TRAIN_FRACTION = 0.85


@dataclass
class ProductRecord:
    external_id: str
    title: str
    description: str = ""
    brand: str | None = None
    categories: List[List[str]] = field(default_factory=list)
    also_viewed: List[str] = field(default_factory=list)
    also_bought: List[str] = field(default_factory=list)

    def category_labels(self) -> List[str]:
        """Every distinct label appearing in any category path, in order."""
        seen: Set[str] = set()
        out: List[str] = []
        for path in self.categories:
            for label in path:
                if label and label not in seen:
                    seen.add(label)
                    out.append(label)
        return out

    def text(self) -> str:
        return self.description if self.description.strip() else self.title


@dataclass
class ReviewRecord:
    user_id: str
    product_id: str
    text: str


@dataclass
class ParseProblem:
    line: int
    message: str


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    seed: int = 0


def _str_field(obj: Mapping, key: str, required: bool = True) -> str | None:
    value = obj.get(key)
    if value is None or (isinstance(value, str) and not value.strip()):
        if required:
            raise KeyError(key)
        return None
    if not isinstance(value, str):
        raise ValueError(f"field {key} is not a string")
    return value


def _id_list(value) -> List[str]:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ValueError("related list is not a list")
    return [str(v) for v in value if isinstance(v, str) and v]


def parse_metadata(path) -> Tuple[List[ProductRecord], List[ParseProblem]]:
    """Parse a metadata file.  Returns (records, per-line diagnostics);
    raises MalformedInput when more than half the nonempty lines fail."""
    records: List[ProductRecord] = []
    problems: List[ParseProblem] = []
    seen: Set[str] = set()
    total = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("line is not a JSON object")
                ext = _str_field(obj, "asin")
                if ext in seen:
                    raise ValueError(f"duplicate asin {ext}")
                title = _str_field(obj, "title")
                categories = obj.get("categories") or []
                if not isinstance(categories, list):
                    raise ValueError("categories is not a list")
                cat_paths = []
                for p in categories:
                    if not isinstance(p, list):
                        raise ValueError("category path is not a list")
                    cat_paths.append([str(c) for c in p])
                related = obj.get("related") or {}
                if not isinstance(related, dict):
                    raise ValueError("related is not an object")
                rec = ProductRecord(
                    external_id=ext,
                    title=title,
                    description=str(obj.get("description") or ""),
                    brand=_str_field(obj, "brand", required=False),
                    categories=cat_paths,
                    also_viewed=_id_list(related.get("also_viewed")),
                    also_bought=_id_list(related.get("also_bought")),
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                problems.append(ParseProblem(lineno, msg))
                continue
            seen.add(rec.external_id)
            records.append(rec)
    if total and len(problems) * 2 > total:
        raise MalformedInput(f"{len(problems)}/{total} metadata lines unparseable in {path}")
    return records, problems


def parse_reviews(path) -> Tuple[List[ReviewRecord], List[ParseProblem]]:
    records: List[ReviewRecord] = []
    problems: List[ParseProblem] = []
    total = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("line is not a JSON object")
                if "reviewText" not in obj:
                    raise KeyError("reviewText")
                rec = ReviewRecord(
                    user_id=_str_field(obj, "reviewerID"),
                    product_id=_str_field(obj, "asin"),
                    text=str(obj["reviewText"]),
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                problems.append(ParseProblem(lineno, msg))
                continue
            records.append(rec)
    if total and len(problems) * 2 > total:
        raise MalformedInput(f"{len(problems)}/{total} review lines unparseable in {path}")
    return records, problems


def select_feature_words(reviews: Sequence[ReviewRecord],
                         count: int = DEFAULT_FEATURE_WORDS) -> Dict[str, Set[str]]:
    """Top ``count`` tf-idf words of each review, unioned per product.

    The corpus is the whole review collection: tf is the raw in-review
    count, idf = ln(N/(1+df)) + 1, ties lexicographic.
    """
    from .text import idf_table, tokenize, top_tfidf

    if not reviews:
        raise EmptyCorpus("no reviews")
    docs = [tokenize(r.text) for r in reviews]
    idf = idf_table(docs)
    selected: Dict[str, Set[str]] = {}
    for review, doc in zip(reviews, docs):
        if not doc:
            continue
        words = top_tfidf(doc, idf, count)
        selected.setdefault(review.product_id, set()).update(words)
    return selected


@dataclass
class BuildReport:
    dropped_also_viewed: int = 0
    dropped_also_bought: int = 0
    edge_counts: Dict[str, int] = field(default_factory=dict)


def build_graph(products: Sequence[ProductRecord],
                reviews: Sequence[ReviewRecord],
                feature_words: Mapping[str, Set[str]]) -> Tuple[KnowledgeGraph, BuildReport]:
    """Materialize all six relations from parsed records.

    Products keep file order; users/words/brands/categories get dense ids in
    lexicographic order.  also_viewed/also_bought references to unknown
    products are dropped and counted.
    """
    product_index = {p.external_id: i for i, p in enumerate(products)}
    users = sorted({r.user_id for r in reviews if r.product_id in product_index})
    words = sorted(set().union(*(feature_words.get(p.external_id, set()) for p in products))
                   if products else set())
    brands = sorted({p.brand for p in products if p.brand})
    categories = sorted({label for p in products for label in p.category_labels()})

    counts = {
        EntityKind.PRODUCT: len(products),
        EntityKind.USER: len(users),
        EntityKind.WORD: len(words),
        EntityKind.BRAND: len(brands),
        EntityKind.CATEGORY: len(categories),
    }
    names = {
        EntityKind.PRODUCT: [p.external_id for p in products],
        EntityKind.USER: users,
        EntityKind.WORD: words,
        EntityKind.BRAND: brands,
        EntityKind.CATEGORY: categories,
    }
    g = KnowledgeGraph(counts, names)
    user_index = {u: i for i, u in enumerate(users)}
    word_index = {w: i for i, w in enumerate(words)}
    brand_index = {b: i for i, b in enumerate(brands)}
    category_index = {c: i for i, c in enumerate(categories)}

    report = BuildReport()
    for i, p in enumerate(products):
        me = EntityRef(EntityKind.PRODUCT, i)
        for w in sorted(feature_words.get(p.external_id, set())):
            g.add_triple(me, Relation.DESCRIBED_BY, EntityRef(EntityKind.WORD, word_index[w]))
        if p.brand:
            g.add_triple(me, Relation.PRODUCED_BY, EntityRef(EntityKind.BRAND, brand_index[p.brand]))
        for label in p.category_labels():
            g.add_triple(me, Relation.BELONG_TO, EntityRef(EntityKind.CATEGORY, category_index[label]))
        for ext in p.also_viewed:
            j = product_index.get(ext)
            if j is None:
                report.dropped_also_viewed += 1
            elif j != i:
                g.add_triple(me, Relation.ALSO_VIEWED, EntityRef(EntityKind.PRODUCT, j))
        for ext in p.also_bought:
            j = product_index.get(ext)
            if j is None:
                report.dropped_also_bought += 1
            elif j != i:
                g.add_triple(me, Relation.ALSO_BOUGHT, EntityRef(EntityKind.PRODUCT, j))
    for r in reviews:
        i = product_index.get(r.product_id)
        if i is None:
            continue
        g.add_triple(EntityRef(EntityKind.USER, user_index[r.user_id]),
                     Relation.PURCHASE, EntityRef(EntityKind.PRODUCT, i))

    report.edge_counts = {r.name: g.edge_count(r) for r in Relation}
    if report.dropped_also_viewed or report.dropped_also_bought:
        logger.info("dropped dangling references: also_viewed=%d also_bought=%d",
                    report.dropped_also_viewed, report.dropped_also_bought)
    return g, report


def split_pairs(g: KnowledgeGraph, relation: Relation,
                spec: SplitSpec) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]:
    """Deterministic train/test split of a product-product relation's edges."""
    if relation not in (Relation.ALSO_VIEWED, Relation.ALSO_BOUGHT):
        raise ValueError(f"split target must be a product-product relation, got {relation.name}")
    if not 0.0 < spec.train_fraction < 1.0:
        raise InvalidFraction(f"train_fraction must be in (0,1), got {spec.train_fraction}")
    pairs = g.pairs(relation)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(pairs))
    n_train = int(round(len(pairs) * spec.train_fraction))
    train = sorted(pairs[i] for i in order[:n_train])
    test = sorted(pairs[i] for i in order[n_train:])
    return train, test


def training_graph(g: KnowledgeGraph,
                   test_splits: Mapping[Relation, Sequence[Tuple[int, int]]]) -> KnowledgeGraph:
    """Copy of ``g`` with every test edge of the target relations removed."""
    out = g
    for relation, pairs in test_splits.items():
        out = out.without_edges(relation, pairs)
    return out
