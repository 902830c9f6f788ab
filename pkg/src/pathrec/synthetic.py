"""Synthetic planted-relationship datasets for desk-scale verification.

Substitute pairs are planted inside small clusters whose members share a
category and a couple of signature words; complement pairs share scenario
words and a co-purchaser.  The signature vocabulary is kept small so that
bridge entities (words, categories, users) have high degree: an unguided
walker then rarely samples the planted partner, while a trained policy can
learn to.  Output uses the same JSON-lines formats the ingest parsers read.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from .graph import Relation
from .ingest import ProductRecord, ReviewRecord

PAIRS_PER_CLUSTER = 3  # clusters of three products -> C(3,2) pairs


@dataclass(frozen=True)
class SynthConfig:
    products: int = 120
    substitute_pairs: int = 60
    complement_pairs: int = 60
    vocabulary: int = 48
    users: int = 40
    brands: int = 6
    categories: int = 6
    seed: int = 0
    # shape knobs; defaults tuned so unguided beam retrieval stays low
    cluster_shared_words: int = 2
    extra_words: int = 4
    common_words: int = 2
    scenario_pool: int = 8
    scenario_words: int = 2
    co_purchasers: int = 1
    purchases_per_user: int = 12
    reviews_per_product: int = 2
    # description-only descriptor tokens: they shape document vectors but
    # never appear in reviews, so they create no graph bridges; clusters and
    # complement pairs draw from disjoint halves of the pool
    latent_pool: int = 100
    latent_per_cluster: int = 5
    latent_per_pair: int = 8
    latent_noise: int = 2

    def validate(self) -> None:
        if self.products < 2:
            raise ValueError("need at least 2 products")
        clusters = math.ceil(self.substitute_pairs / PAIRS_PER_CLUSTER)
        if clusters * 3 > self.products:
            raise ValueError(
                f"{self.substitute_pairs} substitute pairs need {clusters * 3} products, "
                f"have {self.products}")
        if self.scenario_pool + self.common_words >= self.vocabulary:
            raise ValueError("vocabulary too small for the word pools")
        if self.users < self.co_purchasers:
            raise ValueError("not enough users for co-purchasers")


@dataclass
class SynthDataset:
    config: SynthConfig
    products: List[ProductRecord]
    reviews: List[ReviewRecord]
    truth: List[Tuple[str, str, str]]  # (ext_a, ext_b, tag)
    expected_stats: Dict[Relation, float] = field(default_factory=dict)

    def truth_pairs(self, tag: str) -> List[Tuple[str, str]]:
        return [(a, b) for a, b, t in self.truth if t == tag]

    def write(self, metadata_path, reviews_path, truth_path) -> None:
        with open(metadata_path, "w", encoding="utf-8") as fh:
            for p in self.products:
                fh.write(json.dumps({
                    "asin": p.external_id,
                    "title": p.title,
                    "description": p.description,
                    "brand": p.brand,
                    "categories": p.categories,
                    "related": {"also_viewed": p.also_viewed, "also_bought": p.also_bought},
                }, sort_keys=True) + "\n")
        with open(reviews_path, "w", encoding="utf-8") as fh:
            for r in self.reviews:
                fh.write(json.dumps({
                    "reviewerID": r.user_id, "asin": r.product_id, "reviewText": r.text,
                }, sort_keys=True) + "\n")
        with open(truth_path, "w", encoding="utf-8") as fh:
            for a, b, tag in self.truth:
                fh.write(json.dumps({"a": a, "b": b, "tag": tag}) + "\n")


def load_truth(path) -> List[Tuple[str, str, str]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out.append((obj["a"], obj["b"], obj["tag"]))
    return out


def generate(cfg: SynthConfig) -> SynthDataset:
    """Deterministically generate a planted dataset from the config."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)

    ext = [f"P{i:04d}" for i in range(cfg.products)]
    vocab = [f"word{i:03d}" for i in range(cfg.vocabulary)]
    common_pool = vocab[: cfg.common_words * 6]
    scenario_words = vocab[len(common_pool): len(common_pool) + cfg.scenario_pool]
    group_pool = vocab[len(common_pool) + cfg.scenario_pool:]
    brands = [f"brand{i:02d}" for i in range(cfg.brands)]
    categories = [f"category{i:02d}" for i in range(cfg.categories)]
    users = [f"U{i:04d}" for i in range(cfg.users)]

    n_clusters = math.ceil(cfg.substitute_pairs / PAIRS_PER_CLUSTER)
    cluster_of = [-1] * cfg.products
    for c in range(n_clusters):
        for m in range(3):
            cluster_of[c * 3 + m] = c

    cluster_words = [list(rng.choice(len(group_pool), size=cfg.cluster_shared_words, replace=False))
                     for _ in range(n_clusters)]
    cluster_category = [int(rng.integers(cfg.categories)) for _ in range(n_clusters)]
    latents = [f"feature{i:03d}" for i in range(cfg.latent_pool)]
    half = cfg.latent_pool // 2
    cluster_latents = [list(rng.choice(half, size=min(cfg.latent_per_cluster, half),
                                       replace=False)) for _ in range(n_clusters)]

    words: List[List[str]] = []
    descriptors: List[List[str]] = []
    brand_of: List[str] = []
    category_of: List[str] = []
    for i in range(cfg.products):
        c = cluster_of[i]
        chosen: List[str] = []
        desc_tokens: List[str] = []
        if c >= 0:
            chosen.extend(group_pool[j] for j in cluster_words[c])
            desc_tokens.extend(latents[j] for j in cluster_latents[c])
            category_of.append(categories[cluster_category[c]])
        else:
            category_of.append(categories[int(rng.integers(cfg.categories))])
        brand_of.append(brands[int(rng.integers(cfg.brands))])
        extras = rng.choice(len(group_pool), size=cfg.extra_words, replace=False)
        chosen.extend(group_pool[j] for j in extras)
        commons = rng.choice(len(common_pool), size=cfg.common_words, replace=False)
        chosen.extend(common_pool[j] for j in commons)
        noise = rng.choice(half, size=min(cfg.latent_noise, half), replace=False)
        desc_tokens.extend(latents[j] for j in noise)
        # dedupe, keep order
        seen: Set[str] = set()
        words.append([w for w in chosen if not (w in seen or seen.add(w))])
        seen_d: Set[str] = set()
        descriptors.append([w for w in desc_tokens if not (w in seen_d or seen_d.add(w))])

    # substitute pairs: within-cluster pairs until the quota is met
    sub_pairs: List[Tuple[int, int]] = []
    for c in range(n_clusters):
        base = c * 3
        for a, b in ((base, base + 1), (base, base + 2), (base + 1, base + 2)):
            if len(sub_pairs) < cfg.substitute_pairs:
                sub_pairs.append((a, b))

    # complement triads: groups of three mutually-complementary products
    # (think phone / charger / case) drawn from different clusters.  All
    # three pairs of a triad are planted, so a held-out pair stays reachable
    # through the surviving chain edges; the triad shares scenario words,
    # latent descriptors and a co-purchaser.
    used: Set[Tuple[int, int]] = set(sub_pairs)
    comp_pairs: List[Tuple[int, int]] = []
    comp_triads: List[Tuple[int, int, int]] = []
    n_triads = math.ceil(cfg.complement_pairs / 3)
    max_membership = 1 if 3 * n_triads <= cfg.products else 2
    membership = [0] * cfg.products
    attempts = 0
    while len(comp_triads) < n_triads:
        attempts += 1
        if attempts > 500 * n_triads:
            raise ValueError("could not place the requested complement pairs")
        trio = sorted(int(x) for x in rng.choice(cfg.products, size=3, replace=False))
        pairs = [(trio[0], trio[1]), (trio[0], trio[2]), (trio[1], trio[2])]
        clusters = [cluster_of[p] for p in trio]
        if any(c >= 0 and clusters.count(c) > 1 for c in clusters):
            continue
        if any(p in used for p in pairs):
            continue
        if any(membership[p] >= max_membership for p in trio):
            continue
        for p in trio:
            membership[p] += 1
        used.update(pairs)
        comp_triads.append(tuple(trio))
        comp_pairs.extend(pairs[:cfg.complement_pairs - len(comp_pairs)])
        scen = rng.choice(cfg.scenario_pool, size=cfg.scenario_words, replace=False)
        scenario = [scenario_words[j] for j in scen]
        triad_latents = [latents[half + int(j)]
                         for j in rng.choice(cfg.latent_pool - half,
                                             size=min(cfg.latent_per_pair,
                                                      cfg.latent_pool - half),
                                             replace=False)]
        for p in trio:
            for w in scenario:
                if w not in words[p]:
                    words[p].append(w)
            for w in triad_latents:
                if w not in descriptors[p]:
                    descriptors[p].append(w)

    # purchases: noise baskets per user, plus one dedicated co-purchaser per
    # complement pair so the user bridge exists
    purchases: Set[Tuple[int, int]] = set()  # (user, product)
    for u in range(cfg.users):
        basket = rng.choice(cfg.products, size=min(cfg.purchases_per_user, cfg.products),
                            replace=False)
        purchases.update((u, int(p)) for p in basket)
    for trio in comp_triads:
        buyers = [int(u) for u in rng.choice(cfg.users, size=cfg.co_purchasers, replace=False)]
        purchases.update((u, p) for u in buyers for p in trio)

    records: List[ProductRecord] = []
    for i in range(cfg.products):
        doc_words = words[i]
        title = " ".join([brand_of[i], category_of[i]] + doc_words[:4])
        description = " ".join([brand_of[i], category_of[i]] + doc_words
                               + descriptors[i] * 2)
        records.append(ProductRecord(
            external_id=ext[i],
            title=title,
            description=description,
            brand=brand_of[i],
            categories=[[category_of[i]]],
        ))
    for a, b in sub_pairs:
        records[a].also_viewed.append(ext[b])
        records[b].also_viewed.append(ext[a])
    for a, b in comp_pairs:
        records[a].also_bought.append(ext[b])
        records[b].also_bought.append(ext[a])

    reviews: List[ReviewRecord] = []
    for u, p in sorted(purchases):
        body = list(words[p])
        rng.shuffle(body)
        reviews.append(ReviewRecord(user_id=users[u], product_id=ext[p], text=" ".join(body)))
    extra_reviews = max(0, cfg.reviews_per_product - 1)
    for i in range(cfg.products):
        for _ in range(extra_reviews):
            u = int(rng.integers(cfg.users))
            body = list(words[i])
            rng.shuffle(body)
            reviews.append(ReviewRecord(user_id=users[u], product_id=ext[i], text=" ".join(body)))
            purchases.add((u, i))

    truth = ([(ext[a], ext[b], "substitute") for a, b in sub_pairs]
             + [(ext[a], ext[b], "complement") for a, b in comp_pairs])

    expected = {
        Relation.ALSO_VIEWED: len(sub_pairs) / cfg.products,
        Relation.ALSO_BOUGHT: len(comp_pairs) / cfg.products,
        Relation.DESCRIBED_BY: sum(len(set(w)) for w in words) / cfg.products,
        Relation.PRODUCED_BY: 1.0,
        Relation.BELONG_TO: 1.0,
        Relation.PURCHASE: len(purchases) / cfg.users,
    }
    return SynthDataset(config=cfg, products=records, reviews=reviews,
                        truth=truth, expected_stats=expected)
