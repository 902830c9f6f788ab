"""Metrics, path statistics, graph perturbations and the experiment harness.

Ranking quality uses two protocols: a sampled ranking test (for each test
pair, the partner competes against n products irrelevant to the source) and
top-k list metrics (NDCG/recall/hit-ratio/precision against the held-out
partners).  The harness wires whole pipeline variants together, including
the ablations that swap the reward model or the policy, relation removal at
reasoning time, and random edge degradation.
"""

from __future__ import annotations

import logging
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .embedding import (EmbeddingRewarder, EmbeddingTable, action_score,
                        train_embeddings)
from .environment import WalkEnv
from .errors import InsufficientPopulation, UnknownVariant
from .graph import (COMPLEMENT, SCHEMA, SUBSTITUTE, TARGET_RELATION,
                    EntityKind, EntityRef, KnowledgeGraph, MetaPathSet,
                    Relation, default_meta_paths)
from .inference import InferenceRecord, infer_source
from .ingest import (SplitSpec, build_graph, select_feature_words, split_pairs,
                     training_graph)
from .pairwise import (FeatureBank, PairScorer, RelationClassifier,
                       build_feature_bank, train_pair_model)
from .policy import (AffinityPolicy, FixedWidthPolicy, UniformPolicy,
                     pretrain_policy, train_agent)
from .text import TfidfProjectionEmbedder, WordVectors

logger = logging.getLogger(__name__)

TAGS = (SUBSTITUTE, COMPLEMENT)


# -- rank metrics ----------------------------------------------------------


def hits_at_ks(scorer: Callable[[int, np.ndarray], np.ndarray],
               pairs: Sequence[Tuple[int, int]],
               irrelevant: Callable[[int], np.ndarray],
               n: int, ks: Sequence[int], seed: int = 0,
               negative_scorer: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
               ) -> Dict[int, float]:
    """Sampled ranking test at several cutoffs over the same samples.

    For each (a, b): draw n products irrelevant to a (without replacement),
    count how many score strictly above b; a hit at k needs that count < k.
    ``negative_scorer`` defaults to ``scorer`` and exists so the sampled
    negatives can bypass retrieval gating.
    """
    if negative_scorer is None:
        negative_scorer = scorer
    hits = {k: 0 for k in ks}
    for idx, (a, b) in enumerate(pairs):
        pool = np.asarray(irrelevant(a))
        if pool.size < n:
            raise InsufficientPopulation(
                f"only {pool.size} products irrelevant to {a}, need {n}")
        rng = np.random.default_rng([seed, idx])
        sample = pool[rng.choice(pool.size, size=n, replace=False)]
        s_b = float(scorer(a, np.array([b]))[0])
        m = int(np.sum(negative_scorer(a, sample) > s_b))
        for k in ks:
            hits[k] += 1 if m < k else 0
    total = max(1, len(pairs))
    return {k: hits[k] / total for k in ks}


def hits_at_k(scorer, pairs, irrelevant, n: int, k: int, seed: int = 0,
              negative_scorer=None) -> float:
    return hits_at_ks(scorer, pairs, irrelevant, n, [k], seed, negative_scorer)[k]


@dataclass
class TopkMetrics:
    ndcg: float
    recall: float
    hr: float
    precision: float


def topk_metrics(recommendations: Mapping, truth: Mapping, k: int = 10) -> TopkMetrics:
    """Binary-relevance list metrics averaged over queries with nonempty
    truth; DCG gain is 1/log2(rank+1) with ranks starting at 1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ndcgs, recalls, hrs, precisions = [], [], [], []
    for q in sorted(truth, key=repr):
        gt = set(truth[q])
        if not gt:
            continue
        top = list(recommendations.get(q, []))[:k]
        rel = [1 if item in gt else 0 for item in top]
        dcg = sum(r / math.log2(rank + 2) for rank, r in enumerate(rel))
        ideal = min(len(gt), k)
        idcg = sum(1.0 / math.log2(rank + 2) for rank in range(ideal))
        hits = sum(rel)
        ndcgs.append(dcg / idcg if idcg > 0 else 0.0)
        recalls.append(hits / len(gt))
        hrs.append(1.0 if hits > 0 else 0.0)
        precisions.append(hits / k)
    if not ndcgs:
        return TopkMetrics(0.0, 0.0, 0.0, 0.0)
    return TopkMetrics(float(np.mean(ndcgs)), float(np.mean(recalls)),
                       float(np.mean(hrs)), float(np.mean(precisions)))


@dataclass
class PathStats:
    paths_per_product: float
    products_per_product: float
    paths_per_pair: float


def path_stats(records: Sequence[InferenceRecord]) -> PathStats:
    """Averages over queried products: valid walks found, distinct related
    products found, and walks per (source, target) pair."""
    if not records:
        return PathStats(0.0, 0.0, 0.0)
    total_paths = sum(r.paths_total for r in records)
    total_targets = sum(r.targets for r in records)
    n = len(records)
    return PathStats(
        paths_per_product=total_paths / n,
        products_per_product=total_targets / n,
        paths_per_pair=(total_paths / total_targets) if total_targets else 0.0,
    )


def path_stats_from_json(rows: Sequence[Mapping]) -> PathStats:
    if not rows:
        return PathStats(0.0, 0.0, 0.0)
    total_paths = sum(int(r["paths_total"]) for r in rows)
    total_targets = sum(int(r["targets"]) for r in rows)
    n = len(rows)
    return PathStats(total_paths / n, total_targets / n,
                     (total_paths / total_targets) if total_targets else 0.0)


# -- graph perturbations ---------------------------------------------------


def degrade_graph(g: KnowledgeGraph, fraction: float, seed: int = 0,
                  relations: Optional[Sequence[Relation]] = None
                  ) -> Tuple[KnowledgeGraph, Dict[Relation, int]]:
    """Replace a random ``fraction`` of each relation's edges: the chosen
    edge's tail is redirected to a uniformly random entity of the same kind.
    Returns the new graph and the per-relation count of surviving original
    edges."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    out = g.copy()
    surviving: Dict[Relation, int] = {}
    rng = np.random.default_rng([seed, 0x64656772])
    for r in relations or list(Relation):
        hk, tk = SCHEMA[r]
        before = set(g.pairs(r))
        pairs = sorted(before)
        m = len(pairs)
        n_replace = int(round(fraction * m))
        if n_replace and m:
            chosen = rng.choice(m, size=n_replace, replace=False)
            pop = g.population(tk)
            for i in sorted(int(c) for c in chosen):
                h, t = pairs[i]
                out.remove_triple(EntityRef(hk, h), r, EntityRef(tk, t))
                if pop <= 1:
                    continue
                for _ in range(100):
                    nt = int(rng.integers(pop))
                    if nt != t and (hk != tk or nt != h):
                        break
                out.add_triple(EntityRef(hk, h), r, EntityRef(tk, nt))
        surviving[r] = len(before & set(out.pairs(r)))
    return out, surviving


# -- experiment harness ----------------------------------------------------

VARIANT_FULL = "full"
VARIANT_EMBED_REWARD = "embed-reward"
VARIANT_FIXED_POLICY = "fixed-policy"
VARIANT_UNIFORM = "uniform-policy"
VARIANT_DROP = "drop-relation"
VARIANT_DEGRADE = "degrade"

KNOWN_VARIANTS = (VARIANT_FULL, VARIANT_EMBED_REWARD, VARIANT_FIXED_POLICY,
                  VARIANT_UNIFORM, VARIANT_DROP, VARIANT_DEGRADE)


def parse_variant(name: str) -> Tuple[str, Optional[str]]:
    base, _, arg = name.partition(":")
    if base not in KNOWN_VARIANTS:
        raise UnknownVariant(f"unknown variant {name!r} (known: {', '.join(KNOWN_VARIANTS)})")
    if base in (VARIANT_DROP, VARIANT_DEGRADE) and not arg:
        raise UnknownVariant(f"variant {base} needs an argument, e.g. {base}:<value>")
    return base, arg or None


def _derived_seed(seed: int, label: str) -> int:
    return (seed * 1000003 + zlib.crc32(label.encode())) % (2 ** 31)


class EmbeddingCandidateScorer:
    """Candidate scorer for the embedding-reward ablation: per-relation dot
    score plus bias, no learned pair model anywhere."""

    name = "embedding"

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self.calls = 0

    def score_many(self, v0_id: int, candidates: Sequence[int], tag: str) -> np.ndarray:
        self.calls += len(candidates)
        relation = TARGET_RELATION[tag]
        v = self.table.entity_vector(EntityRef(EntityKind.PRODUCT, v0_id))
        base = v + self.table.relation_vector(relation)
        idx = self.table.indices(EntityKind.PRODUCT,
                                 np.asarray(candidates, dtype=np.int64))
        return self.table.entity[idx] @ base + self.table.bias[idx]


@dataclass
class PipelineArtifacts:
    graph: KnowledgeGraph
    train_graph: KnowledgeGraph
    reasoning_graph: KnowledgeGraph
    splits: Dict[Relation, Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]]
    patterns: MetaPathSet
    table: EmbeddingTable
    bank: Optional[FeatureBank]
    pair_scorer: Optional[PairScorer]
    candidate_scorer: object
    rewarder: object
    policy: object
    env: WalkEnv
    records: Dict[str, Dict[int, InferenceRecord]]  # tag -> source id -> record
    train_log: Optional[object] = None
    surviving: Optional[Dict[Relation, int]] = None


def build_irrelevance(train_graph: KnowledgeGraph,
                      splits: Mapping[Relation, Tuple[List, List]]) -> Callable[[int], np.ndarray]:
    """Pool of products with no product-product edge to the query in either
    the training graph or the test splits."""
    partners: Dict[int, Set[int]] = defaultdict(set)
    for relation, (train, test) in splits.items():
        for a, b in test:
            partners[a].add(b)
            partners[b].add(a)
    n = train_graph.population(EntityKind.PRODUCT)

    def pool(a: int) -> np.ndarray:
        ref = EntityRef(EntityKind.PRODUCT, a)
        excluded = {a}
        excluded |= train_graph.neighbor_ids(ref, Relation.ALSO_VIEWED)
        excluded |= train_graph.neighbor_ids(ref, Relation.ALSO_BOUGHT)
        excluded |= partners[a]
        return np.array([p for p in range(n) if p not in excluded], dtype=np.int64)

    return pool


def run_pipeline(cfg, seed: int, variant: Optional[str] = None) -> Tuple[Dict, PipelineArtifacts]:
    """Execute one full pipeline variant in memory and produce the metric
    report for one seed.  ``cfg`` is a RunConfig."""
    from .config import config_hash  # local import; config depends on nothing heavy

    variant = variant or cfg.variant
    base, arg = parse_variant(variant)
    products, reviews = cfg.load_dataset()

    # graph stage
    feature_words = select_feature_words(reviews, cfg.graph.feature_words)
    graph, _report = build_graph(products, reviews, feature_words)
    splits = {}
    for relation in (Relation.ALSO_VIEWED, Relation.ALSO_BOUGHT):
        splits[relation] = split_pairs(
            graph, relation, SplitSpec(cfg.graph.split_fraction,
                                       _derived_seed(seed, f"split-{relation.name}")))
    train_graph = training_graph(graph, {r: test for r, (tr, test) in splits.items()})

    surviving = None
    if base == VARIANT_DEGRADE:
        train_graph, surviving = degrade_graph(train_graph, float(arg),
                                               _derived_seed(seed, "degrade"))

    patterns = (MetaPathSet.from_config(cfg.graph.patterns)
                if cfg.graph.patterns else default_meta_paths())

    # embeddings
    table = train_embeddings(train_graph, dim=cfg.embed.dim, epochs=cfg.embed.epochs,
                             negatives=cfg.embed.negatives, lr=cfg.embed.lr,
                             margin=cfg.embed.margin, lr_decay=cfg.embed.lr_decay,
                             seed=_derived_seed(seed, "embed"))

    # reward model / candidate scorer
    bank = None
    pair_scorer = None
    if base == VARIANT_EMBED_REWARD:
        rewarder = EmbeddingRewarder(table)
        candidate_scorer = EmbeddingCandidateScorer(table)
    else:
        vectors = (WordVectors.from_file(cfg.pair.word_vectors)
                   if cfg.pair.word_vectors
                   else WordVectors(dim=cfg.pair.category_dim,
                                    seed=_derived_seed(seed, "wordvec")))
        embedder = TfidfProjectionEmbedder(vectors, out_dim=cfg.pair.product_dim,
                                           seed=_derived_seed(seed, "docvec"))
        bank = build_feature_bank(products, train_graph, vectors, embedder,
                                  cfg.graph.feature_words)
        heads = {}
        for tag in TAGS:
            head = RelationClassifier(product_dim=cfg.pair.product_dim,
                                      category_dim=cfg.pair.category_dim,
                                      layers=cfg.pair.layers, hidden=cfg.pair.hidden,
                                      seed=_derived_seed(seed, f"pair-{tag}"), tag=tag)
            train_pairs = splits[TARGET_RELATION[tag]][0]
            if train_pairs:
                train_pair_model(head, bank, train_pairs, negatives=cfg.pair.negatives,
                                 epochs=cfg.pair.epochs, lr=cfg.pair.lr,
                                 batch_size=cfg.pair.batch_size,
                                 seed=_derived_seed(seed, f"pairfit-{tag}"))
            heads[tag] = head
        pair_scorer = PairScorer(heads[SUBSTITUTE], heads[COMPLEMENT], bank)
        rewarder = pair_scorer
        candidate_scorer = pair_scorer

    # agent
    state_dim = (1 + 2 * (cfg.agent.history + 1)) * cfg.embed.dim
    env = WalkEnv(train_graph, table, patterns, horizon=cfg.agent.horizon,
                  history=cfg.agent.history, prune_size=cfg.agent.prune_size)
    train_log = None
    if base == VARIANT_UNIFORM:
        policy = UniformPolicy()
    else:
        if base == VARIANT_FIXED_POLICY:
            policy = FixedWidthPolicy(state_dim=state_dim, width=cfg.agent.prune_size + 1,
                                      hidden=cfg.agent.hidden,
                                      seed=_derived_seed(seed, "policy"))
        else:
            policy = AffinityPolicy(state_dim=state_dim, action_dim=2 * cfg.embed.dim,
                                    hidden=cfg.agent.hidden, affinity=cfg.agent.affinity,
                                    seed=_derived_seed(seed, "policy"),
                                    init_gain=cfg.agent.init_gain)
        starts = [EntityRef(EntityKind.PRODUCT, i)
                  for i in range(train_graph.population(EntityKind.PRODUCT))]
        if cfg.agent.pretrain_epochs > 0:
            pretrain_policy(policy, env, table, starts,
                            epochs=cfg.agent.pretrain_epochs,
                            lr=cfg.agent.pretrain_lr,
                            seed=_derived_seed(seed, "pretrain"),
                            temperature=cfg.agent.pretrain_temperature,
                            history=cfg.agent.history)
        train_log = train_agent(policy, env, table, rewarder, starts,
                                epochs=cfg.agent.epochs, batch_size=cfg.agent.batch_size,
                                lr=cfg.agent.lr, gamma=cfg.agent.gamma,
                                seed=_derived_seed(seed, "agent"),
                                entropy_weight=cfg.agent.entropy_weight,
                                history=cfg.agent.history,
                                episodes_per_start=cfg.agent.episodes_per_start)

    # reasoning graph (relation removal applies here only)
    reasoning_graph = train_graph
    if base == VARIANT_DROP:
        reasoning_graph = train_graph.without_relation(Relation[arg.upper()])
    infer_env = WalkEnv(reasoning_graph, table, patterns, horizon=cfg.agent.horizon,
                        history=cfg.agent.history, prune_size=cfg.agent.prune_size)

    # inference over every product touched by a test pair
    sources: Set[int] = set()
    for relation, (_tr, test) in splits.items():
        for a, b in test:
            sources.add(a)
            sources.add(b)
    if cfg.infer.sources == "all":
        sources = set(range(graph.population(EntityKind.PRODUCT)))
    stochastic = cfg.infer.stochastic or base == VARIANT_UNIFORM
    records: Dict[str, Dict[int, InferenceRecord]] = {tag: {} for tag in TAGS}
    for src in sorted(sources):
        rng = np.random.default_rng([_derived_seed(seed, "beam"), src]) if stochastic else None
        recs = infer_source(EntityRef(EntityKind.PRODUCT, src), policy, infer_env, table,
                            candidate_scorer, train_graph, sizes=cfg.infer.beam,
                            tags=TAGS, top_n=cfg.infer.top_n,
                            history=cfg.agent.history, stochastic=stochastic, rng=rng)
        for tag, rec in recs.items():
            records[tag][src] = rec

    artifacts = PipelineArtifacts(
        graph=graph, train_graph=train_graph, reasoning_graph=reasoning_graph,
        splits=splits, patterns=patterns, table=table, bank=bank,
        pair_scorer=pair_scorer, candidate_scorer=candidate_scorer,
        rewarder=rewarder, policy=policy, env=env, records=records,
        train_log=train_log, surviving=surviving)

    report = evaluate_artifacts(cfg, seed, variant, artifacts)
    report["config_hash"] = config_hash(cfg)
    return report, artifacts


def evaluate_artifacts(cfg, seed: int, variant: str,
                       art: PipelineArtifacts) -> Dict:
    """Metric report for a finished pipeline run."""
    irrelevant = build_irrelevance(art.train_graph, art.splits)
    report: Dict = {"variant": variant, "seed": seed, "relations": {}}
    for tag in TAGS:
        relation = TARGET_RELATION[tag]
        test_pairs = art.splits[relation][1]
        tag_records = art.records[tag]

        def gated(a: int, cands: np.ndarray, _tag=tag, _recs=tag_records) -> np.ndarray:
            rec = _recs.get(a)
            retrieved = set(rec.path_counts) if rec else set()
            base = art.candidate_scorer.score_many(a, cands, _tag)
            mask = np.array([c in retrieved for c in cands])
            return np.where(mask, base, -np.inf)

        def direct(a: int, cands: np.ndarray, _tag=tag) -> np.ndarray:
            return art.candidate_scorer.score_many(a, cands, _tag)

        hits = hits_at_ks(gated, test_pairs, irrelevant, n=cfg.eval.n_irrelevant,
                          ks=cfg.eval.hits_k, seed=_derived_seed(seed, f"hits-{tag}"),
                          negative_scorer=direct)

        truth: Dict[int, Set[int]] = defaultdict(set)
        for a, b in test_pairs:
            truth[a].add(b)
            truth[b].add(a)
        recs = {q: [c.product.id for c in tag_records[q].ranked.candidates]
                for q in truth if q in tag_records}
        top = topk_metrics(recs, truth, cfg.eval.metric_k)
        stats = path_stats([tag_records[s] for s in sorted(tag_records)])
        k = cfg.eval.metric_k
        report["relations"][tag] = {
            **{f"hits@{kk}": hits[kk] for kk in cfg.eval.hits_k},
            f"ndcg@{k}": top.ndcg, f"recall@{k}": top.recall,
            f"hr@{k}": top.hr, f"precision@{k}": top.precision,
            "path_stats": {
                "paths_per_product": stats.paths_per_product,
                "products_per_product": stats.products_per_product,
                "paths_per_pair": stats.paths_per_pair,
            },
        }
    counters = {"pair_model_reward_calls": art.pair_scorer.calls if art.pair_scorer else 0}
    if isinstance(art.rewarder, EmbeddingRewarder):
        counters["embedding_reward_calls"] = art.rewarder.calls
    if isinstance(art.candidate_scorer, EmbeddingCandidateScorer):
        counters["embedding_score_calls"] = art.candidate_scorer.calls
    report["counters"] = counters
    if art.train_log is not None:
        report["training"] = {"mean_returns": art.train_log.mean_returns}
    if art.surviving is not None:
        report["surviving_edges"] = {r.name: n for r, n in art.surviving.items()}
    return report


def run_experiment(cfg, variant: Optional[str] = None,
                   seeds: Optional[Sequence[int]] = None) -> Dict:
    """Run the configured variant over one or more seeds and aggregate."""
    from .config import config_hash

    variant = variant or cfg.variant
    seeds = list(seeds) if seeds is not None else list(cfg.seeds)
    per_seed = {}
    for s in seeds:
        report, _ = run_pipeline(cfg, seed=s, variant=variant)
        per_seed[str(s)] = report
    aggregate: Dict[str, Dict[str, float]] = {}
    for tag in TAGS:
        keys = [k for k in per_seed[str(seeds[0])]["relations"][tag] if k != "path_stats"]
        aggregate[tag] = {
            k: float(np.mean([per_seed[str(s)]["relations"][tag][k] for s in seeds]))
            for k in keys}
    return {
        "variant": variant,
        "seeds": seeds,
        "config_hash": config_hash(cfg),
        "per_seed": per_seed,
        "aggregate": aggregate,
    }
