"""Beam-search inference over a trained policy: candidate retrieval,
scoring, ranking, and the JSON-lines results format.

The beam expands every frontier walk into its top-K_t continuations by
policy probability (or samples them without replacement in stochastic
mode).  Every tree node whose self-loop-stripped walk matches a meta-path
and ends at another product yields a candidate; when several walks reach
the same product the most probable one becomes its explanation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .embedding import EmbeddingTable
from .environment import State, WalkEnv
from .graph import (COMPLEMENT, SUBSTITUTE, TARGET_RELATION, EntityKind,
                    EntityRef, KnowledgeGraph, ReasoningPath, Relation)
from .policy import action_matrix, encode_state

logger = logging.getLogger(__name__)

DEFAULT_BEAM = (25, 5, 1)
DEFAULT_TOP_N = 10


@dataclass
class Candidate:
    product: EntityRef
    score: float
    path: ReasoningPath
    n_paths: int = 1


@dataclass
class RankedRecommendation:
    tag: str
    source: EntityRef
    candidates: List[Candidate]
    requested: int


@dataclass
class InferenceRecord:
    """Everything emitted for one (source, relation) query."""

    source: EntityRef
    tag: str
    ranked: RankedRecommendation
    paths_total: int = 0
    targets: int = 0
    path_counts: Dict[int, int] = field(default_factory=dict)


def beam_search(v0: EntityRef, policy, env: WalkEnv, table: EmbeddingTable,
                sizes: Sequence[int], history: int = 1, stochastic: bool = False,
                rng: Optional[np.random.Generator] = None) -> List[ReasoningPath]:
    """Distinct valid walks from per-node top-K (or sampled-K) expansion.

    Each frontier walk expands into its K_t most probable continuations, so
    at most prod(K_t) walks survive to the horizon; a short pattern ends by
    idling on the self-loop.  Finished walks are stripped of trailing
    self-loops and kept when they match a meta-path and end at another
    product (most probable leaf wins a stripped-path tie).
    """
    if len(sizes) != env.horizon:
        raise ValueError(f"need {env.horizon} beam sizes, got {len(sizes)}")
    if any(k < 1 for k in sizes):
        raise ValueError("beam sizes must be >= 1")
    if stochastic and rng is None:
        rng = np.random.default_rng(0)

    frontier: List[Tuple[State, float]] = [(env.reset(v0), 0.0)]
    for k in sizes:
        next_frontier: List[Tuple[State, float]] = []
        for state, logp in frontier:
            space = env.prune_actions(state)
            svec = encode_state(state, table, history)
            amat = action_matrix(space.actions, table)
            probs = policy.action_probs(svec, amat)
            m = len(probs)
            if stochastic:
                take = min(k, m)
                chosen = rng.choice(m, size=take, replace=False, p=probs)
                chosen = sorted(int(c) for c in chosen)
            else:
                order = sorted(range(m), key=lambda i: (-probs[i], i))
                chosen = order[:k]
            for idx in chosen:
                child, _ = env.step(state, space.actions[idx])
                next_frontier.append((child, logp + float(np.log(max(probs[idx], 1e-300)))))
        frontier = next_frontier

    found: Dict[Tuple, ReasoningPath] = {}
    for state, logp in frontier:
        path = env.episode_path(state)
        if path is None or not env.is_valid_terminal(path):
            continue
        key = (path.entities, path.relations)
        if key not in found or logp > found[key].log_prob:
            found[key] = ReasoningPath(entities=path.entities,
                                       relations=path.relations, log_prob=logp)
    return list(found.values())


def collect_candidates(paths: Sequence[ReasoningPath], tag: str, scorer,
                       v0: EntityRef, env: WalkEnv) -> Dict[int, Candidate]:
    """Map end product -> scored candidate with its best explanation walk.

    Only walks matching the tag's patterns count; the explanation is the
    retained walk with the highest policy log-probability.
    """
    per_product: Dict[int, List[ReasoningPath]] = {}
    for p in paths:
        if env.patterns.matches(p.relations, tag):
            per_product.setdefault(p.end.id, []).append(p)
    if not per_product:
        return {}
    ids = sorted(per_product)
    scores = scorer.score_many(v0.id, ids, tag)
    out: Dict[int, Candidate] = {}
    for pid, score in zip(ids, scores):
        best = max(per_product[pid],
                   key=lambda p: (p.log_prob, tuple(-e.id for e in p.entities)))
        out[pid] = Candidate(product=EntityRef(EntityKind.PRODUCT, pid),
                             score=float(score), path=best,
                             n_paths=len(per_product[pid]))
    return out


def rank(candidates: Mapping[int, Candidate], v0: EntityRef,
         train_graph: KnowledgeGraph, tag: str, n: int = DEFAULT_TOP_N) -> RankedRecommendation:
    """Drop the source's training neighbors under the target relation, sort
    by score descending (ties by product id) and truncate to n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    relation = TARGET_RELATION[tag]
    known = train_graph.neighbor_ids(v0, relation)
    kept = [c for pid, c in sorted(candidates.items())
            if pid != v0.id and pid not in known]
    kept.sort(key=lambda c: (-c.score, c.product.id))
    return RankedRecommendation(tag=tag, source=v0, candidates=kept[:n], requested=n)


def infer_source(v0: EntityRef, policy, env: WalkEnv, table: EmbeddingTable,
                 scorer, train_graph: KnowledgeGraph, sizes: Sequence[int] = DEFAULT_BEAM,
                 tags: Sequence[str] = (SUBSTITUTE, COMPLEMENT), top_n: int = DEFAULT_TOP_N,
                 history: int = 1, stochastic: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Dict[str, InferenceRecord]:
    """One beam per source, then per-tag candidate collection and ranking."""
    paths = beam_search(v0, policy, env, table, sizes, history, stochastic, rng)
    out: Dict[str, InferenceRecord] = {}
    for tag in tags:
        tagged = [p for p in paths if env.patterns.matches(p.relations, tag)]
        cands = collect_candidates(tagged, tag, scorer, v0, env)
        ranked = rank(cands, v0, train_graph, tag, top_n)
        out[tag] = InferenceRecord(
            source=v0, tag=tag, ranked=ranked,
            paths_total=sum(c.n_paths for c in cands.values()),
            targets=len(cands),
            path_counts={pid: c.n_paths for pid, c in sorted(cands.items())},
        )
    return out


def record_to_json(rec: InferenceRecord, graph: KnowledgeGraph) -> Dict:
    return {
        "source": graph.name(rec.source),
        "relation": rec.tag,
        "paths_total": rec.paths_total,
        "targets": rec.targets,
        "path_counts": {graph.name(EntityRef(EntityKind.PRODUCT, pid)): n
                        for pid, n in rec.path_counts.items()},
        "candidates": [{
            "product": graph.name(c.product),
            "score": c.score,
            "n_paths": c.n_paths,
            "path": c.path.render(graph),
        } for c in rec.ranked.candidates],
    }


def write_records(path, records: Sequence[InferenceRecord], graph: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec, graph), sort_keys=True) + "\n")


def read_records(path) -> List[Dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def records_from_json(rows: Sequence[Dict],
                      graph: KnowledgeGraph) -> Dict[str, Dict[int, InferenceRecord]]:
    """Rebuild the in-memory record map from an emitted results file (paths
    are not reconstructed; only ids, scores and counts)."""
    name_to_id = {graph.name(EntityRef(EntityKind.PRODUCT, i)): i
                  for i in range(graph.population(EntityKind.PRODUCT))}
    out: Dict[str, Dict[int, InferenceRecord]] = {}
    for row in rows:
        src = name_to_id[row["source"]]
        tag = row["relation"]
        source = EntityRef(EntityKind.PRODUCT, src)
        cands = [Candidate(product=EntityRef(EntityKind.PRODUCT, name_to_id[c["product"]]),
                           score=float(c["score"]), path=None, n_paths=int(c["n_paths"]))
                 for c in row["candidates"]]
        ranked = RankedRecommendation(tag=tag, source=source, candidates=cands,
                                      requested=len(cands))
        out.setdefault(tag, {})[src] = InferenceRecord(
            source=source, tag=tag, ranked=ranked,
            paths_total=int(row["paths_total"]), targets=int(row["targets"]),
            path_counts={name_to_id[k]: int(v) for k, v in row["path_counts"].items()})
    return out
