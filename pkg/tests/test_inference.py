import numpy as np
import pytest

from pathrec.embedding import EmbeddingTable
from pathrec.environment import SELF_LOOP, WalkEnv
from pathrec.graph import (COMPLEMENT, SUBSTITUTE, EntityKind, EntityRef,
                           KnowledgeGraph, Relation, default_meta_paths,
                           match_meta_path)
from pathrec.inference import (beam_search, collect_candidates, infer_source,
                               rank, read_records, record_to_json,
                               records_from_json, write_records)
from pathrec.pairwise import PairScorer
from pathrec.policy import AffinityPolicy, UniformPolicy, action_matrix, encode_state

from conftest import product, word

COUNTS = {EntityKind.PRODUCT: 4, EntityKind.USER: 1, EntityKind.WORD: 2,
          EntityKind.BRAND: 1, EntityKind.CATEGORY: 1}


def six_node_graph():
    """4 products + 2 words wired so several 2/3-hop walks exist."""
    g = KnowledgeGraph(COUNTS)
    g.add_triple(product(0), Relation.DESCRIBED_BY, word(0))
    g.add_triple(product(1), Relation.DESCRIBED_BY, word(0))
    g.add_triple(product(2), Relation.DESCRIBED_BY, word(0))
    g.add_triple(product(0), Relation.DESCRIBED_BY, word(1))
    g.add_triple(product(3), Relation.DESCRIBED_BY, word(1))
    g.add_triple(product(1), Relation.ALSO_VIEWED, product(2))
    g.add_triple(product(0), Relation.ALSO_BOUGHT, product(3))
    return g


@pytest.fixture()
def fixture_env():
    g = six_node_graph()
    table = EmbeddingTable(COUNTS, 8, seed=0)
    env = WalkEnv(g, table, default_meta_paths(), horizon=3, prune_size=50)
    policy = AffinityPolicy(state_dim=5 * 8, action_dim=16, hidden=12, affinity=6,
                            seed=3, similarity_init=False)
    return g, table, env, policy


def brute_force_beam(v0, policy, env, table, sizes):
    """Independent tree expansion oracle: recursive top-K by probability,
    keeping the stripped leaves that form valid walks."""
    found = {}

    def expand(state, logp, depth):
        if depth == len(sizes):
            path = env.episode_path(state)
            if path is not None and env.is_valid_terminal(path):
                key = (path.entities, path.relations)
                if key not in found or logp > found[key]:
                    found[key] = logp
            return
        space = env.prune_actions(state)
        svec = encode_state(state, table, 1)
        amat = action_matrix(space.actions, table)
        probs = policy.action_probs(svec, amat)
        order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))[:sizes[depth]]
        for i in order:
            child, _ = env.step(state, space.actions[i])
            expand(child, logp + float(np.log(probs[i])), depth + 1)

    expand(env.reset(v0), 0.0, 0)
    return found


class TestBeamSearch:
    @pytest.mark.parametrize("sizes", [[2, 2, 1], [1, 1, 1]])
    def test_matches_brute_force_expansion(self, fixture_env, sizes):
        g, table, env, policy = fixture_env
        got = beam_search(product(0), policy, env, table, sizes)
        expected = brute_force_beam(product(0), policy, env, table, sizes)
        assert {(p.entities, p.relations) for p in got} == set(expected)
        for p in got:
            assert p.log_prob == pytest.approx(expected[(p.entities, p.relations)])

    def test_greedy_single_path(self, fixture_env):
        g, table, env, policy = fixture_env
        paths = beam_search(product(0), policy, env, table, [1, 1, 1])
        assert len(paths) <= 3  # prefixes of one greedy walk

    def test_path_budget_respected(self, synth_train_graph, synth_table, patterns):
        env = WalkEnv(synth_train_graph, synth_table, patterns)
        paths = beam_search(product(0), UniformPolicy(), env, synth_table, [25, 5, 1])
        assert len(paths) <= 125

    def test_deterministic(self, fixture_env):
        g, table, env, policy = fixture_env
        a = beam_search(product(0), policy, env, table, [2, 2, 1])
        b = beam_search(product(0), policy, env, table, [2, 2, 1])
        assert [(p.entities, p.relations, p.log_prob) for p in a] \
            == [(p.entities, p.relations, p.log_prob) for p in b]

    def test_monotone_in_beam_width(self, fixture_env):
        g, table, env, policy = fixture_env
        small = beam_search(product(0), policy, env, table, [1, 1, 1])
        large = beam_search(product(0), policy, env, table, [3, 3, 2])
        small_keys = {(p.entities, p.relations) for p in small}
        large_keys = {(p.entities, p.relations) for p in large}
        assert small_keys <= large_keys

    def test_emitted_paths_valid(self, synth_train_graph, synth_table, patterns):
        env = WalkEnv(synth_train_graph, synth_table, patterns)
        policy = UniformPolicy()
        for start in range(0, 12, 3):
            for p in beam_search(product(start), policy, env, synth_table, [6, 3, 1]):
                assert match_meta_path(p, patterns)
                assert p.edges_valid(synth_train_graph)
                assert 2 <= len(p) <= 3
                assert p.end != p.source

    def test_stochastic_mode_seeded(self, synth_train_graph, synth_table, patterns):
        env = WalkEnv(synth_train_graph, synth_table, patterns)
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(5)
            runs.append({(p.entities, p.relations)
                         for p in beam_search(product(1), UniformPolicy(), env,
                                              synth_table, [6, 3, 1],
                                              stochastic=True, rng=rng)})
        assert runs[0] == runs[1]

    def test_size_validation(self, fixture_env):
        g, table, env, policy = fixture_env
        with pytest.raises(ValueError):
            beam_search(product(0), policy, env, table, [2, 2])
        with pytest.raises(ValueError):
            beam_search(product(0), policy, env, table, [2, 0, 1])


class _StubScorer:
    """Deterministic stand-in scorer: score = 1/(1+|v0-candidate|)."""

    def score_many(self, v0_id, candidates, tag):
        return np.array([1.0 / (1.0 + abs(v0_id - c)) for c in candidates])


class TestCollectAndRank:
    def test_duplicate_paths_collapse(self, fixture_env):
        g, table, env, policy = fixture_env
        paths = beam_search(product(0), policy, env, table, [3, 3, 1])
        per_end = {}
        for p in paths:
            per_end.setdefault(p.end.id, []).append(p)
        cands = collect_candidates(paths, SUBSTITUTE, _StubScorer(), product(0), env)
        for pid, cand in cands.items():
            assert cand.n_paths == len(per_end[pid])
            assert cand.path.log_prob == max(p.log_prob for p in per_end[pid])

    def test_empty_paths(self, fixture_env):
        g, table, env, policy = fixture_env
        assert collect_candidates([], SUBSTITUTE, _StubScorer(), product(0), env) == {}

    def test_scores_equal_direct_calls(self, synth_train_graph, synth_table,
                                       synth_heads, synth_bank, patterns):
        scorer = PairScorer(synth_heads[SUBSTITUTE], synth_heads[COMPLEMENT], synth_bank)
        env = WalkEnv(synth_train_graph, synth_table, patterns)
        paths = beam_search(product(2), UniformPolicy(), env, synth_table, [6, 3, 1])
        cands = collect_candidates(paths, SUBSTITUTE, scorer, product(2), env)
        for pid, cand in list(cands.items())[:5]:
            assert cand.score == pytest.approx(scorer.head_score(2, pid, SUBSTITUTE))

    def test_rank_filters_training_neighbors(self, fixture_env):
        g, table, env, policy = fixture_env
        cands = collect_candidates(
            beam_search(product(0), policy, env, table, [3, 3, 1]),
            COMPLEMENT, _StubScorer(), product(0), env)
        # product 3 is a training also_bought neighbor of product 0
        ranked = rank(cands, product(0), g, COMPLEMENT, n=10)
        ids = [c.product.id for c in ranked.candidates]
        assert 3 not in ids and 0 not in ids

    def test_rank_all_candidates_filtered(self, fixture_env):
        from pathrec.inference import Candidate
        from pathrec.graph import ReasoningPath
        g, table, env, policy = fixture_env
        path = ReasoningPath(entities=(product(0), word(1), product(3)),
                             relations=(Relation.DESCRIBED_BY, Relation.DESCRIBED_BY))
        # the only candidate is a training also_bought neighbor of the source
        only_neighbor = {3: Candidate(product=product(3), score=0.9, path=path)}
        ranked = rank(only_neighbor, product(0), g, COMPLEMENT, n=10)
        assert ranked.candidates == []

    def test_rank_returns_fewer_than_n(self, fixture_env):
        g, table, env, policy = fixture_env
        cands = collect_candidates(
            beam_search(product(0), policy, env, table, [3, 3, 1]),
            SUBSTITUTE, _StubScorer(), product(0), env)
        ranked = rank(cands, product(0), g, SUBSTITUTE, n=10)
        assert 0 < len(ranked.candidates) <= 10

    def test_rank_ordering_matches_sort_oracle(self):
        from pathrec.inference import Candidate
        from pathrec.graph import ReasoningPath
        g = KnowledgeGraph(COUNTS | {EntityKind.PRODUCT: 30})
        rng = np.random.default_rng(11)
        cands = {}
        dummy = ReasoningPath(entities=(product(0), word(0), product(1)),
                              relations=(Relation.DESCRIBED_BY, Relation.DESCRIBED_BY))
        scores = rng.uniform(size=20)
        scores[3] = scores[7]  # force a tie
        for i in range(20):
            cands[i + 1] = Candidate(product=product(i + 1), score=float(scores[i]),
                                     path=dummy)
        ranked = rank(cands, product(0), g, SUBSTITUTE, n=20)
        expected = sorted(cands.values(), key=lambda c: (-c.score, c.product.id))
        assert [c.product.id for c in ranked.candidates] == [c.product.id for c in expected]


class TestRecordsIO:
    def test_round_trip(self, synth_train_graph, synth_table, synth_heads,
                        synth_bank, patterns, tmp_path):
        scorer = PairScorer(synth_heads[SUBSTITUTE], synth_heads[COMPLEMENT], synth_bank)
        env = WalkEnv(synth_train_graph, synth_table, patterns)
        recs = []
        for src in (0, 1, 2):
            out = infer_source(product(src), UniformPolicy(), env, synth_table,
                               scorer, synth_train_graph, sizes=[6, 3, 1])
            recs.extend(out[tag] for tag in (SUBSTITUTE, COMPLEMENT))
        path = tmp_path / "paths.jsonl"
        write_records(path, recs, synth_train_graph)
        rows = read_records(path)
        assert len(rows) == len(recs)
        rebuilt = records_from_json(rows, synth_train_graph)
        for rec in recs:
            twin = rebuilt[rec.tag][rec.source.id]
            assert twin.paths_total == rec.paths_total
            assert twin.targets == rec.targets
            assert twin.path_counts == rec.path_counts
            assert [c.product.id for c in twin.ranked.candidates] \
                == [c.product.id for c in rec.ranked.candidates]

    def test_rendered_paths_alternate_names(self, synth_train_graph, synth_table,
                                            synth_heads, synth_bank, patterns):
        scorer = PairScorer(synth_heads[SUBSTITUTE], synth_heads[COMPLEMENT], synth_bank)
        env = WalkEnv(synth_train_graph, synth_table, patterns)
        out = infer_source(product(0), UniformPolicy(), env, synth_table,
                           scorer, synth_train_graph, sizes=[6, 3, 1])
        row = record_to_json(out[SUBSTITUTE], synth_train_graph)
        for cand in row["candidates"]:
            assert len(cand["path"]) % 2 == 1 and len(cand["path"]) >= 5
            assert cand["path"][0] == row["source"]
