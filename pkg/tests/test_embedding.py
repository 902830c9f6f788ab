import numpy as np
import pytest

from pathrec.embedding import (EmbeddingRewarder, EmbeddingTable, action_score,
                               embedding_reward, score_actions, train_embeddings)
from pathrec.errors import UnknownEntity
from pathrec.graph import EntityKind, EntityRef, KnowledgeGraph, Relation

from conftest import brand, category, product, user, word


def block_graph(groups=8, per_group=6, words_per_group=6, users_per_group=4, seed=0):
    """Structured fixture: per-group vocabulary, brand, category, buyers and
    within/between-group product links, so held-out edges stay predictable."""
    rng = np.random.default_rng(seed)
    g = KnowledgeGraph({EntityKind.PRODUCT: groups * per_group,
                        EntityKind.USER: groups * users_per_group,
                        EntityKind.WORD: groups * words_per_group,
                        EntityKind.BRAND: groups,
                        EntityKind.CATEGORY: groups})
    for gi in range(groups):
        prods = list(range(gi * per_group, (gi + 1) * per_group))
        words = list(range(gi * words_per_group, (gi + 1) * words_per_group))
        users = list(range(gi * users_per_group, (gi + 1) * users_per_group))
        for p in prods:
            for w in rng.choice(words, size=4, replace=False):
                g.add_triple(product(p), Relation.DESCRIBED_BY, word(int(w)))
            g.add_triple(product(p), Relation.PRODUCED_BY, brand(gi))
            g.add_triple(product(p), Relation.BELONG_TO, category(gi))
        for u in users:
            for p in rng.choice(prods, size=4, replace=False):
                g.add_triple(user(u), Relation.PURCHASE, product(int(p)))
        for i in range(per_group):
            g.add_triple(product(prods[i]), Relation.ALSO_VIEWED,
                         product(prods[(i + 1) % per_group]))
        mate = (gi + 1) % groups
        for i in range(per_group):
            g.add_triple(product(prods[i]), Relation.ALSO_BOUGHT,
                         product(mate * per_group + (i + 2) % per_group))
    return g


def zeroed_table(counts, dim):
    table = EmbeddingTable(counts, dim)
    table.entity[:] = 0.0
    table.rel[:] = 0.0
    table.bias[:] = 0.0
    return table


SMALL = {EntityKind.PRODUCT: 4, EntityKind.USER: 2, EntityKind.WORD: 3,
         EntityKind.BRAND: 1, EntityKind.CATEGORY: 1}


class TestActionScore:
    def test_zero_vectors_score_zero(self):
        table = zeroed_table(SMALL, 4)
        assert action_score(table, product(0), Relation.DESCRIBED_BY, word(1)) == 0.0
        assert action_score(table, product(0), None, product(1)) == 0.0

    def test_hand_arithmetic(self):
        table = zeroed_table(SMALL, 2)
        table.entity[table.index(product(0))] = [1.0, 0.0]
        table.rel[int(Relation.DESCRIBED_BY)] = [0.0, 1.0]
        table.entity[table.index(word(2))] = [1.0, 1.0]
        table.bias[table.index(word(2))] = 0.5
        assert action_score(table, product(0), Relation.DESCRIBED_BY, word(2)) \
            == pytest.approx(2.5)

    def test_product_target_is_max_over_both_relations(self):
        rng = np.random.default_rng(0)
        table = EmbeddingTable(SMALL, 6, seed=1)
        table.bias[:] = rng.standard_normal(table.total)
        v0, e = product(0), product(3)
        # brute force both relation branches independently
        s = []
        for r in (Relation.ALSO_VIEWED, Relation.ALSO_BOUGHT):
            s.append(float((table.entity_vector(v0) + table.relation_vector(r))
                           @ table.entity_vector(e)) + table.bias_of(e))
        assert action_score(table, v0, None, e) == pytest.approx(max(s))

    def test_bias_linearity(self):
        table = EmbeddingTable(SMALL, 6, seed=2)
        base = action_score(table, product(0), Relation.DESCRIBED_BY, word(1))
        table.bias[table.index(word(1))] += 0.75
        assert action_score(table, product(0), Relation.DESCRIBED_BY, word(1)) \
            == pytest.approx(base + 0.75)

    def test_unknown_entity(self):
        table = EmbeddingTable(SMALL, 4)
        with pytest.raises(UnknownEntity):
            action_score(table, product(0), None, word(7))

    def test_vectorized_matches_scalar(self):
        table = EmbeddingTable(SMALL, 8, seed=3)
        table.bias[:] = np.linspace(-1, 1, table.total)
        actions = [(Relation.DESCRIBED_BY, word(0)), (Relation.PURCHASE, user(1)),
                   (Relation.ALSO_VIEWED, product(2)), (Relation.BELONG_TO, category(0))]
        vec = score_actions(table, product(0), actions)
        for i, (r, e) in enumerate(actions):
            assert vec[i] == pytest.approx(action_score(table, product(0), r, e))


class TestTraining:
    def test_separability_on_one_edge_graph(self):
        g = KnowledgeGraph({EntityKind.PRODUCT: 1, EntityKind.WORD: 2,
                            EntityKind.USER: 0, EntityKind.BRAND: 0,
                            EntityKind.CATEGORY: 0})
        g.add_triple(product(0), Relation.DESCRIBED_BY, word(0))
        table = train_embeddings(g, dim=8, epochs=50, lr=0.05, seed=0)
        pos = action_score(table, product(0), Relation.DESCRIBED_BY, word(0))
        neg = action_score(table, product(0), Relation.DESCRIBED_BY, word(1))
        assert pos > neg

    def test_same_seed_identical_tables(self, synth_train_graph):
        a = train_embeddings(synth_train_graph, dim=16, epochs=3, seed=4)
        b = train_embeddings(synth_train_graph, dim=16, epochs=3, seed=4)
        assert np.array_equal(a.entity, b.entity)
        assert np.array_equal(a.rel, b.rel)
        assert np.array_equal(a.bias, b.bias)
        assert a.train_losses == b.train_losses

    def test_loss_moving_average_non_increasing(self):
        g = block_graph()
        table = train_embeddings(g, dim=48, epochs=40, lr=0.05, seed=7, lr_decay=0.1)
        losses = table.train_losses
        ma = [float(np.mean(losses[i:i + 5])) for i in range(len(losses) - 4)]
        for i in range(len(ma) - 1):
            assert ma[i + 1] <= ma[i] + 1e-9

    def test_held_out_triple_auc(self):
        g = block_graph()
        triples = list(g.triples())
        rng = np.random.default_rng(42)
        order = rng.permutation(len(triples))
        held = [triples[i] for i in order[:len(triples) // 10]]
        train = g.copy()
        for h, r, t in held:
            train.remove_triple(h, r, t)
        table = train_embeddings(train, dim=48, epochs=60, lr=0.05, seed=7)

        def triple_score(h, r, t):
            return float((table.entity_vector(h) + table.relation_vector(r))
                         @ table.entity_vector(t)) + table.bias_of(t)

        # exhaustive scoring of held-out positives against sampled negatives
        wins = total = 0
        neg_rng = np.random.default_rng(0)
        for h, r, t in held:
            sp = triple_score(h, r, t)
            pop = g.population(t.kind)
            for _ in range(30):
                c = int(neg_rng.integers(pop))
                if c == t.id:
                    continue
                wins += sp > triple_score(h, r, EntityRef(t.kind, c))
                total += 1
        assert wins / total > 0.8


class TestEmbeddingReward:
    def test_self_pair_is_zero(self, synth_table):
        out = embedding_reward(synth_table, [(product(0), product(0))])
        assert out[0] == 0.0

    def test_single_candidate_rescales_to_one(self, synth_table):
        out = embedding_reward(synth_table, [(product(0), product(5))])
        assert out[0] == pytest.approx(1.0)

    def test_ordering_matches_raw_scores(self, synth_table):
        v0 = product(0)
        cands = [product(i) for i in range(1, 6)]
        rewards = embedding_reward(synth_table, [(v0, e) for e in cands])
        raw = [action_score(synth_table, v0, None, e) for e in cands]
        assert list(np.argsort(rewards)) == list(np.argsort(raw))

    def test_argmax_preserved(self, synth_table):
        v0 = product(2)
        cands = [product(i) for i in range(3, 12)]
        rewards = embedding_reward(synth_table, [(v0, e) for e in cands])
        raw = [action_score(synth_table, v0, None, e) for e in cands]
        assert int(np.argmax(rewards)) == int(np.argmax(raw))

    def test_rewarder_counts_calls(self, synth_table):
        rew = EmbeddingRewarder(synth_table)
        rew.score_pairs([(product(0), product(1)), (product(0), product(2))])
        assert rew.calls == 2

    def test_non_product_target_rejected(self, synth_table):
        with pytest.raises(UnknownEntity):
            embedding_reward(synth_table, [(product(0), word(0))])
