import numpy as np
import pytest

from pathrec.config import DatasetConfig, RunConfig
from pathrec.embedding import train_embeddings
from pathrec.graph import (EntityKind, EntityRef, KnowledgeGraph, Relation,
                           default_meta_paths)
from pathrec.ingest import (SplitSpec, build_graph, select_feature_words,
                            split_pairs, training_graph)
from pathrec.pairwise import RelationClassifier, build_feature_bank, train_pair_model
from pathrec.graph import SUBSTITUTE, COMPLEMENT, TARGET_RELATION
from pathrec.synthetic import SynthConfig, generate
from pathrec.text import TfidfProjectionEmbedder, WordVectors


def product(i):
    return EntityRef(EntityKind.PRODUCT, i)


def word(i):
    return EntityRef(EntityKind.WORD, i)


def user(i):
    return EntityRef(EntityKind.USER, i)


def brand(i):
    return EntityRef(EntityKind.BRAND, i)


def category(i):
    return EntityRef(EntityKind.CATEGORY, i)


def tiny_run_config(**synth_overrides) -> RunConfig:
    """Small, fast pipeline configuration shared by harness/CLI tests."""
    synth = {"products": 60, "substitute_pairs": 24, "complement_pairs": 24,
             "users": 30, "seed": 11}
    synth.update(synth_overrides)
    cfg = RunConfig()
    cfg.dataset = DatasetConfig(synth=synth)
    cfg.embed.dim = 32
    cfg.embed.epochs = 12
    cfg.pair.product_dim = 48
    cfg.pair.category_dim = 24
    cfg.pair.hidden = 32
    cfg.pair.epochs = 15
    cfg.pair.lr = 0.3
    cfg.agent.hidden = 48
    cfg.agent.affinity = 24
    cfg.agent.epochs = 3
    cfg.agent.lr = 0.1
    cfg.agent.pretrain_epochs = 2
    cfg.infer.beam = [6, 2, 1]
    cfg.eval.n_irrelevant = 20
    return cfg


@pytest.fixture(scope="session")
def synth_dataset():
    return generate(SynthConfig(products=60, substitute_pairs=24, complement_pairs=24,
                                users=30, seed=11))


@pytest.fixture(scope="session")
def synth_graph(synth_dataset):
    feature_words = select_feature_words(synth_dataset.reviews, 15)
    graph, _report = build_graph(synth_dataset.products, synth_dataset.reviews,
                                 feature_words)
    return graph


@pytest.fixture(scope="session")
def synth_splits(synth_graph):
    return {rel: split_pairs(synth_graph, rel, SplitSpec(0.85, 3 + int(rel)))
            for rel in (Relation.ALSO_VIEWED, Relation.ALSO_BOUGHT)}


@pytest.fixture(scope="session")
def synth_train_graph(synth_graph, synth_splits):
    return training_graph(synth_graph, {r: te for r, (tr, te) in synth_splits.items()})


@pytest.fixture(scope="session")
def synth_table(synth_train_graph):
    return train_embeddings(synth_train_graph, dim=48, epochs=20, lr=0.05, seed=7)


@pytest.fixture(scope="session")
def synth_bank(synth_dataset, synth_train_graph):
    vectors = WordVectors(dim=24, seed=3)
    embedder = TfidfProjectionEmbedder(vectors, out_dim=48, seed=3)
    return build_feature_bank(synth_dataset.products, synth_train_graph,
                              vectors, embedder, 15)


@pytest.fixture(scope="session")
def synth_heads(synth_bank, synth_splits):
    heads = {}
    for tag in (SUBSTITUTE, COMPLEMENT):
        head = RelationClassifier(product_dim=48, category_dim=24, layers=2,
                                  hidden=32, seed=5, tag=tag)
        train_pair_model(head, synth_bank, synth_splits[TARGET_RELATION[tag]][0],
                         negatives=2, epochs=30, lr=0.3, batch_size=16, seed=6)
        heads[tag] = head
    return heads


@pytest.fixture(scope="session")
def patterns():
    return default_meta_paths()
