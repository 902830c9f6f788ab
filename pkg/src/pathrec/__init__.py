"""Substitute/complement product recommendation by policy-gradient path
reasoning over a heterogeneous product knowledge graph."""

from .graph import (COMPLEMENT, SUBSTITUTE, EntityKind, EntityRef,
                    KnowledgeGraph, MetaPath, MetaPathSet, ReasoningPath,
                    Relation, default_meta_paths, match_meta_path)
from .ingest import (ProductRecord, ReviewRecord, SplitSpec, build_graph,
                     parse_metadata, parse_reviews, select_feature_words,
                     split_pairs, training_graph)
from .embedding import (EmbeddingRewarder, EmbeddingTable, action_score,
                        embedding_reward, score_actions, train_embeddings)
from .environment import SELF_LOOP, Action, PrunedActionSpace, State, WalkEnv
from .policy import (AffinityPolicy, FixedWidthPolicy, Trajectory,
                     UniformPolicy, action_matrix, encode_state,
                     reinforce_update, sample_trajectories, train_agent)
from .pairwise import (FeatureBank, PairScorer, RelationClassifier,
                       build_feature_bank, category_feature, product_feature,
                       train_pair_model)
from .inference import (Candidate, InferenceRecord, RankedRecommendation,
                        beam_search, collect_candidates, infer_source, rank)
from .evaluation import (PathStats, TopkMetrics, degrade_graph, hits_at_k,
                         hits_at_ks, path_stats, run_experiment, run_pipeline,
                         topk_metrics)
from .synthetic import SynthConfig, SynthDataset, generate

__version__ = "0.1.0"
