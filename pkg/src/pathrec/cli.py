"""Command-line pipeline driver.

Stages write versioned artifacts plus a manifest under the configured
output directory; each stage checks that its upstream artifacts exist and
names the missing stage otherwise.  Progress goes to stderr, machine
output to files.  Exit codes: 0 ok, 1 config error, 2 missing artifact,
3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import artifacts as art
from .config import CONFIG_ENV_VAR, RunConfig, apply_override, config_hash, load_config
from .errors import (ConfigError, EmptyCorpus, InsufficientPopulation,
                     MalformedInput, MissingArtifact, PathrecError, UnknownVariant)
from .evaluation import (VARIANT_EMBED_REWARD, VARIANT_UNIFORM,
                         EmbeddingCandidateScorer, PipelineArtifacts,
                         evaluate_artifacts, parse_variant, run_experiment)
from .graph import (COMPLEMENT, SUBSTITUTE, TARGET_RELATION, EntityKind,
                    EntityRef, KnowledgeGraph, MetaPathSet, Relation,
                    default_meta_paths)
from .ingest import SplitSpec, build_graph, select_feature_words, split_pairs, training_graph

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISSING = 2
EXIT_DATA = 3


def _outdir(cfg: RunConfig, *parts: str) -> str:
    if not cfg.output_dir:
        raise ConfigError(".output_dir", "commands that write artifacts need output_dir")
    path = os.path.join(cfg.output_dir, *parts)
    os.makedirs(os.path.dirname(path) if parts else path, exist_ok=True)
    return path


def _stage_dir(cfg: RunConfig, stage: str) -> str:
    path = os.path.join(cfg.output_dir, stage) if cfg.output_dir else None
    if path is None:
        raise ConfigError(".output_dir", "commands that write artifacts need output_dir")
    os.makedirs(path, exist_ok=True)
    return path


def _dataset_paths(cfg: RunConfig) -> Dict[str, str]:
    """Resolve metadata/reviews paths: explicit files win, else the synth
    stage's outputs."""
    if cfg.dataset.metadata and cfg.dataset.reviews:
        return {"metadata": cfg.dataset.metadata, "reviews": cfg.dataset.reviews}
    if cfg.dataset.synth is None:
        raise ConfigError(".dataset", "need either synth spec or metadata+reviews paths")
    base = os.path.join(cfg.output_dir or "", "synth")
    meta = os.path.join(base, "metadata.jsonl")
    reviews = os.path.join(base, "reviews.jsonl")
    art.require_artifact(meta, "synth")
    art.require_artifact(reviews, "synth")
    return {"metadata": meta, "reviews": reviews}


def _load_products_reviews(cfg: RunConfig):
    from .ingest import parse_metadata, parse_reviews

    paths = _dataset_paths(cfg)
    products, meta_problems = parse_metadata(paths["metadata"])
    reviews, review_problems = parse_reviews(paths["reviews"])
    for p in meta_problems:
        logger.warning("metadata line %d: %s", p.line, p.message)
    for p in review_problems:
        logger.warning("reviews line %d: %s", p.line, p.message)
    return products, reviews, paths


def _derived_seed(seed: int, label: str) -> int:
    import zlib
    return (seed * 1000003 + zlib.crc32(label.encode())) % (2 ** 31)


# -- commands ----------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    from .synthetic import SynthConfig, generate

    if cfg.dataset.synth is None:
        raise ConfigError(".dataset.synth", "synth command needs a synth spec")
    out = _stage_dir(cfg, "synth")
    ds = generate(SynthConfig(**cfg.dataset.synth))
    meta = os.path.join(out, "metadata.jsonl")
    reviews = os.path.join(out, "reviews.jsonl")
    truth = os.path.join(out, "truth.jsonl")
    ds.write(meta, reviews, truth)
    art.write_manifest(out, "synth", config_hash(cfg), {}, [meta, reviews, truth])
    logger.info("synth dataset: %d products, %d reviews, %d planted pairs",
                len(ds.products), len(ds.reviews), len(ds.truth))
    return EXIT_OK


def cmd_build_graph(cfg: RunConfig, args) -> int:
    products, reviews, paths = _load_products_reviews(cfg)
    feature_words = select_feature_words(reviews, cfg.graph.feature_words)
    graph, report = build_graph(products, reviews, feature_words)
    splits = {}
    for relation in (Relation.ALSO_VIEWED, Relation.ALSO_BOUGHT):
        splits[relation.name] = split_pairs(
            graph, relation,
            SplitSpec(cfg.graph.split_fraction, _derived_seed(cfg.seed, f"split-{relation.name}")))
    out = _stage_dir(cfg, "graph")
    graph_path = os.path.join(out, "graph.bin")
    graph.save(graph_path)
    splits_path = os.path.join(out, "splits.json")
    with open(splits_path, "w", encoding="utf-8") as fh:
        json.dump({name: {"train": tr, "test": te} for name, (tr, te) in splits.items()},
                  fh, sort_keys=True)
        fh.write("\n")
    inputs = {k: art.file_sha256(v) for k, v in paths.items()}
    art.write_manifest(out, "build-graph", config_hash(cfg), inputs, [graph_path, splits_path])
    logger.info("graph: %s; dropped refs: %d/%d",
                {r.name: graph.edge_count(r) for r in Relation},
                report.dropped_also_viewed, report.dropped_also_bought)
    return EXIT_OK


def _load_graph_and_splits(cfg: RunConfig):
    out = os.path.join(cfg.output_dir, "graph")
    graph_path = art.require_artifact(os.path.join(out, "graph.bin"), "build-graph")
    splits_path = art.require_artifact(os.path.join(out, "splits.json"), "build-graph")
    graph = KnowledgeGraph.load(graph_path)
    with open(splits_path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    splits = {Relation[name]: ([tuple(p) for p in v["train"]], [tuple(p) for p in v["test"]])
              for name, v in raw.items()}
    train = training_graph(graph, {r: te for r, (tr, te) in splits.items()})
    return graph, splits, train


def cmd_train_embed(cfg: RunConfig, args) -> int:
    from .embedding import train_embeddings

    _graph, _splits, train = _load_graph_and_splits(cfg)
    table = train_embeddings(train, dim=cfg.embed.dim, epochs=cfg.embed.epochs,
                             negatives=cfg.embed.negatives, lr=cfg.embed.lr,
                             margin=cfg.embed.margin, lr_decay=cfg.embed.lr_decay,
                             seed=_derived_seed(cfg.seed, "embed"))
    out = _stage_dir(cfg, "embed")
    path = os.path.join(out, "embeddings.bin")
    art.save_embedding_table(path, table, config_hash(cfg))
    art.write_manifest(out, "train-embed", config_hash(cfg), {}, [path])
    return EXIT_OK


def _build_bank(cfg: RunConfig, products, train_graph):
    from .pairwise import build_feature_bank
    from .text import TfidfProjectionEmbedder, WordVectors

    vectors = (WordVectors.from_file(cfg.pair.word_vectors) if cfg.pair.word_vectors
               else WordVectors(dim=cfg.pair.category_dim, seed=_derived_seed(cfg.seed, "wordvec")))
    embedder = TfidfProjectionEmbedder(vectors, out_dim=cfg.pair.product_dim,
                                       seed=_derived_seed(cfg.seed, "docvec"))
    return build_feature_bank(products, train_graph, vectors, embedder, cfg.graph.feature_words)


def cmd_train_reward(cfg: RunConfig, args) -> int:
    from .pairwise import RelationClassifier, train_pair_model

    products, _reviews, _paths = _load_products_reviews(cfg)
    _graph, splits, train = _load_graph_and_splits(cfg)
    bank = _build_bank(cfg, products, train)
    heads = {}
    for tag in (SUBSTITUTE, COMPLEMENT):
        head = RelationClassifier(product_dim=cfg.pair.product_dim,
                                  category_dim=cfg.pair.category_dim,
                                  layers=cfg.pair.layers, hidden=cfg.pair.hidden,
                                  seed=_derived_seed(cfg.seed, f"pair-{tag}"), tag=tag)
        train_pairs = splits[TARGET_RELATION[tag]][0]
        if train_pairs:
            train_pair_model(head, bank, train_pairs, negatives=cfg.pair.negatives,
                             epochs=cfg.pair.epochs, lr=cfg.pair.lr,
                             batch_size=cfg.pair.batch_size,
                             seed=_derived_seed(cfg.seed, f"pairfit-{tag}"))
        heads[tag] = head
    out = _stage_dir(cfg, "reward")
    path = os.path.join(out, "pairmodel.bin")
    art.save_pair_heads(path, heads, config_hash(cfg))
    art.write_manifest(out, "train-reward", config_hash(cfg), {}, [path])
    return EXIT_OK


def _load_table(cfg: RunConfig):
    path = art.require_artifact(os.path.join(cfg.output_dir, "embed", "embeddings.bin"),
                                "train-embed")
    return art.load_embedding_table(path)


def _load_scorer(cfg: RunConfig, products, train_graph, table, variant_base: str):
    from .embedding import EmbeddingRewarder
    from .pairwise import PairScorer

    if variant_base == VARIANT_EMBED_REWARD:
        return EmbeddingRewarder(table), EmbeddingCandidateScorer(table), None
    path = art.require_artifact(os.path.join(cfg.output_dir, "reward", "pairmodel.bin"),
                                "train-reward")
    heads = art.load_pair_heads(path)
    bank = _build_bank(cfg, products, train_graph)
    scorer = PairScorer(heads[SUBSTITUTE], heads[COMPLEMENT], bank)
    return scorer, scorer, bank


def _make_env(cfg: RunConfig, graph, table):
    from .environment import WalkEnv

    patterns = (MetaPathSet.from_config(cfg.graph.patterns) if cfg.graph.patterns
                else default_meta_paths())
    return WalkEnv(graph, table, patterns, horizon=cfg.agent.horizon,
                   history=cfg.agent.history, prune_size=cfg.agent.prune_size)


def cmd_train_agent(cfg: RunConfig, args) -> int:
    from .policy import AffinityPolicy, FixedWidthPolicy, train_agent

    base, _arg = parse_variant(cfg.variant)
    out = _stage_dir(cfg, "agent")
    if base == VARIANT_UNIFORM:
        art.write_manifest(out, "train-agent", config_hash(cfg), {}, [])
        logger.info("uniform policy variant: nothing to train")
        return EXIT_OK
    products, _reviews, _paths = _load_products_reviews(cfg)
    _graph, splits, train = _load_graph_and_splits(cfg)
    table = _load_table(cfg)
    rewarder, _scorer, _bank = _load_scorer(cfg, products, train, table, base)
    env = _make_env(cfg, train, table)
    state_dim = (1 + 2 * (cfg.agent.history + 1)) * cfg.embed.dim
    if base == "fixed-policy":
        policy = FixedWidthPolicy(state_dim=state_dim, width=cfg.agent.prune_size + 1,
                                  hidden=cfg.agent.hidden, seed=_derived_seed(cfg.seed, "policy"))
    else:
        policy = AffinityPolicy(state_dim=state_dim, action_dim=2 * cfg.embed.dim,
                                hidden=cfg.agent.hidden, affinity=cfg.agent.affinity,
                                seed=_derived_seed(cfg.seed, "policy"),
                                init_gain=cfg.agent.init_gain)
    starts = [EntityRef(EntityKind.PRODUCT, i)
              for i in range(train.population(EntityKind.PRODUCT))]
    if cfg.agent.pretrain_epochs > 0:
        from .policy import pretrain_policy
        pretrain_policy(policy, env, table, starts, epochs=cfg.agent.pretrain_epochs,
                        lr=cfg.agent.pretrain_lr, seed=_derived_seed(cfg.seed, "pretrain"),
                        temperature=cfg.agent.pretrain_temperature, history=cfg.agent.history)
    log = train_agent(policy, env, table, rewarder, starts, epochs=cfg.agent.epochs,
                      batch_size=cfg.agent.batch_size, lr=cfg.agent.lr,
                      gamma=cfg.agent.gamma, seed=_derived_seed(cfg.seed, "agent"),
                      entropy_weight=cfg.agent.entropy_weight, history=cfg.agent.history,
                      episodes_per_start=cfg.agent.episodes_per_start)
    path = os.path.join(out, "policy.bin")
    art.save_policy(path, policy, config_hash(cfg))
    returns_path = os.path.join(out, "returns.json")
    with open(returns_path, "w", encoding="utf-8") as fh:
        json.dump({"mean_returns": log.mean_returns}, fh, sort_keys=True)
        fh.write("\n")
    art.write_manifest(out, "train-agent", config_hash(cfg), {}, [path, returns_path])
    return EXIT_OK


def _infer_sources(cfg, splits, graph) -> List[int]:
    if cfg.infer.sources == "all":
        return list(range(graph.population(EntityKind.PRODUCT)))
    sources = set()
    for _rel, (_tr, test) in splits.items():
        for a, b in test:
            sources.add(a)
            sources.add(b)
    return sorted(sources)


def cmd_infer(cfg: RunConfig, args) -> int:
    from .inference import infer_source, write_records
    from .policy import UniformPolicy

    base, arg = parse_variant(cfg.variant)
    products, _reviews, _paths = _load_products_reviews(cfg)
    graph, splits, train = _load_graph_and_splits(cfg)
    table = _load_table(cfg)
    _rewarder, scorer, _bank = _load_scorer(cfg, products, train, table, base)
    if base == VARIANT_UNIFORM:
        policy = UniformPolicy()
    else:
        path = art.require_artifact(os.path.join(cfg.output_dir, "agent", "policy.bin"),
                                    "train-agent")
        policy = art.load_policy(path)
    reasoning = train
    if base == "drop-relation":
        reasoning = train.without_relation(Relation[arg.upper()])
    env = _make_env(cfg, reasoning, table)
    stochastic = cfg.infer.stochastic or base == VARIANT_UNIFORM
    records = []
    for src in _infer_sources(cfg, splits, graph):
        rng = (np.random.default_rng([_derived_seed(cfg.seed, "beam"), src])
               if stochastic else None)
        recs = infer_source(EntityRef(EntityKind.PRODUCT, src), policy, env, table,
                            scorer, train, sizes=cfg.infer.beam,
                            top_n=cfg.infer.top_n, history=cfg.agent.history,
                            stochastic=stochastic, rng=rng)
        records.extend(recs[tag] for tag in (SUBSTITUTE, COMPLEMENT))
    out = _stage_dir(cfg, "infer")
    path = os.path.join(out, "paths.jsonl")
    write_records(path, records, graph)
    art.write_manifest(out, "infer", config_hash(cfg), {}, [path])
    logger.info("inference written for %d records", len(records))
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    from .inference import read_records, records_from_json

    base, _arg = parse_variant(cfg.variant)
    products, _reviews, _paths = _load_products_reviews(cfg)
    graph, splits, train = _load_graph_and_splits(cfg)
    table = _load_table(cfg)
    rewarder, scorer, _bank = _load_scorer(cfg, products, train, table, base)
    paths_file = art.require_artifact(os.path.join(cfg.output_dir, "infer", "paths.jsonl"),
                                      "infer")
    rows = read_records(paths_file)
    records = records_from_json(rows, graph)
    patterns = (MetaPathSet.from_config(cfg.graph.patterns) if cfg.graph.patterns
                else default_meta_paths())
    env = _make_env(cfg, train, table)
    pair_scorer = scorer if base != VARIANT_EMBED_REWARD else None
    artifacts = PipelineArtifacts(
        graph=graph, train_graph=train, reasoning_graph=train, splits=splits,
        patterns=patterns, table=table, bank=None, pair_scorer=pair_scorer,
        candidate_scorer=scorer, rewarder=rewarder, policy=None, env=env,
        records={tag: records.get(tag, {}) for tag in (SUBSTITUTE, COMPLEMENT)})
    report = evaluate_artifacts(cfg, cfg.seed, cfg.variant, artifacts)
    report["config_hash"] = config_hash(cfg)
    out = _stage_dir(cfg, "eval")
    report_path = os.path.join(out, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    table_path = os.path.join(out, "report.txt")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(render_report(report))
    art.write_manifest(out, "evaluate", config_hash(cfg), {}, [report_path, table_path])
    print(render_report(report))
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args) -> int:
    if args.variant:
        cfg.variant = args.variant
    report = run_experiment(cfg)
    if cfg.output_dir:
        out = _stage_dir(cfg, "experiment")
        path = os.path.join(out, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
        table_path = os.path.join(out, "report.txt")
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write(render_experiment(report))
        art.write_manifest(out, "experiment", config_hash(cfg), {}, [path, table_path])
    print(render_experiment(report))
    return EXIT_OK


def render_report(report: Dict) -> str:
    """Aligned per-relation metric table."""
    tags = sorted(report["relations"])
    metrics = [k for k in report["relations"][tags[0]] if k != "path_stats"]
    rows = [["metric"] + tags]
    for m in metrics:
        rows.append([m] + [f"{report['relations'][t][m]:.4f}" for t in tags])
    stats_keys = ["paths_per_product", "products_per_product", "paths_per_pair"]
    for sk in stats_keys:
        rows.append([sk] + [f"{report['relations'][t]['path_stats'][sk]:.2f}" for t in tags])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    header = [f"variant: {report.get('variant', '?')}  seed: {report.get('seed', '?')}"]
    return "\n".join(header + lines) + "\n"


def render_experiment(report: Dict) -> str:
    lines = [f"variant: {report['variant']}  seeds: {report['seeds']}"]
    tags = sorted(report["aggregate"])
    metrics = list(report["aggregate"][tags[0]])
    rows = [["metric (mean)"] + tags]
    for m in metrics:
        rows.append([m] + [f"{report['aggregate'][t][m]:.4f}" for t in tags])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig, args) -> int:
    path = args.path
    if path is None:
        if not cfg.output_dir:
            raise ConfigError(".output_dir", "report needs a path or output_dir")
        for candidate in ("eval/report.json", "experiment/report.json"):
            full = os.path.join(cfg.output_dir, candidate)
            if os.path.exists(full):
                path = full
                break
        if path is None:
            raise MissingArtifact("evaluate", "no report.json found")
    with open(path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    print(render_experiment(report) if "aggregate" in report else render_report(report))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "build-graph": cmd_build_graph,
    "train-embed": cmd_train_embed,
    "train-reward": cmd_train_reward,
    "train-agent": cmd_train_agent,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathrec",
        description="Substitute/complement product recommendation via "
                    "policy-gradient path reasoning over a product knowledge graph.")
    parser.add_argument("-c", "--config", default=None,
                        help=f"config JSON (default: ${CONFIG_ENV_VAR})")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="overrides", help="override a config key, e.g. agent.epochs=5")
    parser.add_argument("--output-dir", default=None, help="override output_dir")
    parser.add_argument("--seed", type=int, default=None, help="override the first seed")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "experiment":
            p.add_argument("--variant", default=None,
                           help="full | embed-reward | fixed-policy | uniform-policy | "
                                "drop-relation:<name> | degrade:<fraction>")
        if name == "report":
            p.add_argument("path", nargs="?", default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        for override in args.overrides:
            if "=" not in override:
                raise ConfigError("$", f"bad --set {override!r}, need KEY=VALUE")
            key, _, value = override.partition("=")
            apply_override(cfg, key, value)
        if args.output_dir:
            cfg.output_dir = args.output_dir
        if args.seed is not None:
            cfg.seeds = [args.seed] + list(cfg.seeds[1:])
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UnknownVariant) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (MalformedInput, EmptyCorpus, InsufficientPopulation, OSError, PathrecError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
