"""Run configuration: one flat JSON file with per-stage sections.

Unknown keys are rejected with the JSON path of the offender; defaults
follow the reported experimental settings (embedding dim 100, history 1,
horizon 3, pruned space 250, beam [25, 5, 1], lr 0.001, batch 16, 15
feature words, document dim 300, category dim 100, 500 sampled negatives,
85/15 split).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError

CONFIG_ENV_VAR = "PATHREC_CONFIG"


@dataclass
class DatasetConfig:
    metadata: Optional[str] = None
    reviews: Optional[str] = None
    synth: Optional[Dict] = None


@dataclass
class GraphConfig:
    feature_words: int = 15
    split_fraction: float = 0.85
    patterns: Optional[List[Dict]] = None


@dataclass
class EmbedConfig:
    dim: int = 100
    epochs: int = 60
    lr: float = 0.05
    negatives: int = 1
    margin: float = 1.0
    lr_decay: float = 0.05


@dataclass
class PairConfig:
    product_dim: int = 300
    category_dim: int = 100
    layers: int = 2
    hidden: int = 256
    epochs: int = 100
    lr: float = 0.001
    negatives: int = 1
    batch_size: int = 16
    word_vectors: Optional[str] = None


@dataclass
class AgentConfig:
    history: int = 1
    horizon: int = 3
    prune_size: int = 250
    gamma: float = 0.99
    lr: float = 0.001
    batch_size: int = 16
    epochs: int = 30
    hidden: int = 512
    affinity: int = 256
    entropy_weight: float = 0.0
    episodes_per_start: int = 1
    init_gain: float = 4.0
    pretrain_epochs: int = 0
    pretrain_lr: float = 0.05
    pretrain_temperature: float = 1.0


@dataclass
class InferConfig:
    beam: List[int] = field(default_factory=lambda: [25, 5, 1])
    top_n: int = 10
    stochastic: bool = False
    sources: str = "test"


@dataclass
class EvalConfig:
    hits_k: List[int] = field(default_factory=lambda: [10, 30, 50])
    n_irrelevant: int = 500
    metric_k: int = 10


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    output_dir: Optional[str] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    variant: str = "full"
    workers: int = 1
    graph: GraphConfig = field(default_factory=GraphConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    pair: PairConfig = field(default_factory=PairConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def seed(self) -> int:
        return self.seeds[0]

    def load_dataset(self) -> Tuple[list, list]:
        """(products, reviews) from the synth spec or from files."""
        from .ingest import parse_metadata, parse_reviews
        from .synthetic import SynthConfig, generate

        if self.dataset.synth is not None:
            ds = generate(SynthConfig(**self.dataset.synth))
            return ds.products, ds.reviews
        if not self.dataset.metadata or not self.dataset.reviews:
            raise ConfigError(".dataset", "need either synth spec or metadata+reviews paths")
        products, _ = parse_metadata(self.dataset.metadata)
        reviews, _ = parse_reviews(self.dataset.reviews)
        return products, reviews

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "dataset": DatasetConfig,
    "graph": GraphConfig,
    "embed": EmbedConfig,
    "pair": PairConfig,
    "agent": AgentConfig,
    "infer": InferConfig,
    "eval": EvalConfig,
}

_SCALAR_KEYS = {"output_dir", "seeds", "variant", "workers"}


def _check_type(path: str, value, expected) -> None:
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return
    if expected in (int, float) and isinstance(value, bool):
        raise ConfigError(path, f"expected {expected.__name__}, got bool")
    if expected is not None and not isinstance(value, expected):
        raise ConfigError(path, f"expected {getattr(expected, '__name__', expected)}, "
                                f"got {type(value).__name__}")


def _build_section(cls, data: Dict, path: str):
    known = {f.name: str(f.type) for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key")
        anno = known[key]
        if value is None:
            kwargs[key] = None
            continue
        if anno == "int":
            _check_type(f"{path}.{key}", value, int)
        elif anno == "float":
            _check_type(f"{path}.{key}", value, float)
            value = float(value)
        elif anno == "bool":
            _check_type(f"{path}.{key}", value, bool)
        elif anno.startswith("List[int]"):
            _check_type(f"{path}.{key}", value, list)
            for i, v in enumerate(value):
                _check_type(f"{path}.{key}[{i}]", v, int)
        elif anno.startswith("Optional[str]") or anno == "str":
            _check_type(f"{path}.{key}", value, str)
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: Dict) -> RunConfig:
    """Validate a raw config dict; unknown keys raise ConfigError with the
    JSON path of the offending key."""
    if not isinstance(data, dict):
        raise ConfigError("$", "config root must be a JSON object")
    cfg = RunConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f".{key}", "section must be an object")
            setattr(cfg, key, _build_section(_SECTIONS[key], value, f".{key}"))
        elif key == "seeds":
            _check_type(".seeds", value, list)
            if not value:
                raise ConfigError(".seeds", "need at least one seed")
            for i, v in enumerate(value):
                _check_type(f".seeds[{i}]", v, int)
            cfg.seeds = list(value)
        elif key == "seed":
            _check_type(".seed", value, int)
            cfg.seeds = [value]
        elif key == "output_dir":
            if value is not None:
                _check_type(".output_dir", value, str)
            cfg.output_dir = value
        elif key == "variant":
            _check_type(".variant", value, str)
            cfg.variant = value
        elif key == "workers":
            _check_type(".workers", value, int)
            cfg.workers = value
        else:
            raise ConfigError(f".{key}", "unknown key")
    if not 0.0 < cfg.graph.split_fraction < 1.0:
        raise ConfigError(".graph.split_fraction", "must be in (0, 1)")
    if len(cfg.infer.beam) != cfg.agent.horizon:
        raise ConfigError(".infer.beam", f"need {cfg.agent.horizon} sizes (one per step)")
    return cfg


def load_config(path: Optional[str] = None) -> RunConfig:
    """Read config JSON from ``path``, the PATHREC_CONFIG env var, or defaults."""
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"config is not valid JSON: {exc}") from exc
    return from_dict(data)


def apply_override(cfg: RunConfig, dotted: str, raw: str) -> None:
    """Apply one ``section.key=value`` command-line override."""
    parts = dotted.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p):
            raise ConfigError("." + ".".join(parts), "unknown key")
        target = getattr(target, p)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(target) or leaf not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError("." + ".".join(parts), "unknown key")
    setattr(target, leaf, value)


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
