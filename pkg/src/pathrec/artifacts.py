"""Checkpoint and manifest plumbing.

Every model checkpoint is one file: a JSON manifest line declaring format
version, kind, metadata and the array table, followed by the raw arrays as
little-endian float32 in declared order.  Stage manifests record the
producing config hash and input-file hashes so runs are auditable.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ArtifactError, MissingArtifact
from .graph import EntityKind
from .embedding import EmbeddingTable
from .pairwise import RelationClassifier
from .policy import AffinityPolicy, FixedWidthPolicy

ARRAYS_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1


def save_arrays(path, kind: str, meta: Mapping, arrays: Sequence[Tuple[str, np.ndarray]]) -> None:
    header = {
        "format": "pathrec-arrays",
        "version": ARRAYS_FORMAT_VERSION,
        "kind": kind,
        "meta": dict(meta),
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_arrays(path, kind: str) -> Tuple[Dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ArtifactError(f"bad checkpoint header in {path}") from exc
        if header.get("format") != "pathrec-arrays":
            raise ArtifactError(f"{path} is not a checkpoint file")
        if header.get("version") != ARRAYS_FORMAT_VERSION:
            raise ArtifactError(f"unsupported checkpoint version {header.get('version')}")
        if header.get("kind") != kind:
            raise ArtifactError(f"{path} holds a {header.get('kind')!r} checkpoint, "
                                f"expected {kind!r}")
        arrays: Dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * n)
            if len(raw) != 4 * n:
                raise ArtifactError(f"truncated array {spec['name']} in {path}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    return header["meta"], arrays


# -- model checkpoints ------------------------------------------------------


def save_embedding_table(path, table: EmbeddingTable, config_hash: str = "") -> None:
    meta = {
        "dim": table.dim,
        "seed": table.seed,
        "counts": {k.name: table.counts[k] for k in EntityKind},
        "config_hash": config_hash,
    }
    save_arrays(path, "embedding", meta, [
        ("entity", table.entity), ("relation", table.rel), ("bias", table.bias)])


def load_embedding_table(path) -> EmbeddingTable:
    meta, arrays = load_arrays(path, "embedding")
    counts = {EntityKind[k]: v for k, v in meta["counts"].items()}
    table = EmbeddingTable(counts, int(meta["dim"]), seed=int(meta["seed"]))
    table.entity = arrays["entity"]
    table.rel = arrays["relation"]
    table.bias = arrays["bias"]
    return table


def save_policy(path, policy, config_hash: str = "") -> None:
    if isinstance(policy, AffinityPolicy):
        meta = {"policy": "affinity", "state_dim": policy.state_dim,
                "action_dim": policy.action_dim, "hidden": policy.hidden,
                "affinity": policy.affinity, "config_hash": config_hash}
    elif isinstance(policy, FixedWidthPolicy):
        meta = {"policy": "fixed", "state_dim": policy.state_dim,
                "width": policy.width, "hidden": policy.hidden,
                "config_hash": config_hash}
    else:
        raise ArtifactError(f"cannot checkpoint policy type {type(policy).__name__}")
    save_arrays(path, "policy", meta, sorted(policy.params.items()))


def load_policy(path):
    meta, arrays = load_arrays(path, "policy")
    if meta["policy"] == "affinity":
        policy = AffinityPolicy(state_dim=int(meta["state_dim"]),
                                action_dim=int(meta["action_dim"]),
                                hidden=int(meta["hidden"]),
                                affinity=int(meta["affinity"]))
    elif meta["policy"] == "fixed":
        policy = FixedWidthPolicy(state_dim=int(meta["state_dim"]),
                                  width=int(meta["width"]),
                                  hidden=int(meta["hidden"]))
    else:
        raise ArtifactError(f"unknown policy kind {meta['policy']!r} in {path}")
    for k in policy.params:
        policy.params[k] = arrays[k]
    return policy


def save_pair_heads(path, heads: Mapping[str, RelationClassifier],
                    config_hash: str = "") -> None:
    tags = sorted(heads)
    first = heads[tags[0]]
    meta = {
        "tags": tags,
        "product_dim": first.product_dim,
        "category_dim": first.category_dim,
        "layers": first.layers,
        "hidden": first.hidden,
        "config_hash": config_hash,
    }
    arrays: List[Tuple[str, np.ndarray]] = []
    for tag in tags:
        for name, arr in sorted(heads[tag].params.items()):
            arrays.append((f"{tag}/{name}", arr))
    save_arrays(path, "pair-model", meta, arrays)


def load_pair_heads(path) -> Dict[str, RelationClassifier]:
    meta, arrays = load_arrays(path, "pair-model")
    heads: Dict[str, RelationClassifier] = {}
    for tag in meta["tags"]:
        head = RelationClassifier(product_dim=int(meta["product_dim"]),
                                  category_dim=int(meta["category_dim"]),
                                  layers=int(meta["layers"]),
                                  hidden=int(meta["hidden"]), tag=tag)
        for name in head.params:
            head.params[name] = arrays[f"{tag}/{name}"]
        heads[tag] = head
    return heads


# -- stage manifests ---------------------------------------------------------


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(stage_dir, stage: str, config_hash: str,
                   inputs: Mapping[str, str], outputs: Sequence[str]) -> None:
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "stage": stage,
        "config_hash": config_hash,
        "inputs": dict(inputs),
        "outputs": {os.path.basename(p): file_sha256(p) for p in outputs},
    }
    with open(os.path.join(stage_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_manifest(stage_dir) -> Dict:
    path = os.path.join(stage_dir, "manifest.json")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ArtifactError(f"unsupported manifest version in {path}")
    return manifest


def require_artifact(path, stage: str):
    """Return ``path`` if it exists, else name the stage that produces it."""
    if not os.path.exists(path):
        raise MissingArtifact(stage, f"expected {path}")
    return path
