"""MDP environment for graph walks: states with bounded history, pattern-
and score-pruned action spaces, transitions and terminal reward dispatch.

Episodes always run a fixed number of steps; a self-loop action lets a walk
that already completed a short pattern idle until the horizon.  Trailing
self-loops are stripped before pattern matching, and once a self-loop is
taken no graph action can complete a pattern any more, so only further
self-loops remain available.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .embedding import EmbeddingTable, score_actions
from .errors import IllegalAction, NotAProduct, UnknownEntity
from .graph import (EntityKind, EntityRef, KnowledgeGraph, MetaPathSet,
                    Relation, ReasoningPath)

DEFAULT_HORIZON = 3
DEFAULT_HISTORY = 1
DEFAULT_PRUNE_SIZE = 250


class SelfLoop:
    """Singleton pseudo-relation: stay on the current entity."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "self_loop"


SELF_LOOP = SelfLoop()


@dataclass(frozen=True)
class Action:
    relation: object  # Relation or SELF_LOOP
    target: EntityRef

    @property
    def is_self_loop(self) -> bool:
        return self.relation is SELF_LOOP


@dataclass(frozen=True)
class State:
    """Walk position: source product plus the steps taken so far."""

    v0: EntityRef
    steps: Tuple[Tuple[object, EntityRef], ...] = ()

    @property
    def t(self) -> int:
        return len(self.steps)

    @property
    def current(self) -> EntityRef:
        return self.steps[-1][1] if self.steps else self.v0

    def visited(self) -> Set[EntityRef]:
        seen = {self.v0}
        seen.update(e for _, e in self.steps)
        return seen

    def relation_prefix(self) -> Tuple[object, ...]:
        return tuple(r for r, _ in self.steps)


@dataclass
class PrunedActionSpace:
    """Graph actions ordered by score (descending, ties by relation ordinal
    then id), with the self-loop appended last at score -inf."""

    actions: Tuple[Action, ...]
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def index_of(self, action: Action) -> int:
        return self.actions.index(action)


def strip_self_loops(steps: Sequence[Tuple[object, EntityRef]]) -> List[Tuple[object, EntityRef]]:
    out = list(steps)
    while out and out[-1][0] is SELF_LOOP:
        out.pop()
    return out


class WalkEnv:
    """Environment over a read-only graph, embedding table and pattern set.

    Instances are cheap; everything shared is read-only, so one env can
    serve any number of interleaved episodes (states are immutable).
    """

    def __init__(self, graph: KnowledgeGraph, table: EmbeddingTable,
                 patterns: MetaPathSet, horizon: int = DEFAULT_HORIZON,
                 history: int = DEFAULT_HISTORY, prune_size: int = DEFAULT_PRUNE_SIZE):
        if horizon < patterns.max_length:
            raise ValueError("horizon shorter than the longest pattern")
        self.graph = graph
        self.table = table
        self.patterns = patterns
        self.horizon = horizon
        self.history = history
        self.prune_size = prune_size

    def reset(self, v0: EntityRef) -> State:
        if v0.kind != EntityKind.PRODUCT:
            raise NotAProduct(f"walks start at products, got {v0!r}")
        self.graph.check_entity(v0)
        return State(v0=v0)

    def feasible_relations(self, state: State) -> Set[Relation]:
        prefix = state.relation_prefix()
        if any(r is SELF_LOOP for r in prefix):
            return set()
        return self.patterns.continuations(prefix)

    def prune_actions(self, state: State, n: Optional[int] = None) -> PrunedActionSpace:
        """Pattern-filter, history-exclude, score, keep top-n, append self-loop."""
        n = self.prune_size if n is None else n
        if n < 1:
            raise ValueError("prune size must be >= 1")
        feasible = self.feasible_relations(state)
        visited = state.visited()
        candidates: List[Tuple[Relation, EntityRef]] = []
        if feasible and state.t < self.horizon:
            for r, e in self.graph.neighbors(state.current):
                if r in feasible and e not in visited:
                    candidates.append((r, e))
        scores = score_actions(self.table, state.v0, candidates)
        order = sorted(range(len(candidates)),
                       key=lambda i: (-scores[i], int(candidates[i][0]), candidates[i][1].id))
        order = order[:n]
        actions = [Action(candidates[i][0], candidates[i][1]) for i in order]
        kept = scores[order] if order else np.zeros(0)
        actions.append(Action(SELF_LOOP, state.current))
        return PrunedActionSpace(actions=tuple(actions),
                                 scores=np.concatenate([kept, [-np.inf]]))

    def step(self, state: State, action: Action) -> Tuple[State, bool]:
        if state.t >= self.horizon:
            raise IllegalAction("episode already finished")
        if action.is_self_loop:
            if action.target != state.current:
                raise IllegalAction("self-loop must target the current entity")
        else:
            if action.relation not in self.feasible_relations(state):
                raise IllegalAction(f"{action.relation!r} not a feasible continuation")
            if action.target in state.visited():
                raise IllegalAction(f"{action.target!r} already visited")
            if not self.graph.has_edge(state.current, action.relation, action.target):
                raise IllegalAction(f"no edge {state.current!r}-{action.relation!r}-{action.target!r}")
        new_state = State(v0=state.v0, steps=state.steps + ((action.relation, action.target),))
        return new_state, new_state.t >= self.horizon

    def episode_path(self, state: State) -> Optional[ReasoningPath]:
        """Stripped walk of a finished (or partial) episode; None when a
        self-loop sits inside the walk and no clean path remains."""
        steps = strip_self_loops(state.steps)
        if any(r is SELF_LOOP for r, _ in steps):
            return None
        entities = (state.v0,) + tuple(e for _, e in steps)
        relations = tuple(r for r, _ in steps)
        return ReasoningPath(entities=entities, relations=relations)

    def is_valid_terminal(self, path: Optional[ReasoningPath]) -> bool:
        if path is None or len(path) == 0:
            return False
        if path.end == path.source or path.end.kind != EntityKind.PRODUCT:
            return False
        return self.patterns.matches(path.relations)

    def terminal_reward(self, state: State, rewarder) -> float:
        """Reward of a finished episode: the rewarder's pair score when the
        stripped walk matches a pattern and ends at another product, else 0."""
        path = self.episode_path(state)
        if not self.is_valid_terminal(path):
            return 0.0
        return float(rewarder.score_pairs([(state.v0, path.end)])[0])

    def terminal_rewards(self, states: Sequence[State], rewarder) -> np.ndarray:
        """Batched terminal rewards; rewarders that rescale per batch (the
        embedding one) see all valid endpoints of the batch together."""
        rewards = np.zeros(len(states))
        pairs = []
        slots = []
        for i, s in enumerate(states):
            path = self.episode_path(s)
            if self.is_valid_terminal(path):
                pairs.append((s.v0, path.end))
                slots.append(i)
        if pairs:
            rewards[slots] = rewarder.score_pairs(pairs)
        return rewards
