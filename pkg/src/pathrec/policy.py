"""Policies over pruned action sets and their REINFORCE training.

The affinity policy projects the state and every action embedding into a
shared space and softmaxes their dot products, so it handles action sets of
any size; the fixed-width variant maps the state straight to a padded slot
distribution and only sees action order.  Both are trained by plain SGD on
the score-function gradient with a running-mean baseline.  All math is
hand-rolled numpy in float64 so gradients can be checked against central
finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .embedding import EmbeddingTable
from .environment import Action, PrunedActionSpace, State, WalkEnv
from .errors import NoActions
from .nn import clip_gradients, relu, softmax, log_softmax, uniform_init

logger = logging.getLogger(__name__)


def encode_state(state: State, table: EmbeddingTable, history: int = 1) -> np.ndarray:
    """Concatenate source embedding and the last ``history+1`` (relation,
    entity) pairs, zero-padded on the left; self-loop relations encode as
    zeros.  Length is (1 + 2*(history+1)) * dim."""
    d = table.dim
    entries: List[Tuple[object, Optional[np.ndarray]]] = [(None, table.entity_vector(state.v0))]
    for r, e in state.steps:
        entries.append((r, table.entity_vector(e)))
    window = entries[-(history + 1):]
    pad = (history + 1) - len(window)
    parts = [table.entity_vector(state.v0)]
    for _ in range(pad):
        parts.append(np.zeros(d))
        parts.append(np.zeros(d))
    for r, evec in window:
        if r is None or not hasattr(r, "name"):
            parts.append(np.zeros(d))
        else:
            parts.append(table.relation_vector(r))
        parts.append(evec)
    return np.concatenate(parts)


def action_matrix(actions: Sequence[Action], table: EmbeddingTable) -> np.ndarray:
    """Rows of concatenated (relation, entity) embeddings; the self-loop's
    relation half is zeros."""
    d = table.dim
    out = np.zeros((len(actions), 2 * d))
    for i, a in enumerate(actions):
        if not a.is_self_loop:
            out[i, :d] = table.relation_vector(a.relation)
        out[i, d:] = table.entity_vector(a.target)
    return out


@dataclass
class StepRecord:
    state_vec: np.ndarray
    actions: np.ndarray  # (M, 2*dim)
    chosen: int
    log_prob: float


@dataclass
class Trajectory:
    start: object
    steps: List[StepRecord]
    final_state: State
    reward: float = 0.0
    returns: np.ndarray = field(default_factory=lambda: np.zeros(0))


class AffinityPolicy:
    """Two-tower policy: state and action embeddings meet in a shared
    affinity space, softmax over however many actions are present.

    With ``similarity_init`` the source-product block of the state tower and
    the entity block of the action tower share one random-feature
    projection, so the initial logits already approximate a similarity
    kernel between the source and the action's target; score-function
    training refines it.  Plain small-uniform init is available for
    analysis (``similarity_init=False``).
    """

    def __init__(self, state_dim: int = 500, action_dim: int = 200,
                 hidden: int = 512, affinity: int = 256, seed: int = 0,
                 similarity_init: bool = True, init_gain: float = 4.0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = hidden
        self.affinity = affinity
        rng = np.random.default_rng(seed)
        self.params: Dict[str, np.ndarray] = {
            "Ws": uniform_init(rng, state_dim, (state_dim, hidden)),
            "W1": uniform_init(rng, hidden, (hidden, affinity)),
            "Wa": uniform_init(rng, action_dim, (action_dim, hidden)),
            "W2": uniform_init(rng, hidden, (hidden, affinity)),
        }
        if similarity_init:
            d = action_dim // 2
            feat = rng.standard_normal((d, hidden)) / math.sqrt(d)
            proj = rng.standard_normal((hidden, affinity)) * (init_gain / math.sqrt(hidden))
            self.params["Ws"][:d, :] += feat          # source-product block
            self.params["Wa"][d:, :] += feat          # action-entity block
            self.params["W1"] += proj
            self.params["W2"] += proj

    def _forward(self, s: np.ndarray, A: np.ndarray):
        p = self.params
        h1 = s @ p["Ws"]
        r1 = relu(h1)
        s2 = r1 @ p["W1"]
        sp = relu(s2)
        g1 = A @ p["Wa"]
        q1 = relu(g1)
        a2 = q1 @ p["W2"]
        ap = relu(a2)
        z = ap @ sp
        return z, (h1, r1, s2, sp, g1, q1, a2, ap)

    def action_probs(self, state_vec: np.ndarray, actions: np.ndarray) -> np.ndarray:
        if actions.shape[0] == 0:
            raise NoActions("empty action set")
        z, _ = self._forward(state_vec, actions)
        return softmax(z)

    def gradients(self, steps: Sequence[StepRecord], advantages: np.ndarray,
                  entropy_weight: float = 0.0) -> Tuple[Dict[str, np.ndarray], float]:
        """Mean gradient of -log pi(a|s) * advantage (- entropy bonus) over
        the given steps, plus the mean loss value."""
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        total_loss = 0.0
        p = self.params
        for rec, adv in zip(steps, advantages):
            s, A = rec.state_vec, rec.actions
            z, (h1, r1, s2, sp, g1, q1, a2, ap) = self._forward(s, A)
            logp = log_softmax(z)
            probs = np.exp(logp)
            entropy = float(-(probs * logp).sum())
            total_loss += -logp[rec.chosen] * adv - entropy_weight * entropy
            dz = adv * probs.copy()
            dz[rec.chosen] -= adv
            if entropy_weight:
                dz += entropy_weight * probs * (logp + entropy)
            dsp = ap.T @ dz
            dap = np.outer(dz, sp)
            ds2 = dsp * (s2 > 0)
            grads["W1"] += np.outer(r1, ds2)
            dr1 = ds2 @ p["W1"].T
            dh1 = dr1 * (h1 > 0)
            grads["Ws"] += np.outer(s, dh1)
            da2 = dap * (a2 > 0)
            grads["W2"] += q1.T @ da2
            dq1 = da2 @ p["W2"].T
            dg1 = dq1 * (g1 > 0)
            grads["Wa"] += A.T @ dg1
        n = max(1, len(steps))
        for k in grads:
            grads[k] /= n
        return grads, total_loss / n

    def loss(self, steps: Sequence[StepRecord], advantages: np.ndarray,
             entropy_weight: float = 0.0) -> float:
        """Scalar objective matching :meth:`gradients` (for gradient checks)."""
        total = 0.0
        for rec, adv in zip(steps, advantages):
            z, _ = self._forward(rec.state_vec, rec.actions)
            logp = log_softmax(z)
            probs = np.exp(logp)
            total += -logp[rec.chosen] * adv - entropy_weight * float(-(probs * logp).sum())
        return total / max(1, len(steps))

    def distill_gradients(self, state_vec: np.ndarray, actions: np.ndarray,
                          target: np.ndarray) -> Tuple[Dict[str, np.ndarray], float]:
        """Cross-entropy gradient toward a target action distribution."""
        p = self.params
        s, A = state_vec, actions
        z, (h1, r1, s2, sp, g1, q1, a2, ap) = self._forward(s, A)
        logp = log_softmax(z)
        loss = float(-(target * logp).sum())
        dz = np.exp(logp) - target
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dsp = ap.T @ dz
        dap = np.outer(dz, sp)
        ds2 = dsp * (s2 > 0)
        grads["W1"] += np.outer(r1, ds2)
        dr1 = ds2 @ p["W1"].T
        dh1 = dr1 * (h1 > 0)
        grads["Ws"] += np.outer(s, dh1)
        da2 = dap * (a2 > 0)
        grads["W2"] += q1.T @ da2
        dq1 = da2 @ p["W2"].T
        dg1 = dq1 * (g1 > 0)
        grads["Wa"] += A.T @ dg1
        return grads, loss

    def apply_gradients(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        for k, g in grads.items():
            self.params[k] -= lr * g


class FixedWidthPolicy:
    """Masked fixed-width policy: a two-layer MLP from the state to one
    logit per action slot, softmax over the slots actually present."""

    def __init__(self, state_dim: int = 500, width: int = 251,
                 hidden: int = 512, seed: int = 0):
        self.state_dim = state_dim
        self.width = width
        self.hidden = hidden
        rng = np.random.default_rng(seed)
        self.params: Dict[str, np.ndarray] = {
            "V1": uniform_init(rng, state_dim, (state_dim, hidden)),
            "V2": uniform_init(rng, hidden, (hidden, width)),
        }

    def _forward(self, s: np.ndarray, m: int):
        if m > self.width:
            raise NoActions(f"{m} actions exceed fixed width {self.width}")
        h = s @ self.params["V1"]
        r = relu(h)
        logits = (r @ self.params["V2"])[:m]
        return logits, (h, r)

    def action_probs(self, state_vec: np.ndarray, actions: np.ndarray) -> np.ndarray:
        m = actions.shape[0]
        if m == 0:
            raise NoActions("empty action set")
        logits, _ = self._forward(state_vec, m)
        return softmax(logits)

    def gradients(self, steps: Sequence[StepRecord], advantages: np.ndarray,
                  entropy_weight: float = 0.0) -> Tuple[Dict[str, np.ndarray], float]:
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        total_loss = 0.0
        for rec, adv in zip(steps, advantages):
            m = rec.actions.shape[0]
            logits, (h, r) = self._forward(rec.state_vec, m)
            logp = log_softmax(logits)
            probs = np.exp(logp)
            entropy = float(-(probs * logp).sum())
            total_loss += -logp[rec.chosen] * adv - entropy_weight * entropy
            dz = adv * probs.copy()
            dz[rec.chosen] -= adv
            if entropy_weight:
                dz += entropy_weight * probs * (logp + entropy)
            dfull = np.zeros(self.width)
            dfull[:m] = dz
            grads["V2"] += np.outer(r, dfull)
            dr = self.params["V2"] @ dfull
            dh = dr * (h > 0)
            grads["V1"] += np.outer(rec.state_vec, dh)
        n = max(1, len(steps))
        for k in grads:
            grads[k] /= n
        return grads, total_loss / n

    def loss(self, steps: Sequence[StepRecord], advantages: np.ndarray,
             entropy_weight: float = 0.0) -> float:
        total = 0.0
        for rec, adv in zip(steps, advantages):
            logits, _ = self._forward(rec.state_vec, rec.actions.shape[0])
            logp = log_softmax(logits)
            probs = np.exp(logp)
            total += -logp[rec.chosen] * adv - entropy_weight * float(-(probs * logp).sum())
        return total / max(1, len(steps))

    def distill_gradients(self, state_vec: np.ndarray, actions: np.ndarray,
                          target: np.ndarray) -> Tuple[Dict[str, np.ndarray], float]:
        """Cross-entropy gradient toward a target slot distribution."""
        m = actions.shape[0]
        logits, (h, r) = self._forward(state_vec, m)
        logp = log_softmax(logits)
        loss = float(-(target * logp).sum())
        dz = np.exp(logp) - target
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dfull = np.zeros(self.width)
        dfull[:m] = dz
        grads["V2"] += np.outer(r, dfull)
        dr = self.params["V2"] @ dfull
        dh = dr * (h > 0)
        grads["V1"] += np.outer(state_vec, dh)
        return grads, loss

    def apply_gradients(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        for k, g in grads.items():
            self.params[k] -= lr * g


class UniformPolicy:
    """Untrained baseline: equal probability over the present actions."""

    params: Dict[str, np.ndarray] = {}

    def action_probs(self, state_vec: np.ndarray, actions: np.ndarray) -> np.ndarray:
        m = actions.shape[0]
        if m == 0:
            raise NoActions("empty action set")
        return np.full(m, 1.0 / m)

    def apply_gradients(self, grads, lr) -> None:
        pass


def sample_trajectory(policy, env: WalkEnv, table: EmbeddingTable, v0,
                      rng: np.random.Generator, history: int = 1) -> Trajectory:
    state = env.reset(v0)
    steps: List[StepRecord] = []
    done = False
    while not done:
        space = env.prune_actions(state)
        svec = encode_state(state, table, history)
        amat = action_matrix(space.actions, table)
        probs = policy.action_probs(svec, amat)
        chosen = int(rng.choice(len(probs), p=probs))
        steps.append(StepRecord(state_vec=svec, actions=amat, chosen=chosen,
                                log_prob=float(np.log(max(probs[chosen], 1e-300)))))
        state, done = env.step(state, space.actions[chosen])
    return Trajectory(start=v0, steps=steps, final_state=state)


def sample_trajectories(policy, env: WalkEnv, table: EmbeddingTable,
                        starts: Sequence, rng: np.random.Generator,
                        history: int = 1) -> List[Trajectory]:
    return [sample_trajectory(policy, env, table, v0, rng, history) for v0 in starts]


def assign_returns(traj: Trajectory, gamma: float) -> None:
    """Terminal-only reward discounted back: G_t = gamma^(T-1-t) * R."""
    T = len(traj.steps)
    traj.returns = np.array([traj.reward * gamma ** (T - 1 - t) for t in range(T)])


def reinforce_update(policy, trajectories: Sequence[Trajectory], gamma: float,
                     lr: float, baseline: float = 0.0,
                     entropy_weight: float = 0.0,
                     clip_norm: float = 10.0) -> Tuple[float, float]:
    """One SGD ascent step from a batch of trajectories.

    Returns (mean undiscounted return, mean step loss).  The caller owns the
    baseline; advantages are G_t - baseline.
    """
    if not trajectories:
        raise ValueError("no trajectories")
    steps: List[StepRecord] = []
    advantages: List[float] = []
    for traj in trajectories:
        assign_returns(traj, gamma)
        for rec, g in zip(traj.steps, traj.returns):
            steps.append(rec)
            advantages.append(g - baseline)
    grads, loss = policy.gradients(steps, np.asarray(advantages), entropy_weight)
    if clip_norm:
        clip_gradients(grads, clip_norm)
    policy.apply_gradients(grads, lr)
    mean_return = float(np.mean([t.reward for t in trajectories]))
    return mean_return, loss


@dataclass
class TrainLog:
    mean_returns: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)


def pretrain_policy(policy, env: WalkEnv, table: EmbeddingTable,
                    starts: Sequence, epochs: int = 10, lr: float = 0.05,
                    seed: int = 0, temperature: float = 1.0,
                    history: int = 1, clip_norm: float = 10.0) -> List[float]:
    """Behavior-clone the policy toward the pruning-score softmax.

    States come from random legal walks; the target distribution over a
    state's pruned actions is softmax(score / (temperature * std)).  Gives
    the policy the score ordering (including the bias term it cannot read
    from action embeddings) as a starting point for REINFORCE.
    """
    rng = np.random.default_rng([seed, 0x70726574])
    losses: List[float] = []
    starts = list(starts)
    for _epoch in range(epochs):
        order = rng.permutation(len(starts))
        total = 0.0
        count = 0
        for i in order:
            state = env.reset(starts[i])
            done = False
            while not done:
                space = env.prune_actions(state)
                svec = encode_state(state, table, history)
                amat = action_matrix(space.actions, table)
                finite = np.isfinite(space.scores)
                target = np.zeros(len(space.actions))
                if np.any(finite):
                    vals = space.scores[finite]
                    scale = max(float(vals.std()), 1e-6) * temperature
                    z = (vals - vals.max()) / scale
                    ez = np.exp(z)
                    target[finite] = ez / ez.sum()
                else:
                    target[:] = 1.0 / len(target)
                grads, loss = policy.distill_gradients(svec, amat, target)
                if clip_norm:
                    clip_gradients(grads, clip_norm)
                policy.apply_gradients(grads, lr)
                total += loss
                count += 1
                idx = int(rng.choice(len(target), p=target / target.sum())) \
                    if target.sum() > 0 else len(space.actions) - 1
                state, done = env.step(state, space.actions[idx])
        losses.append(total / max(1, count))
        logger.info("pretrain epoch %d loss %.4f", _epoch, losses[-1])
    return losses


def train_agent(policy, env: WalkEnv, table: EmbeddingTable, rewarder,
                starts: Sequence, epochs: int = 30, batch_size: int = 16,
                lr: float = 0.001, gamma: float = 0.99, seed: int = 0,
                entropy_weight: float = 0.0, history: int = 1,
                baseline_step: float = 0.1, episodes_per_start: int = 1) -> TrainLog:
    """REINFORCE training loop over shuffled start products.

    Each epoch visits every start ``episodes_per_start`` times.  The
    baseline is a running mean of batch returns, updated after each batch.
    Deterministic under ``seed``.
    """
    rng = np.random.default_rng([seed, 0x706F6C69])
    log = TrainLog()
    baseline = 0.0
    starts = list(starts) * max(1, episodes_per_start)
    for epoch in range(epochs):
        order = rng.permutation(len(starts))
        epoch_returns: List[float] = []
        epoch_losses: List[float] = []
        for lo in range(0, len(starts), batch_size):
            batch = [starts[i] for i in order[lo:lo + batch_size]]
            trajs = sample_trajectories(policy, env, table, batch, rng, history)
            rewards = env.terminal_rewards([t.final_state for t in trajs], rewarder)
            for traj, r in zip(trajs, rewards):
                traj.reward = float(r)
            mean_ret, loss = reinforce_update(policy, trajs, gamma, lr,
                                              baseline, entropy_weight)
            baseline += baseline_step * (mean_ret - baseline)
            epoch_returns.append(mean_ret)
            epoch_losses.append(loss)
        log.mean_returns.append(float(np.mean(epoch_returns)))
        log.losses.append(float(np.mean(epoch_losses)))
        logger.info("agent epoch %d mean return %.4f loss %.4f",
                    epoch, log.mean_returns[-1], log.losses[-1])
    return log
