"""Task training loops: batched Q-learning and supervised mini-batches.

Both reinforcement tasks share one episode skeleton: play with rank-softmax
exploration for the first 90% of a generation's episodes and greedily for
the rest, collect transitions, and run one Adam step on each trailing batch.
Q-targets bootstrap through the current network only (no target network, no
replay beyond the trailing batch), and life-cycle or episode boundaries are
terminal for bootstrapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .environments.cartpole import (DEFAULT_PHYSICS, DT, CartPoleParams,
                                    cartpole_observe, cartpole_reset,
                                    cartpole_step)
from .environments.mnist import MnistSet
from .environments.tag import (COLS, DEFAULT_REWARDS, PREDATOR, PREY, ROWS,
                               StepRecord, TagRewards, cycle_outcomes,
                               tag_observe, tag_reset, tag_score, tag_step)
from .netexec import (CompiledNetwork, OptimizerState, forward, forward_batch,
                      recurrent_slot_count, train_step)

GAMMA = 0.9

RL_KINDS = ("tag", "cartpole")


@dataclass(frozen=True)
class Schedule:
    """Per-generation training volume for one task."""
    episodes_per_generation: int
    steps_per_episode: int
    life_cycles: int | None
    batch_size: int
    max_batches_per_episode: int | None = None
    exploitation_fraction: float = 0.9
    generations: int = 100
    batches_per_generation: int | None = None  # supervised tasks only

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 < self.exploitation_fraction < 1.0:
            raise ValueError("exploitation_fraction must lie in (0, 1)")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        if self.life_cycles is not None \
                and self.steps_per_episode % self.life_cycles != 0:
            raise ValueError("steps_per_episode must divide evenly into life_cycles")

    @property
    def exploitation_start(self) -> int:
        """First greedy episode index; the window holds the remaining episodes.

        The floor keeps the window at 13 of 128 episodes for the default
        pursuit schedule.
        """
        return math.floor(self.exploitation_fraction * self.episodes_per_generation)

    @property
    def steps_per_cycle(self) -> int:
        if self.life_cycles is None:
            raise ValueError("schedule has no life-cycle structure")
        return self.steps_per_episode // self.life_cycles


TAG_SCHEDULE = Schedule(episodes_per_generation=128, steps_per_episode=256,
                        life_cycles=16, batch_size=16, generations=100)
CARTPOLE_SCHEDULE = Schedule(episodes_per_generation=250, steps_per_episode=300,
                             life_cycles=None, batch_size=25,
                             max_batches_per_episode=12, generations=100)
MNIST_SCHEDULE = Schedule(episodes_per_generation=0, steps_per_episode=0,
                          life_cycles=None, batch_size=50, generations=100,
                          batches_per_generation=24)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    mem_state: list[np.ndarray] | None = None
    mem_next: list[np.ndarray] | None = None


@dataclass
class RLGenerationResult:
    score: float
    losses: list[float]
    exploitation_scores: list[float]
    role_scores: dict[str, float] = field(default_factory=dict)
    full_balance: bool = False


@dataclass
class SupervisedGenerationResult:
    mean_loss: float
    accuracy: float
    losses: list[float]


def exploration_probabilities(q_values) -> np.ndarray:
    """Exponentiated-rank distribution: P[i] = e^{O(i)} / sum_j e^{O(j)}.

    O(i) ranks the q-values ascending, so the best action carries the top
    exponent and the two best actions keep a probability ratio of exactly e
    no matter how many actions exist. Ties hand the higher rank to the lower
    index.
    """
    q = np.asarray(q_values, dtype=np.float64)
    if q.ndim != 1 or q.size < 1:
        raise ValueError("q_values must be a non-empty vector")
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite q-values")
    k = q.size
    order = np.lexsort((-np.arange(k), q))  # ascending q; ties: higher index first
    ranks = np.empty(k)
    ranks[order] = np.arange(1, k + 1)
    p = np.exp(ranks - k)
    p /= p.sum()
    return p


def explore_action(q_values, rng: np.random.Generator) -> int:
    """Sample an action index from the exponentiated-rank distribution.

    Inverse-CDF draw from one uniform, the same scheme Generator.choice
    uses, minus its per-call validation overhead (this sits on the hot
    path of every exploration step).
    """
    p = exploration_probabilities(q_values)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    return int(cdf.searchsorted(rng.random(), side="right"))


def greedy_action(q_values) -> int:
    return int(np.argmax(q_values))


def _stack_memories(batch: list[Transition], attr: str,
                    net: CompiledNetwork) -> list[np.ndarray] | None:
    snapshots = [getattr(t, attr) for t in batch]
    if all(s is None for s in snapshots):
        return None
    widths = [m.shape[0] for m in net.memory]
    return [np.stack([s[l] if s is not None else np.zeros(widths[l])
                      for s in snapshots])
            for l in range(len(widths))]


def q_targets(batch: list[Transition], net: CompiledNetwork,
              gamma: float = GAMMA) -> tuple[np.ndarray, np.ndarray]:
    """(Q of the taken actions, bootstrap targets) for one transition batch.

    target = reward, plus gamma * max_a Q(next_state, a) when the transition
    is not terminal; Q comes from the current network, replaying the memory
    snapshots each transition carries.
    """
    states = np.stack([t.state for t in batch])
    actions = np.fromiter((t.action for t in batch), dtype=np.intp, count=len(batch))
    rewards = np.fromiter((t.reward for t in batch), dtype=np.float64, count=len(batch))
    live = np.fromiter((not t.terminal for t in batch), dtype=np.float64, count=len(batch))
    q_now = forward_batch(net, states, _stack_memories(batch, "mem_state", net))
    next_states = np.stack([t.next_state for t in batch])
    q_next = forward_batch(net, next_states, _stack_memories(batch, "mem_next", net))
    targets = rewards + gamma * q_next.max(axis=1) * live
    return q_now[np.arange(len(batch)), actions], targets


def _rl_update(net: CompiledNetwork, opt: OptimizerState,
               batch: list[Transition], gamma: float) -> float:
    """Smooth-L1 step toward the Q-targets on the taken actions only.

    The target matrix copies the current predictions everywhere else, so
    those components carry zero residual and zero gradient.
    """
    states = np.stack([t.state for t in batch])
    actions = np.fromiter((t.action for t in batch), dtype=np.intp, count=len(batch))
    rewards = np.fromiter((t.reward for t in batch), dtype=np.float64, count=len(batch))
    live = np.fromiter((not t.terminal for t in batch), dtype=np.float64, count=len(batch))
    mem = _stack_memories(batch, "mem_state", net)
    next_states = np.stack([t.next_state for t in batch])
    q_next = forward_batch(net, next_states, _stack_memories(batch, "mem_next", net))
    target_matrix = forward_batch(net, states, mem)
    target_matrix[np.arange(len(batch)), actions] = \
        rewards + gamma * q_next.max(axis=1) * live
    return train_step(net, states, target_matrix, "smooth_l1", opt, memories=mem)


@dataclass(frozen=True)
class TagOptions:
    rows: int = ROWS
    cols: int = COLS
    rewards: TagRewards = DEFAULT_REWARDS
    permutation: np.ndarray | None = None


@dataclass(frozen=True)
class CartPoleOptions:
    physics: CartPoleParams = DEFAULT_PHYSICS
    dt: float = DT


def run_rl_generation(net: CompiledNetwork, opt: OptimizerState, kind: str,
                      schedule: Schedule, rng: np.random.Generator,
                      specialization: str | None = None,
                      env_options=None, gamma: float = GAMMA) -> RLGenerationResult:
    """One generation of episodic Q-learning; score = exploitation-window mean."""
    if kind == "tag":
        return _run_tag_generation(net, opt, schedule, rng, specialization,
                                   env_options or TagOptions(), gamma)
    if kind == "cartpole":
        return _run_cartpole_generation(net, opt, schedule, rng,
                                        env_options or CartPoleOptions(), gamma)
    raise ValueError(f"unknown task kind {kind!r}")


def _run_tag_generation(net, opt, schedule, rng, specialization,
                        options: TagOptions, gamma) -> RLGenerationResult:
    losses: list[float] = []
    exploit_scores: list[float] = []
    exploit_outcomes: list[tuple[str, bool]] = []
    snapshot = recurrent_slot_count(net) > 0
    spc = schedule.steps_per_cycle
    start_greedy = schedule.exploitation_start
    permutation = options.permutation
    for episode in range(schedule.episodes_per_generation):
        greedy = episode >= start_greedy
        state = tag_reset(rng, specialization, rows=options.rows,
                          cols=options.cols, steps_per_cycle=spc)
        net.reset_memory()
        records: list[StepRecord] = []
        pending: list[Transition] = []
        for step in range(schedule.steps_per_episode):
            obs = tag_observe(state, permutation)
            mem_before = net.memory_snapshot() if snapshot else None
            q = forward(net, obs)
            action = greedy_action(q) if greedy else explore_action(q, rng)
            mem_after = net.memory_snapshot() if snapshot else None
            next_state, reward, cycle_ended = tag_step(state, action, rng,
                                                       options.rewards)
            next_obs = tag_observe(next_state, permutation)
            pending.append(Transition(obs, action, reward, next_obs, cycle_ended,
                                      mem_before, mem_after))
            records.append(StepRecord(step, state.agent_role, action, reward,
                                      cycle_ended))
            state = next_state
            if cycle_ended:
                net.reset_memory()
            if len(pending) == schedule.batch_size:
                losses.append(_rl_update(net, opt, pending, gamma))
                pending = []
        if pending:
            losses.append(_rl_update(net, opt, pending, gamma))
        if greedy:
            exploit_scores.append(tag_score(records, options.rewards))
            exploit_outcomes.extend(cycle_outcomes(records, options.rewards))
    role_scores = {}
    for role in (PREY, PREDATOR):
        outcomes = [ok for r, ok in exploit_outcomes if r == role]
        if outcomes:
            role_scores[role] = sum(outcomes) / len(outcomes)
    score = float(np.mean(exploit_scores)) if exploit_scores else 0.0
    return RLGenerationResult(score, losses, exploit_scores, role_scores)


def _run_cartpole_generation(net, opt, schedule, rng,
                             options: CartPoleOptions, gamma) -> RLGenerationResult:
    losses: list[float] = []
    exploit_scores: list[float] = []
    snapshot = recurrent_slot_count(net) > 0
    start_greedy = schedule.exploitation_start
    cap = schedule.max_batches_per_episode
    full_balance = False
    for episode in range(schedule.episodes_per_generation):
        greedy = episode >= start_greedy
        state = cartpole_reset(rng)
        net.reset_memory()
        pending: list[Transition] = []
        batches_done = 0
        upright = 0
        for _ in range(schedule.steps_per_episode):
            obs = cartpole_observe(state)
            mem_before = net.memory_snapshot() if snapshot else None
            q = forward(net, obs)
            action = greedy_action(q) if greedy else explore_action(q, rng)
            mem_after = net.memory_snapshot() if snapshot else None
            next_state, reward, terminal = cartpole_step(
                state, 1 if action == 0 else -1, options.dt, options.physics)
            pending.append(Transition(obs, action, reward,
                                      cartpole_observe(next_state), terminal,
                                      mem_before, mem_after))
            upright += int(reward)
            state = next_state
            if len(pending) == schedule.batch_size \
                    and (cap is None or batches_done < cap):
                losses.append(_rl_update(net, opt, pending, gamma))
                batches_done += 1
                pending = []
            if terminal:
                break
        if pending and (cap is None or batches_done < cap):
            losses.append(_rl_update(net, opt, pending, gamma))
            batches_done += 1
        episode_score = upright / schedule.steps_per_episode
        if episode_score >= 1.0:
            full_balance = True
        if greedy:
            exploit_scores.append(episode_score)
    score = float(np.mean(exploit_scores)) if exploit_scores else 0.0
    return RLGenerationResult(score, losses, exploit_scores,
                              full_balance=full_balance)


def run_supervised_generation(net: CompiledNetwork, opt: OptimizerState,
                              batches, schedule: Schedule) -> SupervisedGenerationResult:
    """Train on the generation's batch quota; report mean loss and accuracy.

    Accuracy is measured on each batch before the step that trains on it.
    """
    if not schedule.batches_per_generation:
        raise ValueError("schedule does not define batches_per_generation")
    losses: list[float] = []
    correct = 0
    seen = 0
    for _ in range(schedule.batches_per_generation):
        X, y = next(batches)
        logits = forward_batch(net, X)
        correct += int((np.argmax(logits, axis=1) == y).sum())
        seen += len(y)
        losses.append(train_step(net, X, y, "cross_entropy", opt))
    return SupervisedGenerationResult(float(np.mean(losses)), correct / seen, losses)


def evaluate_accuracy(net: CompiledNetwork, dataset: MnistSet,
                      batch_size: int = 512) -> float:
    """Classification accuracy over a full dataset, batched forward only."""
    count = dataset.labels.shape[0]
    flat = dataset.images.reshape(count, -1)
    correct = 0
    for lo in range(0, count, batch_size):
        X = flat[lo:lo + batch_size] / 255.0
        logits = forward_batch(net, X)
        correct += int((np.argmax(logits, axis=1)
                        == dataset.labels[lo:lo + batch_size]).sum())
    return correct / count
