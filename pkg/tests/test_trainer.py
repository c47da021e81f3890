"""Trainer tests: exploration law, Q-target semantics, episode accounting."""

import math

import numpy as np
import pytest

from funcnet.environments.mnist import MnistSet
from funcnet.netexec import compile as net_compile
from funcnet.netexec import forward_batch, make_optimizer
from funcnet.trainer import (CARTPOLE_SCHEDULE, GAMMA, MNIST_SCHEDULE,
                             TAG_SCHEDULE, RLGenerationResult, Schedule,
                             TagOptions, Transition, _rl_update,
                             evaluate_accuracy, exploration_probabilities,
                             explore_action, greedy_action, q_targets,
                             run_rl_generation, run_supervised_generation)
from helpers.builders import dense_genome, recurrent_probe_genome

E = math.e


# ---------------------------------------------------------------- schedules

def test_default_schedules_match_task_shapes():
    assert TAG_SCHEDULE.episodes_per_generation == 128
    assert TAG_SCHEDULE.steps_per_episode == 256
    assert TAG_SCHEDULE.steps_per_cycle == 16
    assert TAG_SCHEDULE.batch_size == 16
    assert CARTPOLE_SCHEDULE.max_batches_per_episode == 12
    assert MNIST_SCHEDULE.batches_per_generation == 24
    assert MNIST_SCHEDULE.batch_size == 50


@pytest.mark.parametrize("episodes,start", [(128, 115), (250, 225), (32, 28)])
def test_exploitation_window_uses_floor(episodes, start):
    sched = Schedule(episodes, 10, None, 5)
    assert sched.exploitation_start == start


def test_schedule_rejects_bad_values():
    with pytest.raises(ValueError):
        Schedule(10, 10, None, 0)
    with pytest.raises(ValueError):
        Schedule(10, 10, None, 5, exploitation_fraction=1.0)
    with pytest.raises(ValueError):
        Schedule(10, 100, 3, 5)  # 100 steps do not divide into 3 cycles
    with pytest.raises(ValueError):
        Schedule(10, 10, None, 5).steps_per_cycle


# -------------------------------------------------------------- exploration

def test_exploration_probabilities_worked_example():
    p = exploration_probabilities([0.5, 0.2, 0.9])
    expected = np.exp([2.0, 1.0, 3.0])
    expected /= expected.sum()
    assert np.allclose(p, expected)
    assert np.allclose(p, [0.24473, 0.08998, 0.66524], atol=5e-5)


def test_exploration_depends_only_on_ranks():
    a = exploration_probabilities([1.0, 2.0, 3.0])
    b = exploration_probabilities([-50.0, 0.25, 9000.0])
    assert np.allclose(a, b)


def test_exploration_top_two_ratio_is_e():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = rng.normal(size=10)
        p = np.sort(exploration_probabilities(q))[::-1]
        assert np.isclose(p[0] / p[1], E)


def test_exploration_tie_favors_lower_index():
    p = exploration_probabilities([1.0, 1.0])
    assert np.allclose(p, [E / (1 + E), 1 / (1 + E)])
    p3 = exploration_probabilities([2.0, 2.0, 2.0])
    assert p3[0] > p3[1] > p3[2]


def test_exploration_single_action():
    assert np.allclose(exploration_probabilities([4.2]), [1.0])


def test_exploration_rejects_bad_q():
    with pytest.raises(ValueError):
        exploration_probabilities([])
    with pytest.raises(ValueError):
        exploration_probabilities([[1.0, 2.0]])
    with pytest.raises(ValueError):
        exploration_probabilities([1.0, float("nan")])


def test_explore_action_frequencies_match_probabilities():
    rng = np.random.default_rng(11)
    q = [0.5, 0.2, 0.9]
    draws = 20000
    counts = np.zeros(3)
    for _ in range(draws):
        counts[explore_action(q, rng)] += 1
    assert np.max(np.abs(counts / draws - exploration_probabilities(q))) < 0.02


def test_greedy_action_breaks_ties_low():
    assert greedy_action([1.0, 3.0, 3.0]) == 1
    assert greedy_action([5.0, 1.0]) == 0


# ---------------------------------------------------------------- Q-targets

def linear_q_net():
    """2-in 2-out linear network with hand-set parameters: Q(x) = x + b."""
    net = net_compile(dense_genome(2, [], 2))
    # layout: s (2), c (2), W row-major (4), b (2)
    net.params[:] = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.5, -0.5]
    return net

A = np.array([1.0, 0.0])
B = np.array([0.0, 1.0])


def test_q_targets_known_network():
    net = linear_q_net()
    batch = [Transition(A, 1, 2.0, B, False),
             Transition(A, 0, 2.0, B, True)]
    preds, targets = q_targets(batch, net)
    # Q(A) = [1.5, -0.5], Q(B) = [0.5, 0.5]
    assert np.allclose(preds, [-0.5, 1.5])
    assert np.allclose(targets, [2.0 + GAMMA * 0.5, 2.0])


def test_q_targets_gamma_zero_is_reward():
    net = linear_q_net()
    batch = [Transition(A, 0, -3.0, B, False)]
    _, targets = q_targets(batch, net, gamma=0.0)
    assert np.allclose(targets, [-3.0])


def test_q_targets_memory_snapshots_are_replayed():
    rng = np.random.default_rng(7)
    net = net_compile(recurrent_probe_genome(), rng)
    net.params[:] = rng.uniform(0.2, 0.9, size=net.param_count)
    hot = [np.array([2.0]), np.array([0.0])]
    batch_hot = [Transition(np.array([1.0]), 0, 1.0, np.array([1.0]), False,
                            mem_state=hot, mem_next=hot)]
    batch_cold = [Transition(np.array([1.0]), 0, 1.0, np.array([1.0]), False)]
    preds_hot, targets_hot = q_targets(batch_hot, net)
    preds_cold, targets_cold = q_targets(batch_cold, net)
    assert not np.isclose(preds_hot[0], preds_cold[0])
    zeros = [np.zeros(1), np.zeros(1)]
    batch_zeroed = [Transition(np.array([1.0]), 0, 1.0, np.array([1.0]), False,
                               mem_state=zeros, mem_next=zeros)]
    preds_z, targets_z = q_targets(batch_zeroed, net)
    assert np.isclose(preds_z[0], preds_cold[0])
    assert np.isclose(targets_z[0], targets_cold[0])


def test_rl_update_converges_to_bellman_fixed_point():
    """Two-state MDP with known Q*: staying in state A pays 1 forever.

    Q*(A, stay) = 1 / (1 - gamma) = 10, every other value 0.
    """
    rng = np.random.default_rng(19)
    net = net_compile(dense_genome(2, [], 2), rng)
    opt = make_optimizer(net, lr=0.05)
    batch = [Transition(A, 0, 1.0, A, False),
             Transition(A, 1, 0.0, B, False),
             Transition(B, 0, 0.0, B, True),
             Transition(B, 1, 0.0, B, True)]
    for _ in range(3000):
        _rl_update(net, opt, batch, GAMMA)
    q = forward_batch(net, np.stack([A, B]))
    assert abs(q[0, 0] - 10.0) < 0.5
    # B is absorbing with zero reward, so switching pays nothing at all
    assert abs(q[0, 1]) < 0.3
    assert abs(q[1, 0]) < 0.3 and abs(q[1, 1]) < 0.3


# ------------------------------------------------------- episode accounting

def tag_net(seed=0):
    return net_compile(dense_genome(17, [4], 3), np.random.default_rng(seed))


def cartpole_net(seed=0):
    return net_compile(dense_genome(4, [4], 2), np.random.default_rng(seed))


def test_tag_generation_accounting():
    sched = Schedule(8, 32, 2, 16)
    net = tag_net()
    res = run_rl_generation(net, make_optimizer(net), "tag", sched,
                            np.random.default_rng(1))
    assert isinstance(res, RLGenerationResult)
    # 32 steps / batch 16 = exactly 2 updates per episode, no partial batch
    assert len(res.losses) == 8 * 2
    assert len(res.exploitation_scores) == 8 - 7
    assert 0.0 <= res.score <= 1.0
    assert res.full_balance is False


def test_tag_dual_run_scores_both_roles():
    sched = Schedule(8, 32, 2, 16)
    net = tag_net()
    res = run_rl_generation(net, make_optimizer(net), "tag", sched,
                            np.random.default_rng(2))
    assert set(res.role_scores) == {"prey", "predator"}
    for v in res.role_scores.values():
        assert 0.0 <= v <= 1.0


def test_tag_specialized_run_scores_one_role():
    sched = Schedule(8, 32, 2, 16)
    net = tag_net()
    res = run_rl_generation(net, make_optimizer(net), "tag", sched,
                            np.random.default_rng(2), specialization="predator")
    assert set(res.role_scores) == {"predator"}


def test_tag_observation_permutation_changes_training():
    sched = Schedule(4, 32, 2, 16)
    perm = np.roll(np.arange(17), 5)
    runs = []
    for opts in (None, TagOptions(permutation=perm)):
        net = tag_net()
        res = run_rl_generation(net, make_optimizer(net), "tag", sched,
                                np.random.default_rng(3), env_options=opts)
        runs.append(res.losses)
    assert runs[0] != runs[1]


def test_tag_generation_deterministic():
    sched = Schedule(6, 32, 2, 16)
    losses = []
    for _ in range(2):
        net = tag_net(seed=4)
        res = run_rl_generation(net, make_optimizer(net), "tag", sched,
                                np.random.default_rng(9))
        losses.append((res.score, tuple(res.losses)))
    assert losses[0] == losses[1]


def test_cartpole_batch_cap_limits_updates():
    # batch of 1 updates every step until the cap blocks the rest
    sched = Schedule(6, 60, None, 1, max_batches_per_episode=2)
    net = cartpole_net()
    res = run_rl_generation(net, make_optimizer(net), "cartpole", sched,
                            np.random.default_rng(5))
    assert len(res.losses) == 6 * 2
    assert len(res.exploitation_scores) == 6 - 5


def test_cartpole_trailing_partial_batch_trains():
    # episodes last well under 25 steps' worth of batches: batch 25 never
    # fills, so each episode contributes exactly one partial-batch update
    sched = Schedule(4, 20, None, 25, max_batches_per_episode=12)
    net = cartpole_net()
    res = run_rl_generation(net, make_optimizer(net), "cartpole", sched,
                            np.random.default_rng(6))
    assert len(res.losses) == 4


def test_cartpole_full_balance_flag():
    # near-upright starts always survive a 3-step episode
    sched = Schedule(2, 3, None, 5)
    net = cartpole_net()
    res = run_rl_generation(net, make_optimizer(net), "cartpole", sched,
                            np.random.default_rng(7))
    assert res.full_balance is True
    assert res.exploitation_scores == [1.0]


def test_unknown_rl_kind_rejected():
    net = cartpole_net()
    with pytest.raises(ValueError):
        run_rl_generation(net, make_optimizer(net), "chess",
                          Schedule(1, 3, None, 5), np.random.default_rng(0))


# ----------------------------------------------------------------supervised

def constant_stream(X, y, counter):
    while True:
        counter.append(1)
        yield X, y


def test_supervised_generation_consumes_exact_quota():
    rng = np.random.default_rng(21)
    X = rng.normal(size=(4, 3))
    y = np.array([0, 1, 0, 1])
    counter = []
    net = net_compile(dense_genome(3, [], 2), rng)
    sched = Schedule(0, 0, None, 4, batches_per_generation=5)
    res = run_supervised_generation(net, make_optimizer(net),
                                    constant_stream(X, y, counter), sched)
    assert len(counter) == 5
    assert len(res.losses) == 5
    assert np.isclose(res.mean_loss, np.mean(res.losses))


def test_supervised_accuracy_measured_before_update():
    # zero parameters: logits all zero, argmax 0 regardless of the input
    net = net_compile(dense_genome(3, [], 3))
    X = np.ones((4, 3))
    y = np.array([0, 1, 0, 2])
    sched = Schedule(0, 0, None, 4, batches_per_generation=1)
    res = run_supervised_generation(net, make_optimizer(net),
                                    constant_stream(X, y, []), sched)
    assert res.accuracy == 0.5


def test_supervised_missing_quota_rejected():
    net = net_compile(dense_genome(3, [], 2))
    with pytest.raises(ValueError):
        run_supervised_generation(net, make_optimizer(net), iter(()),
                                  Schedule(0, 0, None, 4))


def test_supervised_memorizes_fixed_batch():
    rng = np.random.default_rng(23)
    X = rng.normal(size=(12, 4))
    y = np.argmax(X @ rng.normal(size=(4, 3)), axis=1)
    net = net_compile(dense_genome(4, [16], 3), rng)
    opt = make_optimizer(net, lr=5e-3)
    sched = Schedule(0, 0, None, 12, batches_per_generation=25)
    first = run_supervised_generation(net, opt, constant_stream(X, y, []), sched)
    last = None
    for _ in range(9):
        last = run_supervised_generation(net, opt, constant_stream(X, y, []), sched)
    assert last.mean_loss < first.mean_loss
    assert last.accuracy >= 0.9


def test_evaluate_accuracy_chunks_full_dataset():
    images = np.zeros((20, 28, 28), dtype=np.uint8)
    net = net_compile(dense_genome(784, [], 10))
    all_zero = MnistSet(images, np.zeros(20, dtype=np.int64), "test")
    all_three = MnistSet(images, np.full(20, 3, dtype=np.int64), "test")
    assert evaluate_accuracy(net, all_zero, batch_size=7) == 1.0
    assert evaluate_accuracy(net, all_three, batch_size=7) == 0.0
