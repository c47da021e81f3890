"""Pursuit game on a periodic grid.

Two walkers share a 12x12 torus. Three moves exist: Down (+1, 0),
Right (0, +1) and NorthWest (-1, -1). They sum to zero displacement, so
the move set is 3-periodic and cannot express every relative offset in
one step; contact is therefore defined as minimum-image Manhattan
distance <= 1 (same cell or a cardinal neighbor), which every starting
offset can reach. The learner plays against a fixed greedy opponent over
the same move set. Play runs in life-cycles of `steps_per_cycle` steps:
a cycle ends early on contact, and at every cycle boundary positions
restart and (without a fixed specialization) the roles swap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

ROWS = 12
COLS = 12
STEPS_PER_CYCLE = 16
OBS_SIZE = 17

ACTIONS = ((1, 0), (0, 1), (-1, -1))  # Down, Right, NorthWest
ACTION_NAMES = ("down", "right", "northwest")

PREY = "prey"
PREDATOR = "predator"


@dataclass(frozen=True)
class TagRewards:
    """Reward table. Outcomes are decoded from the reward stream, so the
    catch bonus and the caught penalty must dominate the repetition penalty
    (|catch| > |repeat| and |caught| > |repeat|)."""
    predator_step: float = -1.0
    prey_step: float = 1.0
    catch: float = 10.0
    caught: float = -10.0
    repeat: float = -5.0

    def __post_init__(self):
        if not self.catch > abs(self.repeat):
            raise ValueError("catch bonus must exceed the repetition penalty")
        if not -self.caught > abs(self.repeat):
            raise ValueError("caught penalty must exceed the repetition penalty")

    def step_reward(self, role: str) -> float:
        return self.predator_step if role == PREDATOR else self.prey_step


DEFAULT_REWARDS = TagRewards()

STEP_REWARD = {PREDATOR: DEFAULT_REWARDS.predator_step,
               PREY: DEFAULT_REWARDS.prey_step}
CATCH_REWARD = DEFAULT_REWARDS.catch
CAUGHT_REWARD = DEFAULT_REWARDS.caught
REPEAT_PENALTY = DEFAULT_REWARDS.repeat

OCTANTS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")


@dataclass(frozen=True)
class TagState:
    agent_pos: tuple[int, int]
    opponent_pos: tuple[int, int]
    agent_role: str
    life_cycle_index: int = 0
    step_in_cycle: int = 0
    last_actions: tuple[int, ...] = ()
    rows: int = ROWS
    cols: int = COLS
    steps_per_cycle: int = STEPS_PER_CYCLE
    specialization: str | None = None


@dataclass(frozen=True)
class StepRecord:
    step: int
    role: str
    action: int
    reward: float
    terminal: bool


def format_record(r: StepRecord) -> str:
    return f"{r.step},{r.role},{r.action},{r.reward:.10g},{int(r.terminal)}"


def parse_log(text: str) -> list[StepRecord]:
    records = []
    for line in text.splitlines():
        if not line.strip():
            continue
        step, role, action, reward, terminal = line.split(",")
        records.append(StepRecord(int(step), role, int(action), float(reward),
                                  terminal == "1"))
    return records


def _min_image(delta: int, size: int) -> int:
    # canonical representative in (-ceil(size/2), floor(size/2)]: ties go to +
    r = delta % size
    return r - size if r > size // 2 else r


def _displacement(a: tuple[int, int], b: tuple[int, int],
                  rows: int, cols: int) -> tuple[int, int]:
    return _min_image(b[0] - a[0], rows), _min_image(b[1] - a[1], cols)


def _contact(a: tuple[int, int], b: tuple[int, int], rows: int, cols: int) -> bool:
    dr, dc = _displacement(a, b, rows, cols)
    return abs(dr) + abs(dc) <= 1


def _move(pos: tuple[int, int], action: int, rows: int, cols: int) -> tuple[int, int]:
    dr, dc = ACTIONS[action]
    return (pos[0] + dr) % rows, (pos[1] + dc) % cols


def _place_pair(rng: np.random.Generator, rows: int, cols: int):
    """Uniform distinct pair that is not already in contact."""
    while True:
        a = (int(rng.integers(rows)), int(rng.integers(cols)))
        b = (int(rng.integers(rows)), int(rng.integers(cols)))
        if not _contact(a, b, rows, cols):
            return a, b


def tag_reset(rng: np.random.Generator, specialization: str | None = None,
              rows: int = ROWS, cols: int = COLS,
              steps_per_cycle: int = STEPS_PER_CYCLE) -> TagState:
    """Fresh episode state; the dual-role game starts as prey."""
    if specialization not in (None, PREY, PREDATOR):
        raise ValueError(f"unknown specialization {specialization!r}")
    agent, opponent = _place_pair(rng, rows, cols)
    return TagState(agent_pos=agent, opponent_pos=opponent,
                    agent_role=specialization or PREY,
                    rows=rows, cols=cols, steps_per_cycle=steps_per_cycle,
                    specialization=specialization)


def octant_index(dr: int, dc: int) -> int:
    """Compass octant of a displacement; North means decreasing row.

    Integer displacements never land exactly on a 22.5-degree sector
    boundary (tan 22.5 is irrational), so the floor is unambiguous.
    """
    theta = math.degrees(math.atan2(dc, -dr))
    return int(((theta + 22.5) % 360.0) // 45.0)


def tag_observe(state: TagState, permutation: np.ndarray | None = None) -> np.ndarray:
    """17 indicators: 3x3 opponent-occupancy window, then the octant one-hot.

    `permutation`, when given, reorders the slots; experiments draw one
    permutation at the start and keep it for every member and generation.
    """
    obs = np.zeros(OBS_SIZE)
    dr, dc = _displacement(state.agent_pos, state.opponent_pos,
                           state.rows, state.cols)
    if abs(dr) <= 1 and abs(dc) <= 1:
        obs[(dr + 1) * 3 + (dc + 1)] = 1.0
    obs[9 + octant_index(dr, dc)] = 1.0
    return obs[permutation] if permutation is not None else obs


def _greedy_opponent_action(state: TagState, agent_pos: tuple[int, int]) -> int:
    """Predator opponents minimize, prey opponents maximize, post-move
    minimum-image Euclidean distance; ties go to the lower action index.
    Squared distances are integers, so comparisons are exact."""
    minimize = state.agent_role == PREY
    best_action, best_d2 = 0, None
    for action in range(len(ACTIONS)):
        pos = _move(state.opponent_pos, action, state.rows, state.cols)
        dr, dc = _displacement(pos, agent_pos, state.rows, state.cols)
        d2 = dr * dr + dc * dc
        if best_d2 is None or (d2 < best_d2 if minimize else d2 > best_d2):
            best_action, best_d2 = action, d2
    return best_action


def tag_step(state: TagState, action: int, rng: np.random.Generator,
             rewards: TagRewards = DEFAULT_REWARDS) -> tuple[TagState, float, bool]:
    """Advance one step: agent moves, then the greedy opponent.

    Contact is checked after each sub-move. Returns the next state, the
    agent's reward, and whether the life-cycle ended (contact or budget).
    A cycle's end already applies the boundary: positions restart, counters
    and the action ring clear, and roles swap in the dual game. The rng is
    consumed only for restart placement.
    """
    if action not in (0, 1, 2):
        raise ValueError(f"invalid action index {action!r}")
    agent = _move(state.agent_pos, action, state.rows, state.cols)
    caught = _contact(agent, state.opponent_pos, state.rows, state.cols)
    opponent = state.opponent_pos
    if not caught:
        opp_action = _greedy_opponent_action(state, agent)
        opponent = _move(state.opponent_pos, opp_action, state.rows, state.cols)
        caught = _contact(agent, opponent, state.rows, state.cols)

    reward = rewards.step_reward(state.agent_role)
    if caught:
        reward += rewards.catch if state.agent_role == PREDATOR else rewards.caught
    ring = (state.last_actions + (action,))[-3:]
    if len(ring) == 3 and ring[0] == ring[1] == ring[2]:
        reward += rewards.repeat

    step_in_cycle = state.step_in_cycle + 1
    cycle_ended = caught or step_in_cycle >= state.steps_per_cycle
    if cycle_ended:
        next_role = state.agent_role
        if state.specialization is None:
            next_role = PREY if state.agent_role == PREDATOR else PREDATOR
        new_agent, new_opponent = _place_pair(rng, state.rows, state.cols)
        next_state = replace(state, agent_pos=new_agent, opponent_pos=new_opponent,
                             agent_role=next_role,
                             life_cycle_index=state.life_cycle_index + 1,
                             step_in_cycle=0, last_actions=())
    else:
        next_state = replace(state, agent_pos=agent, opponent_pos=opponent,
                             step_in_cycle=step_in_cycle, last_actions=ring)
    return next_state, reward, cycle_ended


def cycle_outcomes(records: list[StepRecord],
                   rewards: TagRewards = DEFAULT_REWARDS) -> list[tuple[str, bool]]:
    """(role, success) per completed life-cycle.

    The final reward of a cycle identifies its outcome exactly, because the
    catch/caught components dominate the repetition penalty: under the
    default table a catching predator ends on +9 or +4 and a failing one on
    -1 or -6; a prey ends on -9/-14 when caught and +1/-4 when it survives
    the budget. The decision threshold is the midpoint of the two outcome
    bands. A trailing cycle cut off by episode end has no terminal record
    and is dropped.
    """
    low = min(0.0, rewards.repeat)
    high = max(0.0, rewards.repeat)
    # midpoint between the worst winning reward and the best losing one
    predator_cut = (rewards.predator_step * 2 + rewards.catch + low + high) / 2
    prey_cut = (rewards.prey_step * 2 + rewards.caught + low + high) / 2
    outcomes = []
    for rec in records:
        if not rec.terminal:
            continue
        if rec.role == PREDATOR:
            outcomes.append((PREDATOR, rec.reward > predator_cut))
        else:
            outcomes.append((PREY, rec.reward > prey_cut))
    return outcomes


def tag_score(records: list[StepRecord],
              rewards: TagRewards = DEFAULT_REWARDS) -> float:
    """Fraction of completed life-cycles the agent won."""
    outcomes = cycle_outcomes(records, rewards)
    if not outcomes:
        return 0.0
    return sum(ok for _, ok in outcomes) / len(outcomes)


def tag_calibrate_samples(rng: np.random.Generator, sims: int = 1000,
                          rows: int = ROWS, cols: int = COLS,
                          steps_per_cycle: int = STEPS_PER_CYCLE) -> np.ndarray:
    """Per-simulation steps to a first meeting of two uniform random walkers.

    Both walkers use the 3-move set; one moves, then the other, with a
    same-cell check after each sub-move. A pair that has not met within the
    cycle budget restarts under the reset placement constraints.
    """
    samples = np.empty(sims, dtype=np.int64)
    for i in range(sims):
        a, b = _place_pair(rng, rows, cols)
        step = 0
        while True:
            step += 1
            a = _move(a, int(rng.integers(3)), rows, cols)
            if a == b:
                break
            b = _move(b, int(rng.integers(3)), rows, cols)
            if a == b:
                break
            if step >= steps_per_cycle:
                a, b = _place_pair(rng, rows, cols)
                step = 0
        samples[i] = step
    return samples


def tag_calibrate(rng: np.random.Generator, sims: int = 1000, rows: int = ROWS,
                  cols: int = COLS, steps_per_cycle: int = STEPS_PER_CYCLE) -> float:
    """Mean first-meeting steps. The mean (about 10 steps) documents the
    reward scale: that many -1 step rewards balance one +10 catch bonus."""
    return float(tag_calibrate_samples(rng, sims, rows, cols,
                                       steps_per_cycle).mean())
