"""Generational loop: evaluate, select, reproduce, with controls and
random injections.

Population arithmetic for size n (a perfect square): alpha = sqrt(n) - 1
selected parents carry over each generation and produce alpha children each
by a single mutation; alpha fresh random genomes are injected; floor(n^(1/4))
controls persist from start to finish. Parents, children and injections
retrain from scratch every generation, controls keep their weights and
optimizer state. Every random draw comes from a stream keyed on
(master seed, generation, member id, purpose), so results are identical
whatever the worker count or completion order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import (ExperimentConfig, env_options_for, rl_kind, schedule_for,
                     specialization_for, task_shape, validate_config)
from .environments.mnist import MnistSet, mnist_batches, mnist_load
from .genome import (ConnectorGene, Genome, LayerGene, NodeRef, deserialize,
                     random_genome, serialize, stamp_lineage)
from .mutations import mutate
from .netexec import init_params, make_optimizer
from .netexec import compile as net_compile
from .phylogeny import CHILD, PARENT, PhyloTree
from .phylogeny import CONTROL as NODE_CONTROL
from .phylogeny import RANDOM as NODE_RANDOM
from .phylogeny import record_generation
from .trainer import Schedule, run_rl_generation, run_supervised_generation

log = logging.getLogger(__name__)

EVOLVED = "Evolved"
CONTROL = "Control"
RANDOM_INJECTED = "RandomInjected"

# purposes for per-member random streams
PURPOSE_GENOME = 0
PURPOSE_WEIGHTS = 1
PURPOSE_TRAIN = 2
PURPOSE_STREAM = 3

WORST_SCORE = float("-inf")
WORST_LOSS = float("inf")

METRICS_HEADER = ("generation,best_parent_score,mean_score,std_score,"
                  "control_score,best_ever_score,best_parent_loss,"
                  "control_loss,random_best_score,dominant_lineage_id,"
                  "batches_consumed")


def spawn_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed,
                                                        spawn_key=tuple(key)))


@dataclass
class Individual:
    id: int
    genome: Genome
    role: str
    birth_generation: int
    parent_id: Optional[int] = None
    score: Optional[float] = None
    loss: Optional[float] = None


@dataclass
class Population:
    generation: int
    members: list[Individual]
    n: int
    alpha: int
    n_ctrl: int

    def member(self, member_id: int) -> Individual:
        for m in self.members:
            if m.id == member_id:
                return m
        raise KeyError(member_id)

    def by_role(self, role: str) -> list[Individual]:
        return [m for m in self.members if m.role == role]


def population_arithmetic(n: int) -> tuple[int, int]:
    """(alpha, control count) for population size n."""
    root = math.isqrt(n)
    if n < 4 or root * root != n:
        raise ValueError(f"population size must be a perfect square >= 4, got {n}")
    return root - 1, math.isqrt(root)


def control_genome(num_inputs: int, num_outputs: int) -> Genome:
    """The non-evolving baseline: one linear output layer reading every input."""
    connectors = tuple(ConnectorGene(id=i, source=NodeRef.network_input(i),
                                     protected=True)
                       for i in range(num_inputs))
    layer = LayerGene(id=0, neuron_count=num_outputs, connectors=connectors,
                      protected_neuron_count=num_outputs, protected=True)
    return Genome(num_inputs=num_inputs, num_outputs=num_outputs,
                  layers=(layer,))


def init_population(config: ExperimentConfig) -> Population:
    """Generation 0: n - n_ctrl independent random genomes plus the controls."""
    alpha, n_ctrl = population_arithmetic(config.n)
    num_in, num_out = task_shape(config.task)
    members = []
    for member_id in range(config.n - n_ctrl):
        genome = random_genome(num_in, num_out,
                               spawn_rng(config.seed, 0, member_id, PURPOSE_GENOME))
        members.append(Individual(member_id, genome, EVOLVED, 0))
    for member_id in range(config.n - n_ctrl, config.n):
        members.append(Individual(member_id, control_genome(num_in, num_out),
                                  CONTROL, 0))
    return Population(0, members, config.n, alpha, n_ctrl)


def select_parents(population: Population, metric: str = "score") -> list[int]:
    """Ids of the alpha best non-control members, best first.

    metric "score" picks the highest scores, "loss" the lowest losses; ties
    go to the lower id either way.
    """
    candidates = population.by_role(EVOLVED) + population.by_role(RANDOM_INJECTED)
    if metric == "score":
        if any(m.score is None for m in candidates):
            raise ValueError("population has unscored members")
        key = lambda m: (-m.score, m.id)
    elif metric == "loss":
        if any(m.loss is None for m in candidates):
            raise ValueError("population has unscored members")
        key = lambda m: (m.loss, m.id)
    else:
        raise ValueError(f"unknown selection metric {metric!r}")
    return [m.id for m in sorted(candidates, key=key)[:population.alpha]]


def next_generation(population: Population, parent_ids: list[int],
                    config: ExperimentConfig, next_id: int) -> tuple[Population, int]:
    """Compose the following generation from the ranked parent ids.

    Parents are retained, each contributes alpha single-mutation children in
    rank order, alpha random genomes are injected, controls carry over. The
    composition overflows n by n_ctrl - 1 slots; the overflow is trimmed from
    the lowest-ranked parent's last child slots.
    """
    alpha, n_ctrl = population.alpha, population.n_ctrl
    if len(parent_ids) != alpha:
        raise ValueError(f"expected {alpha} parents, got {len(parent_ids)}")
    generation = population.generation + 1
    num_in, num_out = task_shape(config.task)
    members: list[Individual] = []
    for pid in parent_ids:
        # a retained injection joins the evolving pool; its lineage node
        # keeps the birth role, so origin statistics are unaffected
        members.append(replace(population.member(pid), role=EVOLVED,
                               score=None, loss=None))
    children_needed = population.n - 2 * alpha - n_ctrl
    slots = [pid for pid in parent_ids for _ in range(alpha)][:children_needed]
    for pid in slots:
        parent = population.member(pid)
        mutated = mutate(parent.genome,
                         spawn_rng(config.seed, generation, next_id, PURPOSE_GENOME))
        genome = stamp_lineage(mutated.genome, generation, pid)
        members.append(Individual(next_id, genome, EVOLVED, generation, pid))
        next_id += 1
    for _ in range(alpha):
        genome = random_genome(num_in, num_out,
                               spawn_rng(config.seed, generation, next_id,
                                         PURPOSE_GENOME))
        genome = stamp_lineage(genome, generation, None)
        members.append(Individual(next_id, genome, RANDOM_INJECTED, generation))
        next_id += 1
    for control in population.by_role(CONTROL):
        members.append(replace(control, score=None, loss=None))
    return Population(generation, members, population.n, alpha, n_ctrl), next_id


def record_population(tree: PhyloTree, population: Population) -> None:
    """Append this generation's newly born individuals to the lineage tree."""
    generation = population.generation
    pairs, roots = [], []
    for m in population.members:
        if m.birth_generation != generation:
            continue  # retained parents and controls already have nodes
        if m.parent_id is not None:
            pairs.append((m.parent_id, m.id, generation, CHILD))
        elif m.role == CONTROL:
            roots.append((m.id, generation, NODE_CONTROL))
        elif m.role == RANDOM_INJECTED:
            roots.append((m.id, generation, NODE_RANDOM))
        else:
            roots.append((m.id, generation, PARENT))
    record_generation(tree, pairs, roots)


# ------------------------------------------------------------------ workers

@dataclass
class EvalOutcome:
    member_id: int
    score: float
    loss: float
    batches: int
    exploitation_scores: list[float] = field(default_factory=list)
    role_scores: dict[str, float] = field(default_factory=dict)
    full_balance: bool = False
    params: Optional[np.ndarray] = None
    control_state: Optional[tuple] = None
    error: Optional[str] = None


_MNIST_CACHE: dict[str, MnistSet] = {}


def _mnist_train_set(directory: str) -> MnistSet:
    if directory not in _MNIST_CACHE:
        _MNIST_CACHE[directory] = mnist_load(directory, "train")
    return _MNIST_CACHE[directory]


def _evaluate_member(job) -> EvalOutcome:
    config, schedule, generation, member_id, genome_text, role, ctrl = job
    try:
        net = net_compile(deserialize(genome_text))
        if role == CONTROL and ctrl is not None:
            params, m, v, step = ctrl
            net.params[:] = params
            opt = make_optimizer(net, lr=config.learning_rate)
            opt.m[:] = m
            opt.v[:] = v
            opt.step = step
        else:
            init_params(net, spawn_rng(config.seed, generation, member_id,
                                       PURPOSE_WEIGHTS))
            opt = make_optimizer(net, lr=config.learning_rate)
        kind = rl_kind(config.task)
        if kind is None:
            stream = mnist_batches(_mnist_train_set(config.mnist_dir),
                                   schedule.batch_size,
                                   spawn_rng(config.seed, member_id,
                                             PURPOSE_STREAM))
            # position-addressed stream: this generation's window only
            for _ in range(generation * schedule.batches_per_generation):
                next(stream)
            sup = run_supervised_generation(net, opt, stream, schedule)
            outcome = EvalOutcome(member_id, score=sup.accuracy,
                                  loss=sup.mean_loss, batches=len(sup.losses))
        else:
            res = run_rl_generation(net, opt, kind, schedule,
                                    spawn_rng(config.seed, generation,
                                              member_id, PURPOSE_TRAIN),
                                    specialization=specialization_for(config.task),
                                    env_options=env_options_for(config),
                                    gamma=config.gamma)
            outcome = EvalOutcome(member_id, score=res.score,
                                  loss=float(np.mean(res.losses)) if res.losses
                                  else WORST_LOSS,
                                  batches=len(res.losses),
                                  exploitation_scores=res.exploitation_scores,
                                  role_scores=res.role_scores,
                                  full_balance=res.full_balance)
        outcome.params = net.params.copy()
        if role == CONTROL:
            outcome.control_state = (net.params.copy(), opt.m.copy(),
                                     opt.v.copy(), opt.step)
        return outcome
    except Exception as exc:  # member failure degrades to a sentinel score
        return EvalOutcome(member_id, WORST_SCORE, WORST_LOSS, 0,
                           error=f"{type(exc).__name__}: {exc}")


def evaluate_generation(population: Population, config: ExperimentConfig,
                        schedule: Schedule, control_state: dict[int, tuple],
                        executor: Optional[Executor] = None) -> list[EvalOutcome]:
    """Train and score every member; returns outcomes in member order.

    Weights reset per generation except for controls, which resume from
    `control_state` (updated in place). Fan-out to the executor cannot change
    results: streams are seed-keyed per member and outcomes are reduced in
    submission order.
    """
    jobs = [(config, schedule, population.generation, m.id,
             serialize(m.genome), m.role, control_state.get(m.id))
            for m in population.members]
    if executor is None:
        outcomes = [_evaluate_member(job) for job in jobs]
    else:
        outcomes = list(executor.map(_evaluate_member, jobs))
    for member, outcome in zip(population.members, outcomes):
        member.score = outcome.score
        member.loss = outcome.loss
        if outcome.error is not None:
            log.warning("member %d failed evaluation: %s",
                        member.id, outcome.error)
        if member.role == CONTROL and outcome.control_state is not None:
            control_state[member.id] = outcome.control_state
    return outcomes


# -------------------------------------------------------------- experiment

@dataclass
class MetricsRow:
    generation: int
    best_parent_score: float
    mean_score: float
    std_score: float
    control_score: float
    best_ever_score: float
    best_parent_loss: float
    control_loss: float
    random_best_score: float
    dominant_lineage_id: int
    batches_consumed: int


def format_metrics_row(row: MetricsRow) -> str:
    floats = (row.best_parent_score, row.mean_score, row.std_score,
              row.control_score, row.best_ever_score, row.best_parent_loss,
              row.control_loss, row.random_best_score)
    cells = [str(row.generation)] + [f"{v:.10g}" for v in floats] \
        + [str(row.dominant_lineage_id), str(row.batches_consumed)]
    return ",".join(cells)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    tree: PhyloTree
    best_genome: Genome
    best_params: np.ndarray
    best_id: int
    best_generation: int
    stopped_early: bool = False
    stop_reason: Optional[str] = None
    first_full_balance: Optional[tuple[int, int]] = None
    role_series: list[dict[str, float]] = field(default_factory=list)


def _dominant_lineage(tree: PhyloTree, population: Population) -> int:
    """Non-control root with the most members alive this generation;
    ties go to the lower root id."""
    counts: dict[int, int] = {}
    for m in population.members:
        node = tree.nodes[m.id]
        while node.parent_id is not None:
            node = tree.nodes[node.parent_id]
        if node.role != NODE_CONTROL:
            counts[node.id] = counts.get(node.id, 0) + 1
    return min(counts, key=lambda root_id: (-counts[root_id], root_id))


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Full generational run; `generations` rows (at least one: generation 0
    is always evaluated).

    Stops early when the task threshold is met: any member balancing the
    pole in at least 90% of its exploitation episodes for cart-pole, best
    training loss under 0.25 for the classification task. The pursuit game
    always runs the full horizon.
    """
    validate_config(config)
    if config.task == "mnist":
        if not config.mnist_dir:
            raise FileNotFoundError("mnist task needs a data directory "
                                    "(mnist_dir setting or FUNCNET_MNIST_DIR)")
        _mnist_train_set(config.mnist_dir)  # fail fast; workers inherit cache
    schedule = schedule_for(config)
    metric = "loss" if config.task == "mnist" else "score"
    population = init_population(config)
    tree = PhyloTree()
    record_population(tree, population)
    control_state: dict[int, tuple] = {}
    batches_cum: dict[int, int] = {}
    next_id = config.n
    rows: list[MetricsRow] = []
    role_series: list[dict[str, float]] = []
    best = None  # (metric value, generation, id, genome, params)
    best_ever = float("-inf")
    stop_reason = None
    first_full_balance = None
    total_generations = max(config.generations, 1)
    executor = (ProcessPoolExecutor(max_workers=config.workers)
                if config.workers > 1 else None)
    try:
        for generation in range(total_generations):
            outcomes = evaluate_generation(population, config, schedule,
                                           control_state, executor)
            by_id = {o.member_id: o for o in outcomes}
            parent_ids = select_parents(population, metric)
            parents = [population.member(pid) for pid in parent_ids]
            evolved = population.by_role(EVOLVED)
            controls = population.by_role(CONTROL)
            randoms = population.by_role(RANDOM_INJECTED)
            non_controls = evolved + randoms

            for control in controls:
                batches_cum[control.id] = batches_cum.get(control.id, 0) \
                    + by_id[control.id].batches
            gen_best = max(m.score for m in non_controls)
            best_ever = max(best_ever, gen_best)
            rows.append(MetricsRow(
                generation=generation,
                best_parent_score=_mean([p.score for p in parents]),
                mean_score=_mean([m.score for m in evolved]),
                std_score=float(np.std([m.score for m in evolved])),
                control_score=_mean([c.score for c in controls]),
                best_ever_score=best_ever,
                best_parent_loss=_mean([p.loss for p in parents]),
                control_loss=_mean([c.loss for c in controls]),
                random_best_score=max((m.score for m in randoms),
                                      default=float("nan")),
                dominant_lineage_id=_dominant_lineage(tree, population),
                batches_consumed=batches_cum[controls[0].id]))

            phase: dict[str, list[float]] = {}
            for p in parents:
                for role, value in by_id[p.id].role_scores.items():
                    phase.setdefault(role, []).append(value)
            role_series.append({role: _mean(vals) for role, vals in phase.items()})

            for m in non_controls:
                value = m.loss if metric == "loss" else -m.score
                if best is None or value < best[0]:
                    best = (value, generation, m.id, m.genome,
                            by_id[m.id].params.copy())

            balanced = [m.id for m in population.members
                        if by_id[m.id].full_balance]
            if balanced and first_full_balance is None:
                first_full_balance = (generation, min(balanced))
            if config.task == "cartpole":
                if config.stop_on_full_balance and balanced:
                    stop_reason = "full_balance"
                elif any(o.exploitation_scores
                         and np.mean([s >= 1.0 for s in o.exploitation_scores]) >= 0.9
                         for o in outcomes):
                    stop_reason = "balance_threshold"
            elif config.task == "mnist":
                if min(m.loss for m in non_controls) < 0.25:
                    stop_reason = "loss_threshold"
            if stop_reason is not None:
                break
            if generation < total_generations - 1:
                population, next_id = next_generation(population, parent_ids,
                                                      config, next_id)
                record_population(tree, population)
    finally:
        if executor is not None:
            executor.shutdown()
    _, best_generation, best_id, best_genome, best_params = best
    return ExperimentResult(config=config, rows=rows, tree=tree,
                            best_genome=best_genome, best_params=best_params,
                            best_id=best_id, best_generation=best_generation,
                            stopped_early=stop_reason is not None,
                            stop_reason=stop_reason,
                            first_full_balance=first_full_balance,
                            role_series=role_series)
