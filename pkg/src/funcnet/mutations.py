"""The seven structural mutations and the one-per-child dispatcher.

Every operation returns a new genome (genomes are immutable) whose protected
elements are untouched, and every result still satisfies the structural
rules in :mod:`funcnet.genome`. An operation that cannot find a concrete
valid edit after ``RETRY_BUDGET`` samples raises :class:`MutationInfeasible`;
``mutate`` treats that as "this kind is currently unavailable" and falls back
to another kind, degrading to an explicit no-op only when nothing at all is
feasible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .genome import MAX_LAYERS, ConnectorGene, Genome, LayerGene, NodeRef

RETRY_BUDGET = 64

ADD_KINDS = ("connection", "neuron", "layer")
REMOVE_KINDS = ("duplicate_connection", "neuron")
REARRANGE_KINDS = ("swap", "move")
ALL_KINDS = ("add_connection", "add_neuron", "add_layer",
             "remove_duplicate_connection", "remove_neuron",
             "swap", "move")


class MutationInfeasible(Exception):
    """No concrete edit of the requested kind exists (or none was found)."""


@dataclass(frozen=True)
class MutationResult:
    genome: Genome
    kind: str  # one of ALL_KINDS or "no_op"
    detail: str = ""


def _source_pool(genome: Genome) -> list[NodeRef]:
    """All legal connector sources: network inputs and non-output neurons."""
    pool = [NodeRef.network_input(i) for i in range(genome.num_inputs)]
    for layer in genome.hidden_layers():
        pool.extend(NodeRef.neuron(layer.id, i) for i in range(layer.neuron_count))
    return pool


def _replace_layer(genome: Genome, position: int, layer: LayerGene) -> Genome:
    layers = list(genome.layers)
    layers[position] = layer
    return replace(genome, layers=tuple(layers))


def _forward_count(genome: Genome, position: int, connectors) -> int:
    return sum(1 for c in connectors if not genome.is_recurrent(position, c.source))


def _add_connection(genome: Genome, rng: np.random.Generator) -> MutationResult:
    # always feasible: any layer can take one more slot from any source
    pool = _source_pool(genome)
    pos = int(rng.integers(0, len(genome.layers)))
    source = pool[int(rng.integers(0, len(pool)))]
    layer = genome.layers[pos]
    conn = ConnectorGene(id=genome.next_connector_id(), source=source)
    child = _replace_layer(genome, pos, replace(layer, connectors=layer.connectors + (conn,)))
    return MutationResult(child, "add_connection",
                          f"conn {conn.id} on layer {layer.id} <- {source.text()}")


def _add_neuron(genome: Genome, rng: np.random.Generator) -> MutationResult:
    hidden = genome.hidden_layers()
    if not hidden:
        raise MutationInfeasible("no hidden layer to widen")
    pick = int(rng.integers(0, len(hidden)))
    target = hidden[pick]
    pos = genome.layer_position(target.id)
    new_index = target.neuron_count
    child = _replace_layer(genome, pos, replace(target, neuron_count=new_index + 1))
    # wire one consumer so the new output is not a dead end
    consumer_pos = int(rng.integers(0, len(child.layers)))
    consumer = child.layers[consumer_pos]
    conn = ConnectorGene(id=child.next_connector_id(),
                         source=NodeRef.neuron(target.id, new_index))
    child = _replace_layer(child, consumer_pos,
                           replace(consumer, connectors=consumer.connectors + (conn,)))
    return MutationResult(child, "add_neuron",
                          f"n:{target.id}:{new_index}, consumer conn {conn.id} "
                          f"on layer {consumer.id}")


def _add_layer(genome: Genome, rng: np.random.Generator) -> MutationResult:
    if len(genome.layers) >= MAX_LAYERS:
        raise MutationInfeasible("layer cap reached")
    insert_at = int(rng.integers(0, len(genome.layers)))  # always before the output layer
    # the new layer's own slot must read an input or an earlier layer
    pool = [NodeRef.network_input(i) for i in range(genome.num_inputs)]
    for layer in genome.layers[:insert_at]:
        pool.extend(NodeRef.neuron(layer.id, i) for i in range(layer.neuron_count))
    new_id = genome.next_layer_id()
    inbound = ConnectorGene(id=genome.next_connector_id(),
                            source=pool[int(rng.integers(0, len(pool)))])
    new_layer = LayerGene(id=new_id, neuron_count=1, connectors=(inbound,))
    layers = list(genome.layers)
    layers.insert(insert_at, new_layer)
    child = replace(genome, layers=tuple(layers))
    consumer_pos = int(rng.integers(0, len(child.layers)))
    consumer = child.layers[consumer_pos]
    conn = ConnectorGene(id=child.next_connector_id(), source=NodeRef.neuron(new_id, 0))
    child = _replace_layer(child, consumer_pos,
                           replace(consumer, connectors=consumer.connectors + (conn,)))
    return MutationResult(child, "add_layer",
                          f"layer {new_id} at position {insert_at}, consumer conn "
                          f"{conn.id} on layer {consumer.id}")


def _remove_duplicate(genome: Genome, rng: np.random.Generator) -> MutationResult:
    if genome.connector_count() - 1 < genome.non_output_neuron_count() + genome.num_inputs:
        raise MutationInfeasible("connector budget at minimum")
    groups: dict[tuple[int, str], list[ConnectorGene]] = {}
    for layer, conn in genome.all_connectors():
        groups.setdefault((layer.id, conn.source.text()), []).append(conn)
    candidates = [(lid, c) for (lid, _), conns in groups.items() if len(conns) >= 2
                  for c in conns if not c.protected]
    if not candidates:
        raise MutationInfeasible("no unprotected duplicate connector")
    lid, conn = candidates[int(rng.integers(0, len(candidates)))]
    pos = genome.layer_position(lid)
    layer = genome.layers[pos]
    kept = tuple(c for c in layer.connectors if c.id != conn.id)
    child = _replace_layer(genome, pos, replace(layer, connectors=kept))
    return MutationResult(child, "remove_duplicate_connection",
                          f"conn {conn.id} on layer {lid} (dup of {conn.source.text()})")


def _remove_neuron(genome: Genome, rng: np.random.Generator) -> MutationResult:
    candidates = [(layer, i)
                  for layer in genome.hidden_layers() if layer.neuron_count >= 2
                  for i in range(layer.protected_neuron_count, layer.neuron_count)]
    if not candidates:
        raise MutationInfeasible("no removable neuron")
    n_i = genome.num_inputs
    consumers: dict[tuple[int, int], list[tuple[int, int, bool]]] = {}
    for layer, conn in genome.all_connectors():
        if not conn.source.is_input:
            key = (conn.source.layer_id, conn.source.neuron_index)
            consumers.setdefault(key, []).append((layer.id, conn.id, conn.protected))
    for _ in range(RETRY_BUDGET):
        target, idx = candidates[int(rng.integers(0, len(candidates)))]
        hits = consumers.get((target.id, idx), [])
        if any(prot for _, _, prot in hits):
            continue
        victims = {cid for _, cid, _ in hits}
        removed_per_layer: dict[int, int] = {}
        for lid, _, _ in hits:
            removed_per_layer[lid] = removed_per_layer.get(lid, 0) + 1
        budget = genome.connector_count() - len(victims)
        if budget < (genome.non_output_neuron_count() - 1) + n_i:
            continue
        ok = True
        for pos, layer in enumerate(genome.layers):
            lost = removed_per_layer.get(layer.id, 0)
            if not lost:
                continue
            survivors = [c for c in layer.connectors if c.id not in victims]
            if not survivors or _forward_count(genome, pos, survivors) == 0:
                ok = False
                break
        if not ok:
            continue

        def remap(src: NodeRef) -> NodeRef:
            # indices above the removed neuron in the same layer shift down
            if (not src.is_input and src.layer_id == target.id
                    and src.neuron_index > idx):
                return NodeRef.neuron(target.id, src.neuron_index - 1)
            return src

        new_layers = []
        for layer in genome.layers:
            conns = tuple(replace(c, source=remap(c.source))
                          for c in layer.connectors if c.id not in victims)
            count = layer.neuron_count - 1 if layer.id == target.id else layer.neuron_count
            new_layers.append(replace(layer, neuron_count=count, connectors=conns))
        child = replace(genome, layers=tuple(new_layers))
        return MutationResult(child, "remove_neuron",
                              f"n:{target.id}:{idx} and {len(victims)} consumer connector(s)")
    raise MutationInfeasible("no neuron removal survives the structure rules")


def swap_connector_sources(genome: Genome, id_a: int, id_b: int) -> Genome:
    """Exchange the sources of two connectors, no validity checks (helper)."""
    src = {c.id: c.source for _, c in genome.all_connectors()}
    mapping = {id_a: src[id_b], id_b: src[id_a]}
    layers = tuple(replace(layer, connectors=tuple(
        replace(c, source=mapping[c.id]) if c.id in mapping else c
        for c in layer.connectors)) for layer in genome.layers)
    return replace(genome, layers=layers)


def _swap(genome: Genome, rng: np.random.Generator) -> MutationResult:
    movable = [(pos, c) for pos, layer in enumerate(genome.layers)
               for c in layer.connectors if not c.protected]
    if len(movable) < 2:
        raise MutationInfeasible("fewer than two unprotected connectors")
    for _ in range(RETRY_BUDGET):
        i, j = rng.choice(len(movable), size=2, replace=False)
        pos_a, conn_a = movable[int(i)]
        pos_b, conn_b = movable[int(j)]
        if conn_a.source == conn_b.source:
            continue
        child = swap_connector_sources(genome, conn_a.id, conn_b.id)
        ok = all(_forward_count(child, pos, child.layers[pos].connectors) > 0
                 for pos in {pos_a, pos_b})
        if ok:
            return MutationResult(child, "swap",
                                  f"conn {conn_a.id} <-> conn {conn_b.id}")
    raise MutationInfeasible("no valid swap pair found")


def _move(genome: Genome, rng: np.random.Generator) -> MutationResult:
    movable = [(pos, c) for pos, layer in enumerate(genome.layers)
               for c in layer.connectors if not c.protected]
    if not movable:
        raise MutationInfeasible("no unprotected connector")
    pool = _source_pool(genome)
    consumers: dict[str, int] = {}
    for _, conn in genome.all_connectors():
        key = conn.source.text()
        consumers[key] = consumers.get(key, 0) + 1
    for _ in range(RETRY_BUDGET):
        pos, conn = movable[int(rng.integers(0, len(movable)))]
        if consumers[conn.source.text()] < 2:
            continue  # reassigning would orphan the old source
        new_source = pool[int(rng.integers(0, len(pool)))]
        if new_source == conn.source:
            continue
        layer = genome.layers[pos]
        new_conns = tuple(replace(c, source=new_source) if c.id == conn.id else c
                          for c in layer.connectors)
        if _forward_count(genome, pos, new_conns) == 0:
            continue
        child = _replace_layer(genome, pos, replace(layer, connectors=new_conns))
        return MutationResult(child, "move",
                              f"conn {conn.id}: {conn.source.text()} -> {new_source.text()}")
    raise MutationInfeasible("no valid source reassignment found")


_DISPATCH = {
    "add_connection": _add_connection,
    "add_neuron": _add_neuron,
    "add_layer": _add_layer,
    "remove_duplicate_connection": _remove_duplicate,
    "remove_neuron": _remove_neuron,
    "swap": _swap,
    "move": _move,
}


def mutate_add(genome: Genome, kind: str, rng: np.random.Generator) -> MutationResult:
    if kind not in ADD_KINDS:
        raise ValueError(f"unknown add kind {kind!r}")
    return _DISPATCH[f"add_{kind}"](genome, rng)


def mutate_remove(genome: Genome, kind: str, rng: np.random.Generator) -> MutationResult:
    if kind not in REMOVE_KINDS:
        raise ValueError(f"unknown remove kind {kind!r}")
    return _DISPATCH[f"remove_{kind}" if kind == "neuron" else "remove_duplicate_connection"](
        genome, rng)


def mutate_rearrange(genome: Genome, kind: str, rng: np.random.Generator) -> MutationResult:
    if kind not in REARRANGE_KINDS:
        raise ValueError(f"unknown rearrange kind {kind!r}")
    return _DISPATCH[kind](genome, rng)


def mutate(genome: Genome, rng: np.random.Generator) -> MutationResult:
    """Apply exactly one mutation, kind uniform over currently feasible kinds.

    Kinds that turn out to have no concrete valid edit are dropped and the
    draw repeats over the rest; with nothing feasible the child is an
    unchanged copy flagged ``no_op``.
    """
    remaining = list(ALL_KINDS)
    while remaining:
        kind = remaining[int(rng.integers(0, len(remaining)))]
        try:
            return _DISPATCH[kind](genome, rng)
        except MutationInfeasible:
            remaining.remove(kind)
    return MutationResult(genome, "no_op", "no feasible mutation")
