"""Graph genomes describing feed-forward network topologies.

A genome is an ordered list of layers. Each layer owns a list of connectors
(its input slots); a connector is wired to exactly one source node, either a
network input or the output of a neuron somewhere in the genome. Within a
layer, connectivity is dense: every neuron of the layer reads every connector
slot. A connector whose source layer sits at the same or a later position is
recurrent: at execution time it reads that layer's previous-step output.

Structural rules enforced here and preserved by every mutation:

* at most ``MAX_LAYERS`` layers; the final layer is the output layer and its
  width never changes;
* every layer has at least one neuron and one connector, and at least one
  connector wired to an earlier position or a network input (so a forward
  pass is computable);
* no dead ends: every network input and every non-output neuron feeds at
  least one connector;
* total connector count stays >= (non-output neuron count) + (input count);
* elements marked protected (everything created at generation 0 of a
  lineage) are never deleted or rewired.

Neurons are addressed ``(layer_id, index)``. Protected neurons always occupy
an index prefix of their layer, so their addresses survive later removals of
unprotected neurons above them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

MAX_LAYERS = 32


class GenomeParseError(ValueError):
    """Raised by deserialize() on a malformed document; carries the line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class InvalidGenomeError(ValueError):
    """Raised when an operation requiring a valid genome receives a broken one."""

    def __init__(self, violations: list["Violation"]):
        super().__init__("; ".join(str(v) for v in violations) or "invalid genome")
        self.violations = violations


@dataclass(frozen=True)
class NodeRef:
    """Source endpoint of a connector: one network input or one neuron output.

    Exactly one addressing form is populated. Text form is ``in:<i>`` for
    inputs and ``n:<layer_id>:<neuron_index>`` for neuron outputs.
    """

    input_index: Optional[int] = None
    layer_id: Optional[int] = None
    neuron_index: Optional[int] = None

    @classmethod
    def network_input(cls, index: int) -> "NodeRef":
        return cls(input_index=index)

    @classmethod
    def neuron(cls, layer_id: int, neuron_index: int) -> "NodeRef":
        return cls(layer_id=layer_id, neuron_index=neuron_index)

    @property
    def is_input(self) -> bool:
        return self.input_index is not None

    def text(self) -> str:
        if self.is_input:
            return f"in:{self.input_index}"
        return f"n:{self.layer_id}:{self.neuron_index}"

    @classmethod
    def parse(cls, token: str) -> "NodeRef":
        if token.startswith("in:"):
            return cls.network_input(int(token[3:]))
        if token.startswith("n:"):
            lid, _, idx = token[2:].partition(":")
            if not idx:
                raise ValueError(f"bad node reference {token!r}")
            return cls.neuron(int(lid), int(idx))
        raise ValueError(f"bad node reference {token!r}")


@dataclass(frozen=True)
class ConnectorGene:
    id: int
    source: NodeRef
    protected: bool = False


@dataclass(frozen=True)
class LayerGene:
    """One dense layer: `neuron_count` neurons all reading every connector slot.

    The first `protected_neuron_count` neuron indices are protected; additions
    append above the prefix and removals never touch it.
    """

    id: int
    neuron_count: int
    connectors: tuple[ConnectorGene, ...]
    protected_neuron_count: int = 0
    protected: bool = False


@dataclass(frozen=True)
class Genome:
    num_inputs: int
    num_outputs: int
    layers: tuple[LayerGene, ...]  # evaluation order; last layer is the output layer
    born_generation: int = 0
    parent_id: Optional[int] = None

    @property
    def output_layer(self) -> LayerGene:
        return self.layers[-1]

    def hidden_layers(self) -> tuple[LayerGene, ...]:
        return self.layers[:-1]

    def layer_position(self, layer_id: int) -> int:
        for pos, layer in enumerate(self.layers):
            if layer.id == layer_id:
                return pos
        raise KeyError(f"no layer {layer_id}")

    def layer_by_id(self, layer_id: int) -> LayerGene:
        return self.layers[self.layer_position(layer_id)]

    def non_output_neuron_count(self) -> int:
        return sum(layer.neuron_count for layer in self.layers[:-1])

    def connector_count(self) -> int:
        return sum(len(layer.connectors) for layer in self.layers)

    def all_connectors(self) -> Iterator[tuple[LayerGene, ConnectorGene]]:
        for layer in self.layers:
            for conn in layer.connectors:
                yield layer, conn

    def next_connector_id(self) -> int:
        return 1 + max((c.id for _, c in self.all_connectors()), default=-1)

    def next_layer_id(self) -> int:
        return 1 + max(layer.id for layer in self.layers)

    def is_recurrent(self, layer_position: int, source: NodeRef) -> bool:
        """A neuron source at the same or a later position reads t-1 memory."""
        if source.is_input:
            return False
        return self.layer_position(source.layer_id) >= layer_position


@dataclass(frozen=True)
class Violation:
    rule: str
    element: str
    message: str

    def __str__(self) -> str:
        return f"{self.rule}[{self.element}]: {self.message}"


def validate(genome: Genome) -> list[Violation]:
    """Check every structural invariant; returns one record per breach.

    Violations are data, not exceptions: deserialized documents may carry any
    defect and still be inspected.
    """
    out: list[Violation] = []
    if genome.num_inputs < 1 or genome.num_outputs < 1:
        out.append(Violation("bad_shape", "genome",
                             f"inputs={genome.num_inputs} outputs={genome.num_outputs}"))
        return out
    if not genome.layers:
        out.append(Violation("no_layers", "genome", "genome has no layers"))
        return out
    if len(genome.layers) > MAX_LAYERS:
        out.append(Violation("too_many_layers", "genome",
                             f"{len(genome.layers)} layers exceeds {MAX_LAYERS}"))
    if genome.output_layer.neuron_count != genome.num_outputs:
        out.append(Violation("output_width", f"layer {genome.output_layer.id}",
                             f"output layer has {genome.output_layer.neuron_count} neurons, "
                             f"expected {genome.num_outputs}"))

    seen_layer_ids: set[int] = set()
    seen_conn_ids: set[int] = set()
    positions = {layer.id: pos for pos, layer in enumerate(genome.layers)}
    output_id = genome.output_layer.id

    for pos, layer in enumerate(genome.layers):
        if layer.id in seen_layer_ids:
            out.append(Violation("duplicate_id", f"layer {layer.id}", "layer id reused"))
        seen_layer_ids.add(layer.id)
        if layer.neuron_count < 1:
            out.append(Violation("empty_layer", f"layer {layer.id}", "layer has no neurons"))
        if not layer.connectors:
            out.append(Violation("no_connectors", f"layer {layer.id}", "layer has no connectors"))
        if not 0 <= layer.protected_neuron_count <= layer.neuron_count:
            out.append(Violation("protected_prefix", f"layer {layer.id}",
                                 f"protected prefix {layer.protected_neuron_count} outside "
                                 f"[0, {layer.neuron_count}]"))
        forward = 0
        for conn in layer.connectors:
            if conn.id in seen_conn_ids:
                out.append(Violation("duplicate_id", f"conn {conn.id}", "connector id reused"))
            seen_conn_ids.add(conn.id)
            src = conn.source
            if src.is_input:
                if not 0 <= src.input_index < genome.num_inputs:
                    out.append(Violation("bad_source", f"conn {conn.id}",
                                         f"input index {src.input_index} out of range"))
                else:
                    forward += 1
                continue
            if src.layer_id not in positions:
                out.append(Violation("bad_source", f"conn {conn.id}",
                                     f"source layer {src.layer_id} does not exist"))
                continue
            if src.layer_id == output_id:
                out.append(Violation("bad_source", f"conn {conn.id}",
                                     "output neurons are terminal and cannot be sources"))
                continue
            src_layer = genome.layers[positions[src.layer_id]]
            if not 0 <= src.neuron_index < src_layer.neuron_count:
                out.append(Violation("bad_source", f"conn {conn.id}",
                                     f"neuron {src.neuron_index} out of range in layer "
                                     f"{src.layer_id}"))
                continue
            if positions[src.layer_id] < pos:
                forward += 1
        if layer.connectors and forward == 0:
            out.append(Violation("no_forward_path", f"layer {layer.id}",
                                 "no connector reads an input or an earlier layer"))

    consumed_inputs: set[int] = set()
    consumed_neurons: set[tuple[int, int]] = set()
    for _, conn in genome.all_connectors():
        src = conn.source
        if src.is_input:
            consumed_inputs.add(src.input_index)
        else:
            consumed_neurons.add((src.layer_id, src.neuron_index))
    for i in range(genome.num_inputs):
        if i not in consumed_inputs:
            out.append(Violation("dead_end", f"in:{i}", "network input feeds no connector"))
    for layer in genome.hidden_layers():
        for i in range(layer.neuron_count):
            if (layer.id, i) not in consumed_neurons:
                out.append(Violation("dead_end", f"n:{layer.id}:{i}",
                                     "neuron output feeds no connector"))

    n_c = genome.connector_count()
    floor = genome.non_output_neuron_count() + genome.num_inputs
    if n_c < floor:
        out.append(Violation("connector_budget", "genome",
                             f"{n_c} connectors < minimum {floor}"))
    return out


@dataclass
class AdjacencyView:
    """0/1 matrix over all nodes; row = source, column = destination.

    Node order: network inputs, then per layer in evaluation order its
    connectors followed by its neurons. Edges are source -> connector for
    every connector and connector -> neuron for every neuron of the
    connector's layer (dense intra-layer wiring).
    """

    matrix: np.ndarray
    labels: list[str]
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def edge_set(self) -> set[tuple[str, str]]:
        rows, cols = np.nonzero(self.matrix)
        return {(self.labels[r], self.labels[c]) for r, c in zip(rows, cols)}


def genome_edge_set(genome: Genome) -> set[tuple[str, str]]:
    """The genome's edges in the same label vocabulary as AdjacencyView."""
    edges: set[tuple[str, str]] = set()
    for layer, conn in genome.all_connectors():
        edges.add((conn.source.text(), f"c:{conn.id}"))
        for i in range(layer.neuron_count):
            edges.add((f"c:{conn.id}", f"n:{layer.id}:{i}"))
    return edges


def to_adjacency(genome: Genome) -> AdjacencyView:
    violations = validate(genome)
    if violations:
        raise InvalidGenomeError(violations)
    labels = [f"in:{i}" for i in range(genome.num_inputs)]
    for layer in genome.layers:
        labels.extend(f"c:{c.id}" for c in layer.connectors)
        labels.extend(f"n:{layer.id}:{i}" for i in range(layer.neuron_count))
    index = {label: i for i, label in enumerate(labels)}
    mat = np.zeros((len(labels), len(labels)), dtype=np.int8)
    for layer, conn in genome.all_connectors():
        mat[index[conn.source.text()], index[f"c:{conn.id}"]] = 1
        for i in range(layer.neuron_count):
            mat[index[f"c:{conn.id}"], index[f"n:{layer.id}:{i}"]] = 1
    return AdjacencyView(matrix=mat, labels=labels, _index=index)


# --- random construction ---------------------------------------------------

def random_genome(num_inputs: int, num_outputs: int, rng: np.random.Generator) -> Genome:
    """Draw a fresh valid genome; every element it creates is protected.

    Non-output neuron total N_p ~ U[1, num_inputs + num_outputs], spread over
    H ~ U[1, min(N_p, MAX_LAYERS - 1)] hidden layers by a uniform composition.
    Wiring proceeds in three passes (one forward connector per layer, one
    consumer per unused input, one consumer per unused neuron) which together
    guarantee validity, then a few extra uniformly sourced connectors.
    """
    if num_inputs < 1 or num_outputs < 1:
        raise ValueError("need at least one input and one output")
    n_p = int(rng.integers(1, num_inputs + num_outputs + 1))
    n_hidden = int(rng.integers(1, min(n_p, MAX_LAYERS - 1) + 1))
    # uniform composition of n_p into n_hidden positive parts
    if n_hidden == 1:
        counts = [n_p]
    else:
        cuts = np.sort(rng.choice(n_p - 1, size=n_hidden - 1, replace=False)) + 1
        bounds = np.concatenate(([0], cuts, [n_p]))
        counts = list(np.diff(bounds).astype(int))
    widths = counts + [num_outputs]
    n_layers = n_hidden + 1

    # source pool: inputs are 0..num_inputs-1, then hidden neurons flattened
    # in layer order. Output neurons are terminal and never appear.
    neuron_base = [0] * n_hidden
    acc = num_inputs
    for pos in range(n_hidden):
        neuron_base[pos] = acc
        acc += widths[pos]
    pool_size = acc

    def decode(code: int) -> NodeRef:
        if code < num_inputs:
            return NodeRef.network_input(code)
        code -= num_inputs
        for pos in range(n_hidden):
            if code < widths[pos]:
                return NodeRef.neuron(pos, code)
            code -= widths[pos]
        raise AssertionError("source code out of range")

    conn_sources: list[list[int]] = [[] for _ in range(n_layers)]
    consumed = np.zeros(pool_size, dtype=bool)

    # pass 1: one forward connector per layer
    for pos in range(n_layers):
        limit = neuron_base[pos] if pos < n_hidden else pool_size
        code = int(rng.integers(0, limit))
        conn_sources[pos].append(code)
        consumed[code] = True

    # pass 2: a consumer for every unused input
    for code in np.flatnonzero(~consumed[:num_inputs]):
        conn_sources[int(rng.integers(0, n_layers))].append(int(code))
    # pass 3: a consumer for every unused hidden neuron (may be recurrent)
    for code in np.flatnonzero(~consumed[num_inputs:]) + num_inputs:
        conn_sources[int(rng.integers(0, n_layers))].append(int(code))

    # a few extras, uniform over all valid sources
    n_extra = int(rng.integers(0, 1 + (num_inputs + n_p) // 8 + 1))
    for _ in range(n_extra):
        conn_sources[int(rng.integers(0, n_layers))].append(int(rng.integers(0, pool_size)))

    layers = []
    next_cid = 0
    for pos in range(n_layers):
        conns = []
        for code in conn_sources[pos]:
            conns.append(ConnectorGene(id=next_cid, source=decode(code), protected=True))
            next_cid += 1
        layers.append(LayerGene(id=pos, neuron_count=widths[pos],
                                connectors=tuple(conns),
                                protected_neuron_count=widths[pos], protected=True))
    return Genome(num_inputs=num_inputs, num_outputs=num_outputs, layers=tuple(layers))


# --- serialization ----------------------------------------------------------

FORMAT_TAG = "funcnet-genome"
FORMAT_VERSION = 1


def serialize(genome: Genome) -> str:
    """Canonical text form; layers in evaluation order, connectors in slot order."""
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}",
             f"inputs {genome.num_inputs}",
             f"outputs {genome.num_outputs}",
             f"born {genome.born_generation}",
             f"parent {'-' if genome.parent_id is None else genome.parent_id}"]
    for layer in genome.layers:
        lines.append(f"layer {layer.id} neurons {layer.neuron_count} "
                     f"protected_neurons {layer.protected_neuron_count} "
                     f"protected {int(layer.protected)}")
        for conn in layer.connectors:
            lines.append(f"conn {conn.id} {conn.source.text()} protected {int(conn.protected)}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _header_int(parts: list[str], key: str, line_no: int) -> int:
    if len(parts) != 2 or parts[0] != key:
        raise GenomeParseError(line_no, f"expected '{key} <int>'")
    try:
        return int(parts[1])
    except ValueError:
        raise GenomeParseError(line_no, f"bad integer {parts[1]!r}") from None


def deserialize(text: str) -> Genome:
    """Parse the canonical text form. Purely syntactic: a parsed genome may
    still fail validate(), by design."""
    lines = text.splitlines()
    if not lines:
        raise GenomeParseError(1, "empty document")
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_TAG:
        raise GenomeParseError(1, f"expected '{FORMAT_TAG} <version>' header")
    if head[1] != str(FORMAT_VERSION):
        raise GenomeParseError(1, f"unsupported version {head[1]!r}")
    if len(lines) < 6:
        raise GenomeParseError(len(lines), "truncated document")

    num_inputs = _header_int(lines[1].split(), "inputs", 2)
    num_outputs = _header_int(lines[2].split(), "outputs", 3)
    born = _header_int(lines[3].split(), "born", 4)
    parent_parts = lines[4].split()
    if len(parent_parts) != 2 or parent_parts[0] != "parent":
        raise GenomeParseError(5, "expected 'parent <id|->'")
    parent_id = None if parent_parts[1] == "-" else int(parent_parts[1])

    layers: list[LayerGene] = []
    current: Optional[dict] = None

    def flush() -> None:
        if current is not None:
            layers.append(LayerGene(id=current["id"], neuron_count=current["neurons"],
                                    connectors=tuple(current["conns"]),
                                    protected_neuron_count=current["prot_n"],
                                    protected=current["prot"]))

    ended = False
    for line_no, raw in enumerate(lines[5:], start=6):
        line = raw.strip()
        if not line:
            continue
        if ended:
            raise GenomeParseError(line_no, "content after 'end'")
        parts = line.split()
        if parts[0] == "end":
            if len(parts) != 1:
                raise GenomeParseError(line_no, "trailing tokens after 'end'")
            ended = True
        elif parts[0] == "layer":
            if (len(parts) != 8 or parts[2] != "neurons" or parts[4] != "protected_neurons"
                    or parts[6] != "protected"):
                raise GenomeParseError(line_no, "malformed layer line")
            flush()
            try:
                current = {"id": int(parts[1]), "neurons": int(parts[3]),
                           "prot_n": int(parts[5]), "prot": bool(int(parts[7])),
                           "conns": []}
            except ValueError:
                raise GenomeParseError(line_no, "bad integer in layer line") from None
        elif parts[0] == "conn":
            if len(parts) != 5 or parts[3] != "protected":
                raise GenomeParseError(line_no, "malformed conn line")
            if current is None:
                raise GenomeParseError(line_no, "conn line before any layer")
            try:
                source = NodeRef.parse(parts[2])
                current["conns"].append(ConnectorGene(id=int(parts[1]), source=source,
                                                      protected=bool(int(parts[4]))))
            except ValueError as exc:
                raise GenomeParseError(line_no, str(exc)) from None
        else:
            raise GenomeParseError(line_no, f"unknown directive {parts[0]!r}")
    if not ended:
        raise GenomeParseError(len(lines), "missing 'end'")
    flush()
    return Genome(num_inputs=num_inputs, num_outputs=num_outputs, layers=tuple(layers),
                  born_generation=born, parent_id=parent_id)


def digest(genome: Genome) -> str:
    """SHA-256 hex digest of the canonical serialization."""
    return hashlib.sha256(serialize(genome).encode("utf-8")).hexdigest()


def stamp_lineage(genome: Genome, born_generation: int, parent_id: Optional[int]) -> Genome:
    """Copy with updated lineage bookkeeping (structure untouched)."""
    return replace(genome, born_generation=born_generation, parent_id=parent_id)
