"""Append-only lineage tree over all individuals an experiment ever creates.

One node per individual, added the generation it is born. An individual that
survives selection keeps its node, and each brood it produces later attaches
directly to it, so an edge may span several generations of the run. Roots are
the individuals born without a parent: the founding population, the
persistent control baseline, and every random injection.

The lineage size statistic is the half degree sum over a root's subtree,
which equals the subtree's edge count, i.e. the number of descendants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

PARENT = "parent"
CHILD = "child"
RANDOM = "random"
CONTROL = "control"
ROLES = (PARENT, CHILD, RANDOM, CONTROL)

EXPORT_FORMATS = ("dot", "text")


class PhyloError(ValueError):
    """Rejected lineage edit or malformed lineage document."""


@dataclass(slots=True)
class PhyloNode:
    id: int
    generation: int
    role: str
    parent_id: Optional[int]


@dataclass
class PhyloTree:
    nodes: dict[int, PhyloNode] = field(default_factory=dict)
    children: dict[int, list[int]] = field(default_factory=dict)
    roots: list[int] = field(default_factory=list)

    @property
    def edge_count(self) -> int:
        return len(self.nodes) - len(self.roots)

    def max_generation(self) -> int:
        return max((n.generation for n in self.nodes.values()), default=-1)


def _check_node(tree: PhyloTree, node_id, generation, role,
                fresh: set[int]) -> None:
    if node_id in tree.nodes or node_id in fresh:
        raise PhyloError(f"duplicate individual id {node_id}")
    if role not in ROLES:
        raise PhyloError(f"unknown role {role!r}")
    if generation < 0:
        raise PhyloError(f"negative generation for id {node_id}")


def record_generation(tree: PhyloTree,
                      parent_child_pairs: Iterable[tuple[int, int, int, str]],
                      new_roots: Iterable[tuple[int, int, str]]) -> None:
    """Append one generation: new roots plus (parent, child, gen, role) births.

    Validates the whole batch before touching the tree, so a rejected call
    leaves it unchanged. A child must be born strictly after its parent.
    """
    roots = list(new_roots)
    pairs = list(parent_child_pairs)
    fresh: set[int] = set()
    for node_id, generation, role in roots:
        _check_node(tree, node_id, generation, role, fresh)
        fresh.add(node_id)
    for parent_id, child_id, generation, role in pairs:
        _check_node(tree, child_id, generation, role, fresh)
        parent = tree.nodes.get(parent_id)
        if parent is None:
            raise PhyloError(f"unknown parent id {parent_id}")
        if generation <= parent.generation:
            raise PhyloError(
                f"child {child_id} (gen {generation}) does not come after "
                f"parent {parent_id} (born gen {parent.generation})")
        fresh.add(child_id)
    for node_id, generation, role in roots:
        tree.nodes[node_id] = PhyloNode(node_id, generation, role, None)
        tree.roots.append(node_id)
    for parent_id, child_id, generation, role in pairs:
        tree.nodes[child_id] = PhyloNode(child_id, generation, role, parent_id)
        tree.children.setdefault(parent_id, []).append(child_id)


def descendants_count(tree: PhyloTree, lineage_root: int) -> int:
    """Half the degree sum over the subtree rooted at lineage_root.

    Degrees are taken within the subtree (the root's own parent edge, if any,
    is outside it), making the statistic exactly the subtree's edge count.
    """
    if lineage_root not in tree.nodes:
        raise PhyloError(f"unknown lineage root {lineage_root}")
    degree_sum = 0
    stack = [lineage_root]
    while stack:
        node_id = stack.pop()
        kids = tree.children.get(node_id, ())
        degree_sum += len(kids)
        if node_id != lineage_root:
            degree_sum += 1  # the edge up to its parent, inside the subtree
        stack.extend(kids)
    return degree_sum // 2


def lineage_bounds(alpha: int, horizon: int) -> tuple[int, int]:
    """Descendant-count interval for a dominant lineage after `horizon`
    generations: [alpha * (1 + horizon), sum of alpha^k for k = 1..horizon].

    The upper bound is the saturated case where every lineage member takes a
    parent slot every generation. The closed form divides by alpha - 1, so
    alpha = 1 is rejected rather than patched. The bounds are reported as-is;
    for very small horizons the lower bound can exceed the upper one.
    """
    if alpha < 2:
        raise ValueError("alpha must be at least 2")
    if horizon < 1:
        raise ValueError("horizon must be positive")
    lower = alpha * (1 + horizon)
    upper = (alpha ** (horizon + 1) - 1) // (alpha - 1) - 1
    return lower, upper


def dominant_series(tree: PhyloTree, roles: Union[str, Sequence[str]],
                    horizon: Optional[int] = None) -> list[int]:
    """Per-generation total descendant count of lineages whose root individual
    was born that generation with one of the given roles."""
    wanted = {roles} if isinstance(roles, str) else set(roles)
    for role in wanted:
        if role not in ROLES:
            raise PhyloError(f"unknown role {role!r}")
    if horizon is None:
        horizon = tree.max_generation()
    totals = [0] * (horizon + 1)
    for node in tree.nodes.values():
        if node.generation <= horizon and node.role in wanted:
            totals[node.generation] += descendants_count(tree, node.id)
    return totals


def format_node(node: PhyloNode) -> str:
    parent = "-" if node.parent_id is None else str(node.parent_id)
    return f"{node.generation},{node.id},{node.role},{parent}"


def export(tree: PhyloTree, format: str) -> str:
    """Render the tree: "text" is the log form (one `gen,id,role,parent` line
    per node, '-' for roots); "dot" is a digraph with one rank per generation.
    """
    if format == "text":
        return "".join(format_node(n) + "\n" for n in tree.nodes.values())
    if format == "dot":
        by_gen: dict[int, list[PhyloNode]] = {}
        for node in tree.nodes.values():
            by_gen.setdefault(node.generation, []).append(node)
        lines = ["digraph lineages {", "  rankdir=TB;", "  node [shape=box];"]
        for gen in sorted(by_gen):
            ids = "; ".join(f'"{n.id}"' for n in by_gen[gen])
            lines.append(f"  {{ rank=same; {ids}; }}")
        for node in tree.nodes.values():
            lines.append(f'  "{node.id}" [label="{node.id}:{node.role}"];')
        for node in tree.nodes.values():
            if node.parent_id is not None:
                lines.append(f'  "{node.parent_id}" -> "{node.id}";')
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown export format {format!r}")


def tree_from_text(document: str) -> PhyloTree:
    """Rebuild a tree from its text export; inverse of export(tree, "text")."""
    tree = PhyloTree()
    for line_no, raw in enumerate(document.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise PhyloError(f"line {line_no}: expected 4 fields, got {len(parts)}")
        try:
            generation, node_id = int(parts[0]), int(parts[1])
            parent = None if parts[3] == "-" else int(parts[3])
        except ValueError as exc:
            raise PhyloError(f"line {line_no}: {exc}") from None
        role = parts[2]
        try:
            if parent is None:
                record_generation(tree, [], [(node_id, generation, role)])
            else:
                record_generation(tree, [(parent, node_id, generation, role)], [])
        except PhyloError as exc:
            raise PhyloError(f"line {line_no}: {exc}") from None
    return tree
