"""Labeled DAGs over prediction targets."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError, StructureError


def parse_edge(text: str) -> tuple[str, str]:
    """``"parent->child"`` to ``("parent", "child")``."""
    parts = text.split("->")
    if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
        raise ConfigurationError(f"edge must look like 'parent->child', got {text!r}")
    return parts[0].strip(), parts[1].strip()


def format_edge(edge) -> str:
    return f"{edge[0]}->{edge[1]}"


def _find_cycle(targets, edges):
    children = {t: [] for t in targets}
    for a, b in edges:
        children[a].append(b)
    color = dict.fromkeys(targets, 0)
    stack_path: list[str] = []

    def visit(node):
        color[node] = 1
        stack_path.append(node)
        for child in children[node]:
            if color[child] == 1:
                return stack_path[stack_path.index(child):]
            if color[child] == 0:
                found = visit(child)
                if found:
                    return found
        stack_path.pop()
        color[node] = 2
        return None

    for t in targets:
        if color[t] == 0:
            found = visit(t)
            if found:
                return found
    return None


def topological_order(targets, edges) -> list[str]:
    """Kahn's algorithm; ties go to the earliest-declared target."""
    indeg = dict.fromkeys(targets, 0)
    children = {t: [] for t in targets}
    for a, b in edges:
        indeg[b] += 1
        children[a].append(b)
    rank = {t: i for i, t in enumerate(targets)}
    ready = sorted((t for t in targets if indeg[t] == 0), key=rank.get)
    order = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for c in children[node]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort(key=rank.get)
    if len(order) != len(targets):
        witness = _find_cycle(targets, edges)
        raise StructureError(f"structure has a cycle: {witness}", witness=witness)
    return order


@dataclass(frozen=True)
class BayesianStructure:
    """Targets plus directed parent->child edges; always acyclic once built.

    Construct through :func:`validate_structure`.
    """

    targets: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]

    def parents(self, target) -> list[str]:
        """Parents of ``target`` in canonical (sorted) order."""
        return sorted(a for a, b in self.edges if b == target)

    def children(self, target) -> list[str]:
        return sorted(b for a, b in self.edges if a == target)

    @property
    def order(self) -> list[str]:
        return topological_order(self.targets, self.edges)

    def key(self) -> tuple:
        return tuple(sorted(self.edges))

    def edge_strings(self) -> list[str]:
        return [format_edge(e) for e in sorted(self.edges)]

    def with_edges(self, edges) -> "BayesianStructure":
        return validate_structure(self.targets, edges)

    def __str__(self):
        return "{" + ", ".join(self.edge_strings()) + "}"


def validate_structure(targets, edges) -> BayesianStructure:
    """Check and build a :class:`BayesianStructure`.

    ``edges`` may be ``(parent, child)`` pairs or ``"parent->child"``
    strings.  Duplicate edges collapse.  Raises :class:`StructureError` on a
    cycle (with a witness path), self-edge, or undeclared endpoint.
    """
    targets = tuple(targets)
    if len(set(targets)) != len(targets):
        raise StructureError(f"duplicate target names in {list(targets)}")
    declared = set(targets)
    parsed = []
    for e in edges:
        a, b = parse_edge(e) if isinstance(e, str) else tuple(e)
        for end in (a, b):
            if end not in declared:
                raise StructureError(f"edge {a}->{b} references unknown target {end!r}")
        if a == b:
            raise StructureError(f"self-edge on {a!r}", witness=[a])
        if (a, b) not in parsed:
            parsed.append((a, b))
    topological_order(targets, parsed)
    return BayesianStructure(targets, tuple(sorted(parsed)))
