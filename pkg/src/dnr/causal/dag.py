"""Directed acyclic graphs, path enumeration and d-separation."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable

MAX_NODES = 20


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    pass


class CapacityError(GraphError):
    """Graph too large for exhaustive path enumeration."""


@dataclass(frozen=True)
class CausalDag:
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def __init__(self, nodes: Iterable[str] = (), edges: Iterable[tuple[str, str]] = ()):
        edges = frozenset((str(a), str(b)) for a, b in edges)
        nodes = frozenset(str(n) for n in nodes) | {n for e in edges for n in e}
        for a, b in edges:
            if a == b:
                raise GraphError(f"self-loop on {a}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        self.topological_order  # raises on cycles

    @classmethod
    def from_edges(cls, *edges: str) -> "CausalDag":
        """``CausalDag.from_edges("X->Y", "T->X")``"""
        pairs = []
        for e in edges:
            a, _, b = e.partition("->")
            if not b:
                raise GraphError(f"malformed edge {e!r}")
            pairs.append((a.strip(), b.strip()))
        return cls(edges=pairs)

    @cached_property
    def parents(self) -> dict[str, frozenset[str]]:
        out = {n: set() for n in self.nodes}
        for a, b in self.edges:
            out[b].add(a)
        return {n: frozenset(v) for n, v in out.items()}

    @cached_property
    def children(self) -> dict[str, frozenset[str]]:
        out = {n: set() for n in self.nodes}
        for a, b in self.edges:
            out[a].add(b)
        return {n: frozenset(v) for n, v in out.items()}

    @cached_property
    def topological_order(self) -> tuple[str, ...]:
        indeg = {n: len(self.parents[n]) for n in self.nodes}
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in sorted(self.children[n]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != len(self.nodes):
            raise CycleError("graph contains a directed cycle")
        return tuple(order)

    def descendants(self, node: str) -> frozenset[str]:
        """Strict descendants of ``node``."""
        seen: set[str] = set()
        stack = list(self.children[node])
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(self.children[n])
        return frozenset(seen)

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self.edges

    def without_incoming(self, nodes: Iterable[str]) -> "CausalDag":
        cut = set(nodes)
        return CausalDag(self.nodes, [(a, b) for a, b in self.edges if b not in cut])

    def _require(self, *nodes: str):
        for n in nodes:
            if n not in self.nodes:
                raise GraphError(f"unknown node {n!r}")


@dataclass(frozen=True)
class NodePath:
    """A simple path; ``forward[i]`` is True when the edge runs nodes[i] -> nodes[i+1]."""

    nodes: tuple[str, ...]
    forward: tuple[bool, ...]

    def __str__(self) -> str:
        parts = [self.nodes[0]]
        for n, f in zip(self.nodes[1:], self.forward):
            parts.append("->" if f else "<-")
            parts.append(n)
        return " ".join(parts)

    def __len__(self) -> int:
        return len(self.forward)

    def is_collider(self, i: int) -> bool:
        """Whether interior node ``nodes[i]`` has both path edges pointing into it."""
        return self.forward[i - 1] and not self.forward[i]

    def is_directed(self) -> bool:
        return all(self.forward)

    def enters_start(self) -> bool:
        return not self.forward[0]


def enumerate_paths(g: CausalDag, x: str, y: str) -> list[NodePath]:
    """All simple paths between ``x`` and ``y`` in the skeleton, in DFS order."""
    g._require(x, y)
    if x == y:
        raise GraphError("path endpoints must differ")
    if len(g.nodes) > MAX_NODES:
        raise CapacityError(f"{len(g.nodes)} nodes exceeds the enumeration cap of {MAX_NODES}")
    nbrs = {n: sorted([(c, True) for c in g.children[n]] + [(p, False) for p in g.parents[n]])
            for n in g.nodes}
    out: list[NodePath] = []

    def walk(node, nodes, forward, visited):
        if node == y:
            out.append(NodePath(tuple(nodes), tuple(forward)))
            return
        for nxt, fwd in nbrs[node]:
            if nxt not in visited:
                visited.add(nxt)
                nodes.append(nxt)
                forward.append(fwd)
                walk(nxt, nodes, forward, visited)
                visited.discard(nxt)
                nodes.pop()
                forward.pop()

    walk(x, [x], [], {x})
    return out


def is_path_blocked(g: CausalDag, path: NodePath, z: Iterable[str] = ()) -> bool:
    z = frozenset(z)
    for i in range(1, len(path.nodes) - 1):
        b = path.nodes[i]
        if path.is_collider(i):
            if b not in z and not (g.descendants(b) & z):
                return True
        elif b in z:
            return True
    return False


def open_paths(g: CausalDag, x: str, y: str, z: Iterable[str] = ()) -> list[NodePath]:
    z = frozenset(z)
    return [p for p in enumerate_paths(g, x, y) if not is_path_blocked(g, p, z)]


def is_d_separated(g: CausalDag, x: str, y: str, z: Iterable[str] = ()) -> bool:
    z = frozenset(z)
    g._require(x, y, *z)
    if x in z or y in z:
        raise GraphError("endpoints may not be in the conditioning set")
    return not open_paths(g, x, y, z)


def classic_backdoor_paths(g: CausalDag, x: str, y: str) -> list[NodePath]:
    """Paths from ``x`` to ``y`` whose first edge points into ``x``."""
    return [p for p in enumerate_paths(g, x, y) if p.enters_start()]


def satisfies_backdoor_criterion(g: CausalDag, x: str, y: str, z: Iterable[str] = ()) -> bool:
    z = frozenset(z)
    g._require(x, y, *z)
    if x in z or y in z:
        raise GraphError("endpoints may not be in the adjustment set")
    if z & g.descendants(x):
        return False
    return all(is_path_blocked(g, p, z) for p in classic_backdoor_paths(g, x, y))


class PathKind(str, Enum):
    CLASSIC_BACKDOOR = "classic-backdoor"
    GENERAL_BACKDOOR = "general-backdoor"
    CAUSAL = "causal"
    BLOCKED = "blocked"
    # open, not causal, and no confounder distinct from the endpoints (e.g. X -> W <- Y given W)
    SPURIOUS = "spurious"


BACKDOOR_KINDS = (PathKind.CLASSIC_BACKDOOR, PathKind.GENERAL_BACKDOOR)


@dataclass(frozen=True)
class PathClassification:
    path: NodePath
    open_given_conditioning: bool
    is_directed_causal: bool
    confounder: str | None
    kind: PathKind


def _segment_source(path: NodePath) -> str:
    """Source node of the collider-free stretch of ``path`` that ends at its last node.

    Opened colliders split the path into stretches linked by induced
    dependence; within a stretch all arrows lead away from a single source.
    """
    start = 0
    for i in range(1, len(path.nodes) - 1):
        if path.is_collider(i):
            start = i
    # walk forward from the stretch start while arrows point backwards
    j = start
    while j < len(path.forward) and not path.forward[j]:
        j += 1
    return path.nodes[j]


def classify_path(g: CausalDag, path: NodePath, w: Iterable[str] = ()) -> PathClassification:
    w = frozenset(w)
    is_open = not is_path_blocked(g, path, w)
    causal = path.is_directed()
    if not is_open:
        return PathClassification(path, False, causal, None, PathKind.BLOCKED)
    if causal:
        return PathClassification(path, True, True, None, PathKind.CAUSAL)
    source = _segment_source(path)
    if source in (path.nodes[0], path.nodes[-1]) and not path.enters_start():
        return PathClassification(path, True, False, None, PathKind.SPURIOUS)
    kind = PathKind.CLASSIC_BACKDOOR if path.enters_start() else PathKind.GENERAL_BACKDOOR
    return PathClassification(path, True, False, source, kind)


def classify_paths(g: CausalDag, x: str, y: str, w: Iterable[str] = ()) -> list[PathClassification]:
    w = frozenset(w)
    g._require(x, y, *w)
    if x in w or y in w:
        raise GraphError("endpoints may not be in the conditioning set")
    return [classify_path(g, p, w) for p in enumerate_paths(g, x, y)]


def general_backdoor_paths(g: CausalDag, x: str, y: str, w: Iterable[str] = ()) -> list[PathClassification]:
    """Open, non-causal paths between ``x`` and ``y`` given ``w`` that carry a confounder.

    A path that points into ``x`` is a classic backdoor path. A path that
    leaves ``x`` but is opened by conditioning on a collider is a general
    backdoor path when the stretch reaching ``y`` is driven by a node other
    than the endpoints, e.g. ``X -> W <- Z <- T -> Y`` given ``W`` with
    confounder ``T``.
    """
    return [c for c in classify_paths(g, x, y, w) if c.kind in BACKDOOR_KINDS]
