"""Plan graphs: the DAG over sub-plans whose source-to-sink paths are
exactly the left-deep join orders.

Node 0 is the synthetic source S (empty set); the sink D is the full-set
sub-plan itself, not a separate node. Node ids follow (popcount, bitset)
order, which is simultaneously a topological order. Edge ids follow
(source id, joined alias) order. Both orderings are relied on downstream:
matrices, tie-breaks, and path enumeration are all stable because of them.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Union

import numpy as np

from .errors import CapacityError
from .joins import DEFAULT_ALIAS_CAP, JoinGraph, Query, enumerate_subplans

Path = tuple[int, ...]  # edge ids from S to D, in path order


@dataclass(frozen=True)
class PlanEdge:
    src: int    # node id
    dst: int    # node id
    alias: int  # base alias joined by this edge


class PlanGraph:
    """Immutable after construction; concurrent reads are safe."""

    def __init__(self, jg: JoinGraph, node_masks: list[int], edges: list[PlanEdge]):
        self.join_graph = jg
        self.node_masks = tuple(node_masks)
        self.edges = tuple(edges)
        self.node_id = {m: i for i, m in enumerate(self.node_masks)}
        self.n_nodes = len(self.node_masks)
        self.n_edges = len(self.edges)
        self.S = 0
        self.D = self.n_nodes - 1
        out: list[list[int]] = [[] for _ in range(self.n_nodes)]
        inc: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for ei, e in enumerate(self.edges):
            out[e.src].append(ei)
            inc[e.dst].append(ei)
        self.out_edges = tuple(tuple(x) for x in out)
        self.in_edges = tuple(tuple(x) for x in inc)
        # singleton node id per alias, for base-table cardinality lookups
        self.singleton_id = tuple(self.node_id[1 << a] for a in range(jg.n_aliases))

    @cached_property
    def incidence(self) -> np.ndarray:
        """Node-by-edge incidence matrix: +1 at the source, -1 at the destination."""
        x = np.zeros((self.n_nodes, self.n_edges))
        for ei, e in enumerate(self.edges):
            x[e.src, ei] = 1.0
            x[e.dst, ei] = -1.0
        return x

    @cached_property
    def edge_src(self) -> np.ndarray:
        return np.array([e.src for e in self.edges], dtype=np.intp)

    @cached_property
    def edge_dst(self) -> np.ndarray:
        return np.array([e.dst for e in self.edges], dtype=np.intp)

    @cached_property
    def edge_base(self) -> np.ndarray:
        """Per edge, the node id of the joined alias's singleton sub-plan."""
        return np.array([self.singleton_id[e.alias] for e in self.edges], dtype=np.intp)

    def popcount(self, node: int) -> int:
        return bin(self.node_masks[node]).count("1")

    def node_label(self, node: int) -> str:
        mask = self.node_masks[node]
        if mask == 0:
            return "S"
        names = [self.join_graph.aliases[a]
                 for a in range(self.join_graph.n_aliases) if (mask >> a) & 1]
        return ",".join(names)

    def path_nodes(self, path: Path) -> list[int]:
        nodes = [self.S]
        for ei in path:
            nodes.append(self.edges[ei].dst)
        return nodes

    def path_aliases(self, path: Path) -> list[int]:
        """The left-deep join order the path encodes."""
        return [self.edges[ei].alias for ei in path]


def build_plan_graph(query: Union[Query, JoinGraph], cap: int = DEFAULT_ALIAS_CAP) -> PlanGraph:
    """Build the plan graph for a query (or bare join graph).

    Nodes are S plus every connected sub-plan; an edge (u, v) exists iff
    v = u extended by one alias and v is itself connected. For u = S that
    means edges to exactly the singletons.
    """
    jg = query.join_graph if isinstance(query, Query) else query
    subplans = enumerate_subplans(jg, cap=cap)
    node_masks = [0] + subplans
    node_id = {m: i for i, m in enumerate(node_masks)}
    edges: list[PlanEdge] = []
    for src_id, mask in enumerate(node_masks):
        if mask == node_masks[-1]:
            continue  # D has no out-edges
        for alias in range(jg.n_aliases):
            bit = 1 << alias
            if mask & bit:
                continue
            if mask != 0 and not (jg.adjacency[alias] & mask):
                continue  # would be a cross join
            dst = node_id.get(mask | bit)
            if dst is None:
                continue
            edges.append(PlanEdge(src_id, dst, alias))
    return PlanGraph(jg, node_masks, edges)


def enumerate_paths(pg: PlanGraph) -> Iterator[Path]:
    """Yield every S-to-D path exactly once, lazily, in edge-id DFS order.

    Clique graphs have n! paths, so callers bound their own consumption;
    exhaustive consumers should stay at 8 aliases or fewer.
    """
    stack: list[int] = []

    def walk(node: int) -> Iterator[Path]:
        if node == pg.D:
            yield tuple(stack)
            return
        for ei in pg.out_edges[node]:
            stack.append(ei)
            yield from walk(pg.edges[ei].dst)
            stack.pop()

    yield from walk(pg.S)


def count_paths(pg: PlanGraph) -> int:
    """Number of S-to-D paths, by DP over the topological node order."""
    counts = [0] * pg.n_nodes
    counts[pg.S] = 1
    for node in range(pg.n_nodes):
        for ei in pg.out_edges[node]:
            counts[pg.edges[ei].dst] += counts[node]
    return counts[pg.D]


def node_children(pg: PlanGraph, node: int) -> list[tuple[int, int]]:
    """Direct successors as (child node id, joined alias), in edge order."""
    return [(pg.edges[ei].dst, pg.edges[ei].alias) for ei in pg.out_edges[node]]


def to_dot(pg: PlanGraph) -> str:
    """DOT text for inspection; node labels are member alias names."""
    lines = ["digraph plangraph {", "  rankdir=LR;"]
    for node in range(pg.n_nodes):
        shape = "doublecircle" if node in (pg.S, pg.D) else "ellipse"
        lines.append(f'  n{node} [label="{pg.node_label(node)}" shape={shape}];')
    for e in pg.edges:
        lines.append(f'  n{e.src} -> n{e.dst} [label="{pg.join_graph.aliases[e.alias]}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
