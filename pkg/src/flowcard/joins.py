"""Schemas, queries, and join graphs, plus connected sub-plan enumeration.

Aliases (not tables) are the graph nodes, so a self join contributes two
distinct nodes backed by the same relation. Sub-plans are bitsets over
alias indices; bit i set means alias i is part of the sub-plan. Cross
joins are excluded throughout: only connected alias subsets qualify.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Union

from .errors import CapacityError, ConfigError, SchemaError

DEFAULT_ALIAS_CAP = 12


@dataclass(frozen=True)
class Column:
    """Column descriptor: integer/categorical columns carry inclusive domain
    bounds, string columns carry an alphabet size instead."""

    name: str
    kind: str  # "integer" | "categorical" | "string"
    lo: int = 0
    hi: int = 0
    alphabet: int = 26

    def __post_init__(self):
        if self.kind not in ("integer", "categorical", "string"):
            raise ConfigError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind != "string" and self.hi < self.lo:
            raise ConfigError(f"column {self.name!r} has empty domain [{self.lo}, {self.hi}]")
        if self.kind == "string" and self.alphabet < 1:
            raise ConfigError(f"column {self.name!r} needs alphabet size >= 1")


@dataclass(frozen=True)
class Relation:
    """A base relation with an integer id, row count, and column descriptors."""

    rid: int
    name: str
    row_count: int
    columns: tuple[Column, ...]

    def __post_init__(self):
        if self.row_count < 1:
            raise ConfigError(f"relation {self.name!r} must have row_count >= 1")
        names = [c.name for c in self.columns]
        if len(names) != len(set(names)):
            raise ConfigError(f"relation {self.name!r} has duplicate column names")

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"relation {self.name!r} has no column {name!r}")


@dataclass(frozen=True)
class JoinEdge:
    """Unordered equi-join between two aliases; canonical form has left < right."""

    left: int
    right: int
    left_col: str
    right_col: str

    def canonical(self) -> "JoinEdge":
        if self.left <= self.right:
            return self
        return JoinEdge(self.right, self.left, self.right_col, self.left_col)


class JoinGraph:
    """Aliases plus equi-join edges; must be connected with no self loops.

    ``relations[i]`` is the relation behind alias index i and ``aliases[i]``
    its display name. Adjacency is precomputed as per-alias neighbor bitmasks
    so connectivity checks run on plain integers.
    """

    def __init__(self, relations: Iterable[Relation], aliases: Iterable[str],
                 edges: Iterable[JoinEdge]):
        self.relations = tuple(relations)
        self.aliases = tuple(aliases)
        self.edges = tuple(e.canonical() for e in edges)
        n = len(self.relations)
        if n < 2:
            raise ConfigError("a join graph needs at least 2 aliases")
        if len(self.aliases) != n:
            raise ConfigError("aliases and relations must align")
        if len(set(self.aliases)) != n:
            raise ConfigError("alias names must be unique")
        adj = [0] * n
        for e in self.edges:
            if not (0 <= e.left < n and 0 <= e.right < n):
                raise ConfigError(f"edge {e} references an unknown alias index")
            if e.left == e.right:
                raise ConfigError(f"self-loop edge on alias {self.aliases[e.left]!r}")
            self.relations[e.left].column(e.left_col)
            self.relations[e.right].column(e.right_col)
            adj[e.left] |= 1 << e.right
            adj[e.right] |= 1 << e.left
        self.adjacency = tuple(adj)
        self.n_aliases = n
        full = (1 << n) - 1
        if not is_connected(full, self):
            raise ConfigError("join graph must be connected")

    def edges_within(self, members: int) -> list[JoinEdge]:
        """Join edges whose endpoints both lie inside the bitset."""
        return [e for e in self.edges
                if (members >> e.left) & 1 and (members >> e.right) & 1]

    def __eq__(self, other):
        return (isinstance(other, JoinGraph)
                and self.relations == other.relations
                and self.aliases == other.aliases
                and self.edges == other.edges)

    def __hash__(self):
        return hash((self.relations, self.aliases, self.edges))


@dataclass(frozen=True)
class RangePredicate:
    alias: int
    column: str
    lo: float
    hi: float


@dataclass(frozen=True)
class InPredicate:
    alias: int
    column: str
    values: tuple

    def __post_init__(self):
        if len(self.values) == 0:
            raise ConfigError("IN predicate needs at least one value")


@dataclass(frozen=True)
class LikePredicate:
    alias: int
    column: str
    pattern: str  # SQL LIKE syntax: % = any run, _ = any single char


Predicate = Union[RangePredicate, InPredicate, LikePredicate]


@dataclass(frozen=True)
class Query:
    """A join graph plus per-alias filter predicates."""

    join_graph: JoinGraph
    predicates: tuple[Predicate, ...] = ()
    qid: str = "q0"
    template: str = ""
    meta: tuple = field(default=(), compare=False)

    def __post_init__(self):
        for p in self.predicates:
            if not (0 <= p.alias < self.join_graph.n_aliases):
                raise SchemaError(f"predicate references unknown alias index {p.alias}")
            rel = self.join_graph.relations[p.alias]
            rel.column(p.column)

    def predicates_for(self, alias: int) -> tuple[Predicate, ...]:
        return tuple(p for p in self.predicates if p.alias == alias)


def is_connected(members: int, join_graph: JoinGraph) -> bool:
    """True iff the induced subgraph on the bitset is connected; empty -> False."""
    if members == 0:
        return False
    seed = members & -members  # lowest set bit
    seen = seed
    frontier = seed
    adj = join_graph.adjacency
    while frontier:
        nxt = 0
        f = frontier
        while f:
            low = f & -f
            nxt |= adj[low.bit_length() - 1]
            f ^= low
        frontier = nxt & members & ~seen
        seen |= frontier
    return seen == members


def enumerate_subplans(join_graph: JoinGraph, cap: int = DEFAULT_ALIAS_CAP) -> list[int]:
    """All connected non-empty alias subsets, ordered by (popcount, bitset value).

    The ordering is deterministic and gives stable node ids for every
    downstream matrix. Raises CapacityError above ``cap`` aliases because
    the result (and the plan graph built from it) grows as 2^n.
    """
    n = join_graph.n_aliases
    if n > cap:
        raise CapacityError(f"{n} aliases exceeds the sub-plan cap of {cap}")
    subplans = [m for m in range(1, 1 << n) if is_connected(m, join_graph)]
    subplans.sort(key=lambda m: (bin(m).count("1"), m))
    return subplans


# --------------------------------------------------------------------------
# JSON serialization (documented in docs/formats.md)
# --------------------------------------------------------------------------

def _column_to_json(c: Column) -> dict:
    d = {"name": c.name, "kind": c.kind}
    if c.kind == "string":
        d["alphabet"] = c.alphabet
    else:
        d["lo"] = c.lo
        d["hi"] = c.hi
    return d


def _column_from_json(d: dict) -> Column:
    if d["kind"] == "string":
        return Column(d["name"], "string", alphabet=d.get("alphabet", 26))
    return Column(d["name"], d["kind"], lo=d["lo"], hi=d["hi"])


def relation_to_json(r: Relation) -> dict:
    return {"rid": r.rid, "name": r.name, "row_count": r.row_count,
            "columns": [_column_to_json(c) for c in r.columns]}


def relation_from_json(d: dict) -> Relation:
    return Relation(d["rid"], d["name"], d["row_count"],
                    tuple(_column_from_json(c) for c in d["columns"]))


def join_graph_to_json(jg: JoinGraph) -> dict:
    return {
        "relations": [relation_to_json(r) for r in jg.relations],
        "aliases": list(jg.aliases),
        "edges": [[e.left, e.right, e.left_col, e.right_col] for e in jg.edges],
    }


def join_graph_from_json(d: dict) -> JoinGraph:
    return JoinGraph(
        [relation_from_json(r) for r in d["relations"]],
        d["aliases"],
        [JoinEdge(a, b, ca, cb) for a, b, ca, cb in d["edges"]],
    )


def _predicate_to_json(p: Predicate) -> dict:
    if isinstance(p, RangePredicate):
        return {"op": "range", "alias": p.alias, "column": p.column, "lo": p.lo, "hi": p.hi}
    if isinstance(p, InPredicate):
        return {"op": "in", "alias": p.alias, "column": p.column, "values": list(p.values)}
    return {"op": "like", "alias": p.alias, "column": p.column, "pattern": p.pattern}


def _predicate_from_json(d: dict) -> Predicate:
    if d["op"] == "range":
        return RangePredicate(d["alias"], d["column"], d["lo"], d["hi"])
    if d["op"] == "in":
        return InPredicate(d["alias"], d["column"], tuple(d["values"]))
    if d["op"] == "like":
        return LikePredicate(d["alias"], d["column"], d["pattern"])
    raise ConfigError(f"unknown predicate op {d['op']!r}")


def query_to_json(q: Query) -> dict:
    return {
        "qid": q.qid,
        "template": q.template,
        "join_graph": join_graph_to_json(q.join_graph),
        "predicates": [_predicate_to_json(p) for p in q.predicates],
    }


def query_from_json(d: dict) -> Query:
    return Query(
        join_graph_from_json(d["join_graph"]),
        tuple(_predicate_from_json(p) for p in d["predicates"]),
        qid=d.get("qid", "q0"),
        template=d.get("template", ""),
    )


def dump_queries(queries: Iterable[Query], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([query_to_json(q) for q in queries], f, indent=1, sort_keys=True)


def load_queries(path) -> list[Query]:
    with open(path, encoding="utf-8") as f:
        return [query_from_json(d) for d in json.load(f)]
