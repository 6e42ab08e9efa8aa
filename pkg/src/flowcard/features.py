"""Fixed-length featurization of (query, sub-plan) pairs.

Segments, in order:

- tables: one-hot over aliases
- table_heuristics (optional): per-alias log1p heuristic filtered count
- joins: one-hot over the query's join edges (both endpoints in the sub-plan)
- predicates: per (alias, column) slots by column kind; range predicates get
  a min-max normalized (lo, hi) pair, IN sets get hashed value counts over
  ``hash_bins`` bins, LIKE patterns get hashed character n-gram counts plus
  a log1p literal-length scalar and a digit-presence flag
- plangraph (optional): child count, own heuristic cardinality and cost,
  and aggregates (min/mean/max) of child edge costs and child/parent
  cardinality ratios, all log1p-transformed

Feature hashing uses a seeded 64-bit keyed hash reduced mod the bin count,
so vectors are reproducible across runs and platforms.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostParams, edge_cost
from .errors import SchemaError
from .joins import InPredicate, JoinGraph, LikePredicate, Query, RangePredicate
from .plangraph import PlanGraph
from .synth import DbStats

PLANGRAPH_FEATURES = 9
LIKE_EXTRA_FEATURES = 2
LIKE_CHAR_SELECTIVITY = 0.2  # crude per-literal-char shrink for LIKE estimates


@dataclass(frozen=True)
class FeatureConfig:
    hash_bins: int = 10
    ngram_size: int = 3
    hash_seed: int = 41
    include_gq: bool = True
    include_heuristic: bool = True
    cost_params: CostParams = field(default_factory=CostParams)

    def __post_init__(self):
        if self.hash_bins < 2:
            raise ValueError("hash_bins must be >= 2")
        if self.ngram_size < 1:
            raise ValueError("ngram_size must be >= 1")


@dataclass
class FeatureLayout:
    segments: list[tuple[str, int, int]]  # (name, offset, length)
    total: int

    def offset(self, name: str) -> tuple[int, int]:
        for seg, off, length in self.segments:
            if seg == name:
                return off, length
        raise SchemaError(f"no feature segment {name!r}")

    def segment(self, vec: np.ndarray, name: str) -> np.ndarray:
        off, length = self.offset(name)
        return vec[off:off + length]

    def to_json(self) -> str:
        return json.dumps({"total": self.total,
                           "segments": [{"name": n, "offset": o, "length": l}
                                        for n, o, l in self.segments]},
                          indent=1, sort_keys=True)


def hash_bin(value: str, seed: int, bins: int) -> int:
    digest = hashlib.blake2b(value.encode("utf-8"), digest_size=8,
                             key=seed.to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little") % bins


def feature_layout(jg: JoinGraph, cfg: FeatureConfig = FeatureConfig()) -> FeatureLayout:
    """Stable segment map for one schema; length is fixed per (schema, config)."""
    segments: list[tuple[str, int, int]] = []
    off = 0

    def add(name: str, length: int):
        nonlocal off
        segments.append((name, off, length))
        off += length

    add("tables", jg.n_aliases)
    if cfg.include_heuristic:
        add("table_heuristics", jg.n_aliases)
    add("joins", len(jg.edges))
    for alias in range(jg.n_aliases):
        rel = jg.relations[alias]
        aname = jg.aliases[alias]
        for col in rel.columns:
            if col.kind == "integer":
                add(f"pred:{aname}.{col.name}:range", 2)
                add(f"pred:{aname}.{col.name}:in", cfg.hash_bins)
            elif col.kind == "categorical":
                add(f"pred:{aname}.{col.name}:in", cfg.hash_bins)
            else:
                add(f"pred:{aname}.{col.name}:like", cfg.hash_bins + LIKE_EXTRA_FEATURES)
    if cfg.include_gq:
        add("plangraph", PLANGRAPH_FEATURES)
    return FeatureLayout(segments, off)


# --------------------------------------------------------------------------
# Heuristic cardinalities (independence assumption + join containment)
# --------------------------------------------------------------------------

def like_literal_length(pattern: str) -> int:
    return sum(1 for ch in pattern if ch not in "%_")


def predicate_selectivity(pred, jg: JoinGraph, stats: DbStats) -> float:
    rel = jg.relations[pred.alias]
    table = stats[rel.name]
    col = table.columns.get(pred.column)
    if col is None:
        raise SchemaError(f"no stats for column {rel.name}.{pred.column}")
    if isinstance(pred, RangePredicate):
        width = col.hi - col.lo + 1
        overlap = min(pred.hi, col.hi) - max(pred.lo, col.lo) + 1
        return float(np.clip(overlap / width, 0.0, 1.0)) if width > 0 else 1.0
    if isinstance(pred, InPredicate):
        return float(np.clip(len(pred.values) / max(col.n_distinct, 1), 0.0, 1.0))
    if isinstance(pred, LikePredicate):
        length = like_literal_length(pred.pattern)
        return max(1.0 / table.row_count, LIKE_CHAR_SELECTIVITY ** min(length, 5))
    raise SchemaError(f"unsupported predicate {pred!r}")


def heuristic_table_cardinalities(query: Query, stats: DbStats) -> np.ndarray:
    """Per-alias filtered row estimates (not clamped)."""
    jg = query.join_graph
    out = np.zeros(jg.n_aliases)
    for alias in range(jg.n_aliases):
        rel = jg.relations[alias]
        est = float(stats[rel.name].row_count)
        for pred in query.predicates_for(alias):
            est *= predicate_selectivity(pred, jg, stats)
        out[alias] = est
    return out


def _join_selectivity(edge, jg: JoinGraph, stats: DbStats) -> float:
    left_stats = stats[jg.relations[edge.left].name].columns[edge.left_col]
    right_stats = stats[jg.relations[edge.right].name].columns[edge.right_col]
    return 1.0 / max(left_stats.n_distinct, right_stats.n_distinct, 1)


def heuristic_cardinalities(query: Query, pg: PlanGraph, stats: DbStats) -> np.ndarray:
    """Node-indexed heuristic cardinality vector (clamped to >= 1).

    Product of the members' filtered estimates times one containment
    factor 1/max(distinct counts) per join edge inside the sub-plan.
    """
    jg = query.join_graph
    table_est = heuristic_table_cardinalities(query, stats)
    edge_sel = [_join_selectivity(e, jg, stats) for e in jg.edges]
    y = np.ones(pg.n_nodes)
    for node in range(1, pg.n_nodes):
        mask = pg.node_masks[node]
        est = 1.0
        for alias in range(jg.n_aliases):
            if (mask >> alias) & 1:
                est *= table_est[alias]
        for ei, e in enumerate(jg.edges):
            if (mask >> e.left) & 1 and (mask >> e.right) & 1:
                est *= edge_sel[ei]
        y[node] = max(1.0, est)
    return y


def heuristic_node_costs(pg: PlanGraph, heur_y: np.ndarray,
                         p: CostParams = CostParams()) -> np.ndarray:
    """Cheapest in-edge cost per node under heuristic cardinalities;
    singletons get their scan cost."""
    out = np.zeros(pg.n_nodes)
    for node in range(1, pg.n_nodes):
        best = math.inf
        for ei in pg.in_edges[node]:
            e = pg.edges[ei]
            if e.src == pg.S:
                best = min(best, max(p.cost_floor, heur_y[node]))
            else:
                best = min(best, edge_cost(heur_y[e.src],
                                           heur_y[pg.edge_base[ei]], p))
        out[node] = best
    return out


# --------------------------------------------------------------------------
# Featurization
# --------------------------------------------------------------------------

def _fill_range(seg: np.ndarray, pred: RangePredicate, jg: JoinGraph) -> None:
    col = jg.relations[pred.alias].column(pred.column)
    width = col.hi - col.lo
    if width <= 0:
        seg[0] = 0.0
        seg[1] = 1.0
        return
    seg[0] = float(np.clip((pred.lo - col.lo) / width, 0.0, 1.0))
    seg[1] = float(np.clip((pred.hi - col.lo) / width, 0.0, 1.0))


def _fill_in(seg: np.ndarray, pred: InPredicate, cfg: FeatureConfig) -> None:
    for v in pred.values:
        seg[hash_bin(str(v), cfg.hash_seed, cfg.hash_bins)] += 1.0


def pattern_ngrams(pattern: str, n: int) -> list[str]:
    grams = []
    run = []
    for ch in pattern + "%":
        if ch in "%_":
            text = "".join(run)
            run = []
            if not text:
                continue
            if len(text) < n:
                grams.append(text)
            else:
                grams.extend(text[i:i + n] for i in range(len(text) - n + 1))
        else:
            run.append(ch)
    return grams


def _fill_like(seg: np.ndarray, pred: LikePredicate, cfg: FeatureConfig) -> None:
    for gram in pattern_ngrams(pred.pattern, cfg.ngram_size):
        seg[hash_bin(gram, cfg.hash_seed, cfg.hash_bins)] += 1.0
    seg[cfg.hash_bins] = math.log1p(like_literal_length(pred.pattern))
    seg[cfg.hash_bins + 1] = 1.0 if any(ch.isdigit() for ch in pred.pattern) else 0.0


def featurize_subplan(query: Query, subplan: int, pg: PlanGraph, stats: DbStats,
                      heuristic_y: np.ndarray, cfg: FeatureConfig = FeatureConfig(),
                      layout: FeatureLayout | None = None,
                      heur_costs: np.ndarray | None = None) -> np.ndarray:
    """Deterministic fixed-length vector for one sub-plan of one query."""
    jg = query.join_graph
    if subplan not in pg.node_id:
        raise SchemaError(f"sub-plan {bin(subplan)} is not a node of the plan graph")
    if layout is None:
        layout = feature_layout(jg, cfg)
    vec = np.zeros(layout.total)

    tables = layout.segment(vec, "tables")
    for alias in range(jg.n_aliases):
        if (subplan >> alias) & 1:
            tables[alias] = 1.0
    if cfg.include_heuristic:
        heur = layout.segment(vec, "table_heuristics")
        for alias in range(jg.n_aliases):
            if (subplan >> alias) & 1:
                heur[alias] = math.log1p(heuristic_y[pg.singleton_id[alias]])

    joins = layout.segment(vec, "joins")
    for ei, e in enumerate(jg.edges):
        if (subplan >> e.left) & 1 and (subplan >> e.right) & 1:
            joins[ei] = 1.0

    for pred in query.predicates:
        if not (subplan >> pred.alias) & 1:
            continue
        aname = jg.aliases[pred.alias]
        if isinstance(pred, RangePredicate):
            _fill_range(layout.segment(vec, f"pred:{aname}.{pred.column}:range"), pred, jg)
        elif isinstance(pred, InPredicate):
            _fill_in(layout.segment(vec, f"pred:{aname}.{pred.column}:in"), pred, cfg)
        elif isinstance(pred, LikePredicate):
            _fill_like(layout.segment(vec, f"pred:{aname}.{pred.column}:like"), pred, cfg)

    if cfg.include_gq:
        seg = layout.segment(vec, "plangraph")
        node = pg.node_id[subplan]
        children = [(pg.edges[ei].dst, pg.edges[ei].alias) for ei in pg.out_edges[node]]
        own = heuristic_y[node]
        costs = []
        ratios = []
        for child, alias in children:
            costs.append(edge_cost(max(1.0, own),
                                   max(1.0, heuristic_y[pg.singleton_id[alias]]),
                                   cfg.cost_params))
            ratios.append(heuristic_y[child] / max(own, 1.0))
        seg[0] = math.log1p(len(children))
        seg[1] = math.log1p(own)
        if heur_costs is None:
            heur_costs = heuristic_node_costs(pg, heuristic_y, cfg.cost_params)
        seg[2] = math.log1p(heur_costs[node])
        if costs:
            seg[3] = math.log1p(min(costs))
            seg[4] = math.log1p(sum(costs) / len(costs))
            seg[5] = math.log1p(max(costs))
        if ratios:
            seg[6] = math.log1p(min(ratios))
            seg[7] = math.log1p(sum(ratios) / len(ratios))
            seg[8] = math.log1p(max(ratios))
    return vec


@dataclass
class FeaturizedQuery:
    """All non-S nodes of one query, featurized row-per-node."""

    query: Query
    pg: PlanGraph
    matrix: np.ndarray    # shape (n_nodes - 1, layout.total); row k is node k+1
    log_caps: np.ndarray  # per non-S node: log product of member row counts
    heuristic_y: np.ndarray


def featurize_query(query: Query, pg: PlanGraph, stats: DbStats,
                    cfg: FeatureConfig = FeatureConfig(),
                    layout: FeatureLayout | None = None) -> FeaturizedQuery:
    jg = query.join_graph
    if layout is None:
        layout = feature_layout(jg, cfg)
    heur = heuristic_cardinalities(query, pg, stats)
    heur_costs = heuristic_node_costs(pg, heur, cfg.cost_params) if cfg.include_gq else None
    rows = []
    caps = []
    log_rows = [math.log(jg.relations[a].row_count) for a in range(jg.n_aliases)]
    for node in range(1, pg.n_nodes):
        rows.append(featurize_subplan(query, pg.node_masks[node], pg, stats, heur,
                                      cfg, layout, heur_costs=heur_costs))
        mask = pg.node_masks[node]
        caps.append(sum(log_rows[a] for a in range(jg.n_aliases) if (mask >> a) & 1))
    return FeaturizedQuery(query, pg, np.vstack(rows), np.array(caps), heur)
