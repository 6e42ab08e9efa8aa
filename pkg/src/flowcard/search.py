"""Exact left-deep plan search and the metrics built on it.

The cheapest path is found with a single relaxation pass in node-id order
(node ids are topological by popcount). Ties on exactly-equal float costs
keep the predecessor edge with the smaller edge id, which makes the chosen
path unique and lets the brute-force oracle reproduce it bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .costs import CostParams, cost_all_edges
from .errors import CapacityError
from .plangraph import Path, PlanGraph, enumerate_paths


@dataclass
class SearchResult:
    path: Path
    est_cost: float
    true_cost: Optional[float] = None


def q_error(y_true: float, y_est: float) -> float:
    """max(y_true / y_est, y_est / y_true); both inputs must be positive."""
    if not (y_true > 0 and y_est > 0) or not (math.isfinite(y_true) and math.isfinite(y_est)):
        raise ValueError(f"q_error needs positive finite inputs, got ({y_true!r}, {y_est!r})")
    return max(y_true / y_est, y_est / y_true)


def shortest_path(pg: PlanGraph, costs: np.ndarray) -> tuple[Path, float]:
    """Cheapest S-to-D path for an explicit edge cost vector."""
    dist = np.full(pg.n_nodes, np.inf)
    dist[pg.S] = 0.0
    pred = [-1] * pg.n_nodes
    for node in range(pg.n_nodes):
        d = dist[node]
        for ei in pg.out_edges[node]:
            cand = d + costs[ei]
            dst = pg.edges[ei].dst
            if cand < dist[dst]:
                dist[dst] = cand
                pred[dst] = ei
    path: list[int] = []
    node = pg.D
    while node != pg.S:
        ei = pred[node]
        path.append(ei)
        node = pg.edges[ei].src
    path.reverse()
    return tuple(path), float(dist[pg.D])


def p_opt(pg: PlanGraph, y: np.ndarray, p: CostParams = CostParams()) -> SearchResult:
    """Cheapest left-deep plan under cardinality vector ``y``."""
    costs = cost_all_edges(pg, y, p)
    path, cost = shortest_path(pg, costs)
    return SearchResult(path, cost)


def path_cost(pg: PlanGraph, path: Path, costs: np.ndarray) -> float:
    """Left-to-right sum, matching the relaxation's accumulation order."""
    total = 0.0
    for ei in path:
        total += costs[ei]
    return total


def p_cost(y_est: np.ndarray, y_true: np.ndarray, pg: PlanGraph,
           p: CostParams = CostParams()) -> float:
    """True cost of the plan chosen under the estimates."""
    chosen = p_opt(pg, y_est, p)
    true_costs = cost_all_edges(pg, y_true, p)
    return path_cost(pg, chosen.path, true_costs)


def p_error(y1: np.ndarray, y2: np.ndarray, y_true: np.ndarray, pg: PlanGraph,
            p: CostParams = CostParams()) -> float:
    """|p_cost(y1) - p_cost(y2)|: a pseudometric between cardinality vectors."""
    return abs(p_cost(y1, y_true, pg, p) - p_cost(y2, y_true, pg, p))


def brute_force_p_opt(pg: PlanGraph, y: np.ndarray, p: CostParams = CostParams(),
                      max_aliases: int = 8) -> SearchResult:
    """Exhaustive minimum over all paths, with the same tie rule as p_opt.

    Among equal-cost paths the winner minimizes the edge-id sequence read
    backwards from D, which is exactly what the relaxation's
    smaller-predecessor-edge rule produces.
    """
    n = pg.join_graph.n_aliases
    if n > max_aliases:
        raise CapacityError(f"brute force capped at {max_aliases} aliases, got {n}")
    costs = cost_all_edges(pg, y, p)
    best_path: Optional[Path] = None
    best_key: Optional[tuple] = None
    for path in enumerate_paths(pg):
        key = (path_cost(pg, path, costs), tuple(reversed(path)))
        if best_key is None or key < best_key:
            best_key = key
            best_path = path
    assert best_path is not None and best_key is not None
    return SearchResult(best_path, best_key[0])
