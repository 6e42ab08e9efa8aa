"""The analytic per-edge cost model and its gradients.

A join edge (u, v) with joined base alias b costs
``min(|u| + lam * |b|, |u| * |b|)`` where |u| is read from the source node
and |b| from the joined alias's singleton node (the filtered base-table
cardinality). The additive branch models an indexed nested loop join, the
multiplicative one a nested loop join without an index. Edges out of S are
costed as the scan of the entered table (cost = |b|) by default; the
"epsilon" convention prices them at the cost floor instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .plangraph import PlanGraph


@dataclass(frozen=True)
class CostParams:
    lam: float = 0.001          # index factor on the additive branch
    cost_floor: float = 1.0     # minimum edge cost; keeps conductances finite
    s_edge_cost: str = "scan"   # "scan" | "epsilon"

    def __post_init__(self):
        if not (self.lam > 0):
            raise ConfigError("lam must be > 0")
        if not (self.cost_floor > 0):
            raise ConfigError("cost_floor must be > 0")
        if self.s_edge_cost not in ("scan", "epsilon"):
            raise ConfigError(f"unknown s_edge_cost {self.s_edge_cost!r}")


def _check_card(x: float, name: str) -> None:
    if not math.isfinite(x) or x < 1:
        raise ValueError(f"{name} must be finite and >= 1, got {x!r}")


def edge_cost(u_card: float, b_card: float, p: CostParams = CostParams()) -> float:
    """Cost of a single join edge; floored at ``p.cost_floor``."""
    _check_card(u_card, "u_card")
    _check_card(b_card, "b_card")
    return max(p.cost_floor, min(u_card + p.lam * b_card, u_card * b_card))


def edge_cost_grad(u_card: float, b_card: float,
                   p: CostParams = CostParams()) -> tuple[float, float]:
    """(dC/du, dC/db) for a join edge.

    Exact branch ties take the index-branch derivative; an edge strictly
    below the floor has zero gradient. Both conventions are measure-zero
    kinks, fixed here so every caller agrees.
    """
    _check_card(u_card, "u_card")
    _check_card(b_card, "b_card")
    index_val = u_card + p.lam * b_card
    nl_val = u_card * b_card
    if min(index_val, nl_val) < p.cost_floor:
        return (0.0, 0.0)
    if index_val <= nl_val:
        return (1.0, p.lam)
    return (b_card, u_card)


def validate_cardinalities(pg: PlanGraph, y: np.ndarray) -> None:
    """Check a node-indexed cardinality vector: entry 0 (S) is ignored."""
    if y.shape != (pg.n_nodes,):
        raise ValueError(f"cardinality vector must have shape ({pg.n_nodes},), got {y.shape}")
    body = y[1:]
    if not np.all(np.isfinite(body)) or np.any(body < 1):
        raise ValueError("all cardinalities (except S) must be finite and >= 1")


def cardinality_vector(pg: PlanGraph, values: dict[int, float]) -> np.ndarray:
    """Build a node-indexed vector from a {node id: rows} map; S entry fixed at 1."""
    y = np.ones(pg.n_nodes)
    for node, v in values.items():
        if not (0 < node < pg.n_nodes):
            raise ValueError(f"node id {node} out of range")
        y[node] = v
    missing = [n for n in range(1, pg.n_nodes) if n not in values]
    if missing:
        raise ValueError(f"missing cardinalities for nodes {missing}")
    validate_cardinalities(pg, y)
    return y


def cost_all_edges(pg: PlanGraph, y: np.ndarray, p: CostParams = CostParams()) -> np.ndarray:
    """Edge-indexed cost vector under cardinality vector ``y``.

    |u| is read from the edge's source node, |b| from the singleton node of
    the joined alias; S-edges follow the configured convention.
    """
    validate_cardinalities(pg, y)
    u = y[pg.edge_src]
    b = y[pg.edge_base]
    costs = np.minimum(u + p.lam * b, u * b)
    s_mask = pg.edge_src == pg.S
    if p.s_edge_cost == "scan":
        costs[s_mask] = b[s_mask]
    else:
        costs[s_mask] = p.cost_floor
    return np.maximum(costs, p.cost_floor)


def cost_all_edges_grad(pg: PlanGraph, y: np.ndarray,
                        p: CostParams = CostParams()) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge (dC/d|u|, dC/d|b|) stacked as two edge-indexed arrays.

    The |u| column refers to the edge's source node and the |b| column to
    the joined alias's singleton node; S-edges have no |u| dependency.
    """
    validate_cardinalities(pg, y)
    u = y[pg.edge_src]
    b = y[pg.edge_base]
    index_val = u + p.lam * b
    nl_val = u * b
    index_active = index_val <= nl_val
    dc_du = np.where(index_active, 1.0, b)
    dc_db = np.where(index_active, p.lam, u)
    floored = np.minimum(index_val, nl_val) < p.cost_floor
    dc_du[floored] = 0.0
    dc_db[floored] = 0.0
    s_mask = pg.edge_src == pg.S
    dc_du[s_mask] = 0.0
    if p.s_edge_cost == "scan":
        dc_db[s_mask] = np.where(b[s_mask] < p.cost_floor, 0.0, 1.0)
    else:
        dc_db[s_mask] = 0.0
    return dc_du, dc_db
