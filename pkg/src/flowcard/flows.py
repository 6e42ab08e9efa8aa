"""Electrical-flow relaxation of plan search.

Edge costs act as resistances and one unit of current is pushed from S to
D; the resulting currents are the unique minimizer of the dissipated
energy sum(cost_e * F_e^2) over all feasible unit flows. Voltages come
from the grounded Laplacian system: D's row and column are dropped (v_D is
pinned to 0), leaving a symmetric positive definite matrix solved by dense
Cholesky factorization. The factorization is kept on the solution object
because the loss gradient reuses it for one adjoint solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NumericalError
from .plangraph import PlanGraph

RESIDUAL_RTOL = 1e-8


@dataclass
class FlowSolution:
    """Signed per-edge flows and node voltages (v[D] == 0)."""

    pg: PlanGraph
    costs: np.ndarray
    conductances: np.ndarray
    voltages: np.ndarray
    flows: np.ndarray
    _cho: tuple = field(repr=False, default=None)

    def solve_grounded(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the grounded Laplacian for a full node-indexed RHS.

        The D entry of the RHS is dropped (grounded) and the solution is
        re-embedded with 0 at D. Reuses the forward factorization.
        """
        out = np.zeros(self.pg.n_nodes)
        out[:-1] = cho_solve(self._cho, rhs[:-1])
        return out


def _source_vector(pg: PlanGraph) -> np.ndarray:
    i = np.zeros(pg.n_nodes)
    i[pg.S] = 1.0
    i[pg.D] = -1.0
    return i


def f_opt(pg: PlanGraph, costs: np.ndarray) -> FlowSolution:
    """Solve for the energy-minimizing unit S-to-D flow.

    Raises NumericalError (with a condition-number diagnostic) if the
    factorization fails or the full-system residual exceeds tolerance.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (pg.n_edges,):
        raise ValueError(f"expected {pg.n_edges} edge costs, got shape {costs.shape}")
    if not np.all(np.isfinite(costs)) or np.any(costs <= 0):
        raise ValueError("edge costs must be positive and finite")
    g = 1.0 / costs
    x = pg.incidence
    lap = (x * g) @ x.T
    reduced = lap[:-1, :-1]  # D is always the last node id
    i = _source_vector(pg)
    try:
        cho = cho_factor(reduced)
    except LinAlgError as exc:
        cond = float(np.linalg.cond(reduced))
        raise NumericalError(
            f"Laplacian factorization failed (condition estimate {cond:.3e})") from exc
    voltages = np.zeros(pg.n_nodes)
    voltages[:-1] = cho_solve(cho, i[:-1])
    residual = float(np.max(np.abs(lap @ voltages - i)))
    if residual > RESIDUAL_RTOL * float(np.max(np.abs(i))):
        cond = float(np.linalg.cond(reduced))
        raise NumericalError(
            f"voltage solve residual {residual:.3e} exceeds tolerance "
            f"(condition estimate {cond:.3e})")
    flows = g * (voltages[pg.edge_src] - voltages[pg.edge_dst])
    return FlowSolution(pg, costs, g, voltages, flows, _cho=cho)


def solve_voltages(pg: PlanGraph, costs: np.ndarray) -> np.ndarray:
    return f_opt(pg, costs).voltages


def energy(solution, costs: np.ndarray) -> float:
    """sum(cost_e * F_e^2); accepts a FlowSolution or a bare flow array."""
    flows = getattr(solution, "flows", solution)
    if len(flows) != len(costs):
        raise ValueError("flows and costs must have matching length")
    return float(np.dot(costs, np.square(flows)))


def verify_conservation(pg: PlanGraph, solution) -> float:
    """Max node imbalance; S and D are measured against +1/-1 net outflow."""
    flows = getattr(solution, "flows", solution)
    net = np.zeros(pg.n_nodes)
    np.add.at(net, pg.edge_src, flows)
    np.add.at(net, pg.edge_dst, -flows)
    return float(np.max(np.abs(net - _source_vector(pg))))
