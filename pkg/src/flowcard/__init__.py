"""Differentiable plan-cost surrogates for cardinality estimation.

Library layout:

- joins: schemas, queries, join graphs, connected sub-plan enumeration
- plangraph: the left-deep plan DAG and path utilities
- costs: the analytic edge cost model and its gradients
- search: exact cheapest-plan search and the plan-quality metrics
- flows: electrical-flow relaxation (grounded Laplacian solve)
- loss: the flow-based loss, its analytic gradient, sensitivity sweeps
- features: fixed-length sub-plan featurization and heuristic estimates
- model: a small feed-forward estimator with manual backprop
- synth: synthetic databases, exact and random-walk labeling
- workload: template-driven query generation and splits
- cli: end-to-end pipeline commands
"""

__version__ = "0.1.0"
