"""A small feed-forward cardinality estimator with manual backprop.

The network maps a sub-plan feature vector to a scalar log-cardinality,
clamped per sub-plan to [log 1, log(product of member row counts)]. Two
training signals are supported:

- qerror: mean |log y_est - log y_true| over sub-plans (the smooth
  log-space surrogate; the exact max-ratio is used only as an evaluation
  metric), batched over sub-plans.
- flowloss: the flow-based plan-cost surrogate, batched over whole queries
  since one loss term needs a full plan graph. Each query's loss is
  normalized by its value at the true cardinalities so queries of very
  different cost scales contribute comparably; the per-node gradient is
  chained through exp() into log space and backpropagated.

All updates are plain minibatch gradient descent by default; momentum and
adam are available behind the config. Runs are bitwise deterministic for a
fixed seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .costs import CostParams
from .errors import ConfigError, TrainingError
from .loss import flow_loss, flow_loss_with_grad
from .plangraph import PlanGraph
from .search import p_cost, q_error


@dataclass
class TrainConfig:
    loss: str = "qerror"             # qerror | flowloss
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 64             # sub-plans (qerror) or queries (flowloss)
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    init_scale: float = 1.0          # multiplies the 1/sqrt(fan_in) baseline
    optimizer: str = "sgd"           # sgd | momentum | adam
    momentum: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0           # 0 disables clipping

    def __post_init__(self):
        if self.loss not in ("qerror", "flowloss"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("hyperparameters must be positive")


class Model:
    """Rectifier MLP with a scalar output; weights stored as dense arrays."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases
        self.layer_sizes = [weights[0].shape[0]] + [w.shape[1] for w in weights]

    @classmethod
    def init(cls, input_dim: int, hidden: tuple[int, ...], seed: int,
             init_scale: float = 1.0) -> "Model":
        rng = np.random.default_rng(seed)
        sizes = [input_dim, *hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = init_scale / math.sqrt(fan_in)
            weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Raw (unclamped) log-cardinality per row, plus the backprop cache."""
        h = np.atleast_2d(x)
        cache = []
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w + b
            cache.append((h, pre))
            h = np.maximum(pre, 0.0) if li < len(self.weights) - 1 else pre
        return h[:, 0], cache

    def backward(self, cache: list, dz: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Gradients per layer for per-row output gradients ``dz``."""
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        delta = np.atleast_2d(dz).reshape(-1, 1)
        for li in range(len(self.weights) - 1, -1, -1):
            h, pre = cache[li]
            grads[li] = (h.T @ delta, delta.sum(axis=0))
            if li > 0:
                delta = (delta @ self.weights[li].T) * (cache[li][0] > 0)
        return grads

    def predict_log(self, x: np.ndarray, log_caps: np.ndarray) -> np.ndarray:
        z, _ = self.forward(x)
        return np.clip(z, 0.0, log_caps)


def predict(model: Model, fv: np.ndarray, log_cap: float) -> float:
    """Estimated rows for one feature vector; always >= 1 and <= exp(log_cap)."""
    if fv.shape[-1] != model.layer_sizes[0]:
        raise ConfigError(
            f"feature vector length {fv.shape[-1]} does not match model "
            f"input {model.layer_sizes[0]}")
    return float(np.exp(model.predict_log(fv.reshape(1, -1), np.array([log_cap]))[0]))


@dataclass
class QuerySample:
    """One query's featurized sub-plans plus its labels and plan graph."""

    qid: str
    pg: PlanGraph
    features: np.ndarray   # (n_nodes - 1, dim); row k describes node k + 1
    log_caps: np.ndarray   # (n_nodes - 1,)
    y_true: np.ndarray     # node-indexed labels, entry 0 (S) fixed at 1.0
    l_min: Optional[float] = field(default=None, compare=False)


def model_estimates(model: Model, sample: QuerySample) -> np.ndarray:
    """Node-indexed cardinality estimates (S entry = 1)."""
    z = model.predict_log(sample.features, sample.log_caps)
    y = np.ones(sample.pg.n_nodes)
    y[1:] = np.exp(z)
    return y


# --------------------------------------------------------------------------
# Optimizers
# --------------------------------------------------------------------------

class _Updater:
    def __init__(self, model: Model, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.steps = 0
        shapes = [(w, b) for w, b in zip(model.weights, model.biases)]
        if cfg.optimizer in ("momentum", "adam"):
            self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in shapes]
        if cfg.optimizer == "adam":
            self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in shapes]

    def apply(self, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        cfg = self.cfg
        if cfg.grad_clip > 0:
            norm = math.sqrt(sum(float(np.sum(dw ** 2) + np.sum(db ** 2))
                                 for dw, db in grads))
            if norm > cfg.grad_clip:
                scale = cfg.grad_clip / norm
                grads = [(dw * scale, db * scale) for dw, db in grads]
        self.steps += 1
        for li, (dw, db) in enumerate(grads):
            if cfg.optimizer == "sgd":
                self.model.weights[li] -= cfg.learning_rate * dw
                self.model.biases[li] -= cfg.learning_rate * db
            elif cfg.optimizer == "momentum":
                mw, mb = self.m[li]
                mw *= cfg.momentum
                mw += dw
                mb *= cfg.momentum
                mb += db
                self.model.weights[li] -= cfg.learning_rate * mw
                self.model.biases[li] -= cfg.learning_rate * mb
            else:  # adam
                b1, b2, eps = cfg.momentum, cfg.adam_beta2, cfg.adam_eps
                mw, mb = self.m[li]
                vw, vb = self.v[li]
                mw *= b1
                mw += (1 - b1) * dw
                mb *= b1
                mb += (1 - b1) * db
                vw *= b2
                vw += (1 - b2) * dw ** 2
                vb *= b2
                vb += (1 - b2) * db ** 2
                corr1 = 1 - b1 ** self.steps
                corr2 = 1 - b2 ** self.steps
                self.model.weights[li] -= (cfg.learning_rate * (mw / corr1)
                                           / (np.sqrt(vw / corr2) + eps))
                self.model.biases[li] -= (cfg.learning_rate * (mb / corr1)
                                          / (np.sqrt(vb / corr2) + eps))


# --------------------------------------------------------------------------
# Loss plumbing
# --------------------------------------------------------------------------

def qerror_batch_objective(model: Model, features: np.ndarray, log_caps: np.ndarray,
                           log_labels: np.ndarray) -> tuple[float, list]:
    """Mean absolute log residual and parameter gradients for one batch."""
    z, cache = model.forward(features)
    inside = (z >= 0.0) & (z <= log_caps)
    zc = np.clip(z, 0.0, log_caps)
    residual = zc - log_labels
    loss = float(np.mean(np.abs(residual)))
    dz = np.sign(residual) * inside / len(residual)
    return loss, model.backward(cache, dz)


def flowloss_batch_objective(model: Model, samples: list[QuerySample],
                             cost_params: CostParams) -> tuple[float, list]:
    """Mean normalized flow loss over queries and parameter gradients.

    Gradient per query: the analytic node gradient, divided by the loss
    value at the true cardinalities, chained through exp() and the output
    clamp, then backpropagated; batch members are averaged.
    """
    total = 0.0
    grads = None
    for sample in samples:
        if sample.l_min is None:
            sample.l_min = flow_loss(sample.y_true, sample.y_true, sample.pg,
                                     cost_params).value
        z, cache = model.forward(sample.features)
        inside = (z >= 0.0) & (z <= sample.log_caps)
        zc = np.clip(z, 0.0, sample.log_caps)
        y_est = np.ones(sample.pg.n_nodes)
        y_est[1:] = np.exp(zc)
        breakdown = flow_loss_with_grad(y_est, sample.y_true, sample.pg, cost_params)
        scale = 1.0 / (sample.l_min * len(samples))
        total += breakdown.value * scale * len(samples) / len(samples)
        dz = breakdown.grad[1:] * y_est[1:] * inside * scale
        batch_grads = model.backward(cache, dz)
        if grads is None:
            grads = batch_grads
        else:
            grads = [(gw + dw, gb + db)
                     for (gw, gb), (dw, db) in zip(grads, batch_grads)]
    return total / len(samples), grads


# --------------------------------------------------------------------------
# Training and evaluation
# --------------------------------------------------------------------------

def percentile_nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    ordered = sorted(float(v) for v in values)
    if not ordered:
        raise ValueError("percentile of empty sequence")
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class MetricsReport:
    qerror_p50: float
    qerror_p90: float
    qerror_p99: float
    pcost_mean: float
    pcost_p90: float
    pcost_p99: float
    flowloss_mean: float
    subopt: list[tuple[str, float]]  # (qid, p_cost ratio vs true cardinalities)

    @property
    def subopt_mean(self) -> float:
        return sum(r for _, r in self.subopt) / len(self.subopt)


def evaluate_estimates(est_fn: Callable[[QuerySample], np.ndarray],
                       samples: list[QuerySample],
                       cost_params: CostParams = CostParams()) -> MetricsReport:
    qerrors: list[float] = []
    pcosts: list[float] = []
    flowlosses: list[float] = []
    subopt: list[tuple[str, float]] = []
    for sample in samples:
        y_est = est_fn(sample)
        qerrors.extend(q_error(t, e) for t, e in zip(sample.y_true[1:], y_est[1:]))
        pc = p_cost(y_est, sample.y_true, sample.pg, cost_params)
        pc_true = p_cost(sample.y_true, sample.y_true, sample.pg, cost_params)
        pcosts.append(pc)
        subopt.append((sample.qid, pc / pc_true))
        if sample.l_min is None:
            sample.l_min = flow_loss(sample.y_true, sample.y_true, sample.pg,
                                     cost_params).value
        flowlosses.append(flow_loss(y_est, sample.y_true, sample.pg,
                                    cost_params).value / sample.l_min)
    return MetricsReport(
        qerror_p50=percentile_nearest_rank(qerrors, 50),
        qerror_p90=percentile_nearest_rank(qerrors, 90),
        qerror_p99=percentile_nearest_rank(qerrors, 99),
        pcost_mean=float(np.mean(pcosts)),
        pcost_p90=percentile_nearest_rank(pcosts, 90),
        pcost_p99=percentile_nearest_rank(pcosts, 99),
        flowloss_mean=float(np.mean(flowlosses)),
        subopt=subopt,
    )


def evaluate(model: Model, samples: list[QuerySample],
             cost_params: CostParams = CostParams()) -> MetricsReport:
    return evaluate_estimates(lambda s: model_estimates(model, s), samples, cost_params)


def train(train_samples: list[QuerySample], val_samples: list[QuerySample],
          cfg: TrainConfig,
          cost_params: CostParams = CostParams()) -> tuple[Model, list[dict]]:
    """Train a model; returns it with a per-epoch metric log.

    The log has one row per (epoch, split) with the three tracked metrics,
    so learning curves can be written straight to CSV.
    """
    if not train_samples:
        raise ConfigError("no training samples")
    input_dim = train_samples[0].features.shape[1]
    model = Model.init(input_dim, cfg.hidden, cfg.seed, cfg.init_scale)
    updater = _Updater(model, cfg)
    rng = np.random.default_rng(cfg.seed + 1)

    flat_features = np.vstack([s.features for s in train_samples])
    flat_caps = np.concatenate([s.log_caps for s in train_samples])
    flat_labels = np.log(np.concatenate([s.y_true[1:] for s in train_samples]))

    log: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.loss == "qerror":
            order = rng.permutation(len(flat_labels))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss, grads = qerror_batch_objective(
                    model, flat_features[idx], flat_caps[idx], flat_labels[idx])
                if not math.isfinite(loss):
                    raise TrainingError(f"qerror loss diverged at epoch {epoch}")
                updater.apply(grads)
        else:
            order = rng.permutation(len(train_samples))
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
                loss, grads = flowloss_batch_objective(model, batch, cost_params)
                if not math.isfinite(loss):
                    raise TrainingError(f"flowloss diverged at epoch {epoch}")
                updater.apply(grads)
        for split, samples in (("train", train_samples), ("val", val_samples)):
            if not samples:
                continue
            report = evaluate(model, samples, cost_params)
            log.append({"epoch": epoch, "split": split,
                        "qerror_p50": report.qerror_p50,
                        "flowloss_mean": report.flowloss_mean,
                        "pcost_mean": report.pcost_mean})
    return model, log


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_model(model: Model, path, config: Optional[dict] = None) -> None:
    doc = {
        "layer_sizes": model.layer_sizes,
        "weights": [w.ravel().tolist() for w in model.weights],  # row-major
        "biases": [b.tolist() for b in model.biases],
        "config": config or {},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)


def load_model(path) -> tuple[Model, dict]:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    sizes = doc["layer_sizes"]
    weights = [np.array(flat).reshape(fan_in, fan_out)
               for flat, fan_in, fan_out in zip(doc["weights"], sizes[:-1], sizes[1:])]
    biases = [np.array(b) for b in doc["biases"]]
    return Model(weights, biases), doc.get("config", {})
