"""Template-driven query generation and workload splitting.

Templates are TOML files with a [base] table (join skeleton) and a list of
[[predicates]] rules. Rules either draw one value uniformly from a list
(uniform_list) or sample groups of correlated column values together
(dependent_group): the candidate value tuples come from a group-by over
the table after applying the rule's dependency predicates, weighted by
group frequency, and 2 to 7 tuples (configurable) are drawn per query.
Queries whose predicates empty out any single alias are rejected and
resampled a bounded number of times.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, GenerationError, SchemaError
from .joins import InPredicate, JoinEdge, JoinGraph, LikePredicate, Predicate, Query, RangePredicate
from .synth import Database, filter_mask

MAX_QUERY_RETRIES = 80


@dataclass(frozen=True)
class UniformListRule:
    alias: str
    column: str
    op: str           # lte | gte | eq | like
    values: tuple

    def covered(self) -> list[tuple[str, str]]:
        return [(self.alias, self.column)]


@dataclass(frozen=True)
class DependentGroupRule:
    alias: str
    columns: tuple[str, ...]          # grouped columns, sampled jointly
    depends_on: tuple[str, ...] = ()  # columns of the same alias, from earlier rules
    min_samples: int = 2
    max_samples: int = 7

    def covered(self) -> list[tuple[str, str]]:
        return [(self.alias, c) for c in self.columns]


@dataclass(frozen=True)
class TemplateSpec:
    name: str
    tables: tuple[str, ...]
    aliases: tuple[str, ...]
    joins: tuple[tuple[str, str, str, str], ...]  # (alias_a, col_a, alias_b, col_b)
    rules: tuple = ()

    def __post_init__(self):
        if len(self.tables) != len(self.aliases):
            raise ConfigError(f"template {self.name!r}: tables and aliases must align")
        covered = [slot for rule in self.rules for slot in rule.covered()]
        if len(covered) != len(set(covered)):
            raise ConfigError(f"template {self.name!r}: a predicate slot is covered twice")
        produced: set[tuple[str, str]] = set()
        for rule in self.rules:
            if isinstance(rule, DependentGroupRule):
                for dep in rule.depends_on:
                    if (rule.alias, dep) not in produced:
                        raise ConfigError(
                            f"template {self.name!r}: dependency {rule.alias}.{dep} "
                            "is not produced by an earlier rule")
            produced.update(rule.covered())


def parse_template(path) -> TemplateSpec:
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    try:
        base = doc["base"]
        tables = tuple(base["tables"])
        aliases = tuple(base.get("aliases", tables))
        joins = []
        for j in base["joins"]:
            left, right = (s.strip() for s in j.split("="))
            la, lc = left.split(".")
            ra, rc = right.split(".")
            joins.append((la, lc, ra, rc))
        rules = []
        for r in doc.get("predicates", []):
            kind = r["kind"]
            if kind == "uniform_list":
                rules.append(UniformListRule(r["alias"], r["column"], r["op"],
                                             tuple(r["values"])))
            elif kind == "dependent_group":
                rules.append(DependentGroupRule(
                    r["alias"], tuple(r["columns"]),
                    tuple(r.get("depends_on", ())),
                    int(r.get("min_samples", 2)), int(r.get("max_samples", 7))))
            else:
                raise ConfigError(f"unknown predicate rule kind {kind!r}")
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed template {path}: {exc}") from exc
    return TemplateSpec(base.get("name", FsPath(path).stem), tables, aliases,
                        tuple(joins), tuple(rules))


def template_join_graph(db: Database, template: TemplateSpec) -> JoinGraph:
    relations = [db.relation(t, rid) for rid, t in enumerate(template.tables)]
    alias_index = {a: i for i, a in enumerate(template.aliases)}
    edges = []
    for la, lc, ra, rc in template.joins:
        if la not in alias_index or ra not in alias_index:
            raise SchemaError(f"template {template.name!r} joins unknown alias")
        edges.append(JoinEdge(alias_index[la], alias_index[ra], lc, rc))
    return JoinGraph(relations, template.aliases, edges)


def _column_domain(jg: JoinGraph, alias: int, column: str) -> tuple[float, float]:
    col = jg.relations[alias].column(column)
    return float(col.lo), float(col.hi)


def sample_dependent_group(candidates: list[tuple], weights: np.ndarray,
                           rng: np.random.Generator, lo: int, hi: int) -> list[tuple]:
    """Draw between lo and hi distinct candidate tuples, frequency-weighted."""
    if not candidates:
        return []
    k = int(rng.integers(lo, hi + 1))
    k = min(k, len(candidates))
    probs = weights / weights.sum()
    idx = rng.choice(len(candidates), size=k, replace=False, p=probs)
    return [candidates[i] for i in sorted(idx)]


class _CandidateCache:
    """Grouped candidate lists per (rule, dependency predicate choice)."""

    def __init__(self, db: Database, jg: JoinGraph):
        self.db = db
        self.jg = jg
        self.cache: dict = {}

    def get(self, rule: DependentGroupRule, alias: int,
            dep_preds: tuple[Predicate, ...]) -> tuple[list[tuple], np.ndarray]:
        key = (rule, dep_preds)
        if key in self.cache:
            return self.cache[key]
        probe = Query(self.jg, dep_preds, qid="_candidates")
        mask = filter_mask(self.db, probe, alias)
        frame = self.db.tables[self.jg.relations[alias].name].loc[mask, list(rule.columns)]
        if len(frame) == 0:
            result: tuple[list[tuple], np.ndarray] = ([], np.zeros(0))
        else:
            grouped = frame.value_counts().sort_index()
            candidates = [t if isinstance(t, tuple) else (t,) for t in grouped.index]
            result = (candidates, grouped.to_numpy(dtype=float))
        self.cache[key] = result
        return result


def generate_queries(db: Database, template: TemplateSpec, n: int, seed: int) -> list[Query]:
    """Generate ``n`` queries for one template, deterministically per seed."""
    jg = template_join_graph(db, template)
    alias_index = {a: i for i, a in enumerate(template.aliases)}
    cache = _CandidateCache(db, jg)
    rng = np.random.default_rng(seed)
    queries: list[Query] = []
    attempts = 0
    last_failure = "none"
    while len(queries) < n:
        attempts += 1
        if attempts > MAX_QUERY_RETRIES * max(n, 1):
            raise GenerationError(
                f"template {template.name!r}: retries exhausted "
                f"(last failing rule: {last_failure})")
        preds: list[Predicate] = []
        failed_rule = None
        for rule in template.rules:
            alias = alias_index[rule.alias]
            if isinstance(rule, UniformListRule):
                value = rule.values[int(rng.integers(len(rule.values)))]
                lo, hi = (None, None)
                if rule.op in ("lte", "gte"):
                    lo, hi = _column_domain(jg, alias, rule.column)
                if rule.op == "lte":
                    preds.append(RangePredicate(alias, rule.column, lo, float(value)))
                elif rule.op == "gte":
                    preds.append(RangePredicate(alias, rule.column, float(value), hi))
                elif rule.op == "eq":
                    preds.append(InPredicate(alias, rule.column, (value,)))
                elif rule.op == "like":
                    preds.append(LikePredicate(alias, rule.column, str(value)))
                else:
                    raise ConfigError(f"unknown uniform_list op {rule.op!r}")
            else:
                dep_preds = tuple(p for p in preds
                                  if p.alias == alias and p.column in rule.depends_on)
                candidates, weights = cache.get(rule, alias, dep_preds)
                picked = sample_dependent_group(candidates, weights, rng,
                                                rule.min_samples, rule.max_samples)
                if not picked:
                    failed_rule = rule
                    break
                for ci, col in enumerate(rule.columns):
                    values = tuple(sorted({_as_native(t[ci]) for t in picked}))
                    preds.append(InPredicate(alias, col, values))
        if failed_rule is not None:
            last_failure = f"{failed_rule.alias}.{','.join(failed_rule.columns)}"
            continue
        query = Query(jg, tuple(preds), qid=f"{template.name}-{len(queries)}",
                      template=template.name)
        empty_alias = None
        for alias in range(jg.n_aliases):
            if not filter_mask(db, query, alias).any():
                empty_alias = alias
                break
        if empty_alias is not None:
            last_failure = _rule_for_alias(template, template.aliases[empty_alias])
            continue
        queries.append(query)
    return queries


def _as_native(value):
    return value.item() if hasattr(value, "item") else value


def _rule_for_alias(template: TemplateSpec, alias: str) -> str:
    for rule in template.rules:
        if rule.alias == alias:
            if isinstance(rule, UniformListRule):
                return f"{alias}.{rule.column}"
            return f"{alias}.{','.join(rule.columns)}"
    return f"{alias}.<no rule>"


# --------------------------------------------------------------------------
# Splits
# --------------------------------------------------------------------------

@dataclass
class Workload:
    queries: list[Query]
    templates: list[str]

    def by_template(self) -> dict[str, list[Query]]:
        out: dict[str, list[Query]] = {t: [] for t in self.templates}
        for q in self.queries:
            out[q.template].append(q)
        return out


@dataclass
class WorkloadSplit:
    mode: str
    train: list[str]  # query ids
    val: list[str]
    test: list[str]
    train_templates: list[str] = field(default_factory=list)
    test_templates: list[str] = field(default_factory=list)


def split_workload(workload: Workload, mode: str, seed: int,
                   fractions: tuple[float, float] = (0.4, 0.2)) -> WorkloadSplit:
    """Partition queries for evaluation.

    seen: per-template seeded shuffle into train/val/test fractions
    (default 40/20/40). unseen: templates halved by seeded shuffle; queries
    from test templates are held out entirely, and a validation fifth is
    carved out of the training templates' queries.
    """
    rng = np.random.default_rng(seed)
    if mode == "seen":
        train, val, test = [], [], []
        for template, queries in sorted(workload.by_template().items()):
            ids = [q.qid for q in queries]
            order = rng.permutation(len(ids))
            n_train = int(len(ids) * fractions[0])
            n_val = int(len(ids) * fractions[1])
            for rank, pos in enumerate(order):
                if rank < n_train:
                    train.append(ids[pos])
                elif rank < n_train + n_val:
                    val.append(ids[pos])
                else:
                    test.append(ids[pos])
        return WorkloadSplit("seen", sorted(train), sorted(val), sorted(test))
    if mode == "unseen":
        templates = sorted(workload.templates)
        if len(templates) < 2:
            raise ConfigError("unseen split needs at least 2 templates")
        order = rng.permutation(len(templates))
        half = len(templates) // 2
        train_templates = sorted(templates[i] for i in order[:half])
        test_templates = sorted(templates[i] for i in order[half:])
        by_template = workload.by_template()
        train, val, test = [], [], []
        for t in train_templates:
            ids = [q.qid for q in by_template[t]]
            sub = rng.permutation(len(ids))
            n_val = int(len(ids) * 0.2)
            for rank, pos in enumerate(sub):
                (val if rank < n_val else train).append(ids[pos])
        for t in test_templates:
            test.extend(q.qid for q in by_template[t])
        return WorkloadSplit("unseen", sorted(train), sorted(val), sorted(test),
                             train_templates, test_templates)
    raise ConfigError(f"unknown split mode {mode!r}")


def split_to_json(split: WorkloadSplit) -> dict:
    return {"mode": split.mode, "train": split.train, "val": split.val,
            "test": split.test, "train_templates": split.train_templates,
            "test_templates": split.test_templates}


def save_workload_manifest(workload: Workload, split: WorkloadSplit, path) -> None:
    """Manifest JSON: query ids, their templates, and split membership."""
    membership = {}
    for name, ids in (("train", split.train), ("val", split.val), ("test", split.test)):
        for qid in ids:
            membership[qid] = name
    doc = {
        "templates": sorted(workload.templates),
        "queries": [{"qid": q.qid, "template": q.template,
                     "split": membership.get(q.qid, "unassigned")}
                    for q in workload.queries],
        "split": split_to_json(split),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
