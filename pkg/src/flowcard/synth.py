"""Synthetic relational databases and sub-plan cardinality labeling.

Databases are generated deterministically per seed with zipf-skewed
columns, referentially intact foreign keys, and optional within-table
column correlations. Labels come from two routes: an exact hash-join
evaluator (budgeted; blowups become TIMEOUT records labeled with a large
constant) and an index-guided random-walk estimator that first filters the
base tables once per query and then reuses those filtered tables and
indexes for every sub-plan.
"""
from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np
import pandas as pd

from .errors import CapacityError, ConfigError, SchemaError
from .joins import (Column, InPredicate, JoinEdge, JoinGraph, LikePredicate, Query,
                    RangePredicate, Relation)

ROW_BUDGET_CAP = 100_000       # per-table row count ceiling
TIMEOUT = object()             # sentinel returned by exact_cardinality on blowup
TIMEOUT_LABEL_FACTOR = 10      # timeout label = factor * row budget


# --------------------------------------------------------------------------
# Schema specification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str            # integer | categorical | string
    domain: int = 100    # integer/categorical: values 0..domain-1; string: pool size
    zipf: float = 0.0    # frequency skew; 0 = uniform
    alphabet: int = 8    # string columns: distinct characters used
    length: int = 6      # string columns: string length

    def __post_init__(self):
        if self.kind not in ("integer", "categorical", "string"):
            raise ConfigError(f"unknown column kind {self.kind!r}")
        if self.domain < 1:
            raise ConfigError(f"column {self.name!r} needs domain >= 1")
        if self.zipf < 0:
            raise ConfigError("zipf skew must be >= 0")


@dataclass(frozen=True)
class TableSpec:
    name: str
    rows: int
    columns: tuple[ColumnSpec, ...] = ()


@dataclass(frozen=True)
class ForeignKey:
    """child.column references parent's implicit integer key column "id"."""
    child: str
    column: str
    parent: str
    zipf: float = 0.0


@dataclass(frozen=True)
class CorrelationSpec:
    """target column copies a fixed mixing of source with probability strength."""
    table: str
    source: str
    target: str
    strength: float = 0.8


@dataclass(frozen=True)
class SchemaSpec:
    tables: tuple[TableSpec, ...]
    foreign_keys: tuple[ForeignKey, ...] = ()
    correlations: tuple[CorrelationSpec, ...] = ()

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate table names in schema spec")
        for t in self.tables:
            if t.rows < 1 or t.rows > ROW_BUDGET_CAP:
                raise CapacityError(
                    f"table {t.name!r} rows {t.rows} outside [1, {ROW_BUDGET_CAP}]")
        by_name = set(names)
        for fk in self.foreign_keys:
            if fk.child not in by_name or fk.parent not in by_name:
                raise ConfigError(f"foreign key {fk} references unknown tables")
        if len(self.tables) > 1:
            # the FK graph over tables must be connected
            adj: dict[str, set[str]] = {n: set() for n in names}
            for fk in self.foreign_keys:
                adj[fk.child].add(fk.parent)
                adj[fk.parent].add(fk.child)
            seen = {names[0]}
            frontier = [names[0]]
            while frontier:
                cur = frontier.pop()
                for nxt in adj[cur]:
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
            if seen != by_name:
                raise ConfigError("foreign-key graph must connect all tables")

    def table(self, name: str) -> TableSpec:
        for t in self.tables:
            if t.name == name:
                return t
        raise SchemaError(f"no table {name!r} in schema spec")


def schema_spec_to_json(spec: SchemaSpec) -> dict:
    return {
        "tables": [{"name": t.name, "rows": t.rows,
                    "columns": [vars(c) for c in t.columns]} for t in spec.tables],
        "foreign_keys": [vars(fk) for fk in spec.foreign_keys],
        "correlations": [vars(c) for c in spec.correlations],
    }


def schema_spec_from_json(d: dict) -> SchemaSpec:
    return SchemaSpec(
        tuple(TableSpec(t["name"], t["rows"],
                        tuple(ColumnSpec(**c) for c in t["columns"]))
              for t in d["tables"]),
        tuple(ForeignKey(**fk) for fk in d.get("foreign_keys", [])),
        tuple(CorrelationSpec(**c) for c in d.get("correlations", [])),
    )


def load_schema_spec(path) -> SchemaSpec:
    with open(path, encoding="utf-8") as f:
        return schema_spec_from_json(json.load(f))


# --------------------------------------------------------------------------
# Database generation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnStats:
    kind: str
    lo: float
    hi: float
    n_distinct: int
    alphabet: int = 26


@dataclass(frozen=True)
class TableStats:
    row_count: int
    columns: dict[str, ColumnStats]


DbStats = dict[str, TableStats]


@dataclass
class Database:
    spec: SchemaSpec
    tables: dict[str, pd.DataFrame]

    def stats(self) -> DbStats:
        out: DbStats = {}
        for name, frame in self.tables.items():
            cols: dict[str, ColumnStats] = {}
            tspec = self.spec.table(name)
            kinds = {c.name: c for c in tspec.columns}
            for col in frame.columns:
                values = frame[col]
                if col == "id" or (col in kinds and kinds[col].kind != "string"):
                    kind = "integer" if col == "id" else kinds[col].kind
                    cols[col] = ColumnStats(kind, float(values.min()), float(values.max()),
                                            int(values.nunique()))
                elif col in kinds:
                    cols[col] = ColumnStats("string", 0.0, 0.0, int(values.nunique()),
                                            alphabet=kinds[col].alphabet)
                else:  # foreign key column
                    cols[col] = ColumnStats("integer", float(values.min()), float(values.max()),
                                            int(values.nunique()))
            out[name] = TableStats(len(frame), cols)
        return out

    def relation(self, name: str, rid: int) -> Relation:
        """Relation descriptor for building join graphs over this database."""
        tspec = self.spec.table(name)
        frame = self.tables[name]
        columns = [Column("id", "integer", 0, len(frame) - 1)]
        for fk in self.spec.foreign_keys:
            if fk.child == name:
                parent_rows = len(self.tables[fk.parent])
                columns.append(Column(fk.column, "integer", 0, parent_rows - 1))
        for c in tspec.columns:
            if c.kind == "string":
                columns.append(Column(c.name, "string", alphabet=c.alphabet))
            else:
                columns.append(Column(c.name, c.kind, 0, c.domain - 1))
        return Relation(rid, name, len(frame), tuple(columns))


def _zipf_probs(k: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, k + 1, dtype=float)
    weights = ranks ** -skew if skew > 0 else np.ones(k)
    return weights / weights.sum()


def _string_pool(rng: np.random.Generator, size: int, alphabet: int, length: int) -> list[str]:
    letters = np.array(list(string.ascii_lowercase[:alphabet]))
    pool = set()
    out = []
    while len(out) < size:
        s = "".join(rng.choice(letters, size=length))
        if s not in pool:
            pool.add(s)
            out.append(s)
    return out


def generate_db(spec: SchemaSpec, seed: int) -> Database:
    """Deterministic per seed. Every table gets an implicit "id" key column."""
    rng = np.random.default_rng(seed)
    tables: dict[str, pd.DataFrame] = {}
    for tspec in spec.tables:
        data: dict[str, np.ndarray] = {"id": np.arange(tspec.rows, dtype=np.int64)}
        for cspec in tspec.columns:
            if cspec.kind == "string":
                pool = np.array(_string_pool(rng, cspec.domain, cspec.alphabet, cspec.length))
                probs = _zipf_probs(cspec.domain, cspec.zipf)
                data[cspec.name] = rng.choice(pool, size=tspec.rows, p=probs)
            else:
                probs = _zipf_probs(cspec.domain, cspec.zipf)
                data[cspec.name] = rng.choice(cspec.domain, size=tspec.rows,
                                              p=probs).astype(np.int64)
        tables[tspec.name] = pd.DataFrame(data)
    for fk in spec.foreign_keys:
        parent_rows = len(tables[fk.parent])
        probs = _zipf_probs(parent_rows, fk.zipf)
        child_rows = len(tables[fk.child])
        tables[fk.child][fk.column] = rng.choice(parent_rows, size=child_rows,
                                                 p=probs).astype(np.int64)
    for corr in spec.correlations:
        frame = tables[corr.table]
        src = frame[corr.source].to_numpy()
        tgt = frame[corr.target].to_numpy().copy()
        tgt_spec = next(c for c in spec.table(corr.table).columns if c.name == corr.target)
        if tgt_spec.kind == "string":
            raise ConfigError("correlations only supported between numeric columns")
        mixed = (src.astype(np.int64) * 31 + 7) % tgt_spec.domain
        take = rng.random(len(frame)) < corr.strength
        tgt[take] = mixed[take]
        tables[corr.table][corr.target] = tgt
    return Database(spec, tables)


def save_db(db: Database, out_dir) -> None:
    """Directory of per-table delimited text files plus a JSON stats sidecar."""
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, frame in db.tables.items():
        frame.to_csv(out / f"{name}.csv", index=False, lineterminator="\n")
    with open(out / "schema.json", "w", encoding="utf-8") as f:
        json.dump(schema_spec_to_json(db.spec), f, indent=1, sort_keys=True)
    stats_doc = {
        name: {"row_count": ts.row_count,
               "columns": {c: vars(cs) for c, cs in sorted(ts.columns.items())}}
        for name, ts in sorted(db.stats().items())
    }
    with open(out / "stats.json", "w", encoding="utf-8") as f:
        json.dump(stats_doc, f, indent=1, sort_keys=True)


def load_db(db_dir) -> Database:
    root = FsPath(db_dir)
    spec = load_schema_spec(root / "schema.json")
    tables = {}
    for tspec in spec.tables:
        frame = pd.read_csv(root / f"{tspec.name}.csv")
        str_cols = [c.name for c in tspec.columns if c.kind == "string"]
        for c in str_cols:
            frame[c] = frame[c].astype(str)
        tables[tspec.name] = frame
    return Database(spec, tables)


def load_stats(db_dir) -> DbStats:
    with open(FsPath(db_dir) / "stats.json", encoding="utf-8") as f:
        doc = json.load(f)
    return {name: TableStats(t["row_count"],
                             {c: ColumnStats(**cs) for c, cs in t["columns"].items()})
            for name, t in doc.items()}


# --------------------------------------------------------------------------
# Predicate evaluation
# --------------------------------------------------------------------------

def like_to_regex(pattern: str) -> re.Pattern:
    parts = []
    for ch in pattern:
        if ch == "%":
            parts.append(".*")
        elif ch == "_":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("^" + "".join(parts) + "$")


def filter_mask(db: Database, query: Query, alias: int) -> np.ndarray:
    """Boolean row mask for one alias after applying all its predicates."""
    rel = query.join_graph.relations[alias]
    frame = db.tables[rel.name]
    mask = np.ones(len(frame), dtype=bool)
    for pred in query.predicates_for(alias):
        col = frame[pred.column]
        if isinstance(pred, RangePredicate):
            values = col.to_numpy()
            mask &= (values >= pred.lo) & (values <= pred.hi)
        elif isinstance(pred, InPredicate):
            mask &= col.isin(pred.values).to_numpy()
        elif isinstance(pred, LikePredicate):
            rx = like_to_regex(pred.pattern)
            mask &= np.fromiter((rx.match(s) is not None for s in col),
                                dtype=bool, count=len(frame))
        else:
            raise SchemaError(f"unsupported predicate {pred!r}")
    return mask


def filtered_table(db: Database, query: Query, alias: int) -> pd.DataFrame:
    rel = query.join_graph.relations[alias]
    return db.tables[rel.name][filter_mask(db, query, alias)]


# --------------------------------------------------------------------------
# Exact evaluation
# --------------------------------------------------------------------------

@dataclass
class EffortCounter:
    rows_touched: int = 0
    walks: int = 0
    hops: int = 0


def join_order(members: int, jg: JoinGraph) -> list[int]:
    """Deterministic connected order: start at the lowest alias, repeatedly
    append the lowest alias adjacent to the set so far."""
    aliases = [a for a in range(jg.n_aliases) if (members >> a) & 1]
    if not aliases:
        return []
    order = [aliases[0]]
    placed = 1 << aliases[0]
    while len(order) < len(aliases):
        nxt = None
        for a in aliases:
            if (placed >> a) & 1:
                continue
            if jg.adjacency[a] & placed:
                nxt = a
                break
        if nxt is None:
            raise ValueError("sub-plan is not connected")
        order.append(nxt)
        placed |= 1 << nxt
    return order


def _alias_frame(db: Database, query: Query, alias: int) -> pd.DataFrame:
    frame = filtered_table(db, query, alias)
    return frame.add_prefix(f"a{alias}__")


def exact_cardinality(db: Database, query: Query, subplan: int, row_budget: int,
                      effort: EffortCounter | None = None,
                      order: list[int] | None = None):
    """Exact inner-join count after per-alias predicates, or TIMEOUT.

    Joins are evaluated as successive hash joins in a deterministic
    connected alias order; whenever an intermediate result exceeds
    ``row_budget`` rows the sentinel TIMEOUT is returned instead.
    """
    jg = query.join_graph
    if order is None:
        order = join_order(subplan, jg)
    current = _alias_frame(db, query, order[0])
    if effort is not None:
        effort.rows_touched += len(current)
    placed = 1 << order[0]
    for alias in order[1:]:
        left_on, right_on = [], []
        for e in jg.edges:
            if e.left == alias and (placed >> e.right) & 1:
                left_on.append(f"a{e.right}__{e.right_col}")
                right_on.append(f"a{alias}__{e.left_col}")
            elif e.right == alias and (placed >> e.left) & 1:
                left_on.append(f"a{e.left}__{e.left_col}")
                right_on.append(f"a{alias}__{e.right_col}")
        if not left_on:
            raise ValueError("join order leaves the prefix disconnected")
        nxt = _alias_frame(db, query, alias)
        if effort is not None:
            effort.rows_touched += len(nxt)
        current = current.merge(nxt, how="inner", left_on=left_on, right_on=right_on)
        placed |= 1 << alias
        if effort is not None:
            effort.rows_touched += len(current)
        if len(current) > row_budget:
            return TIMEOUT
    return int(len(current))


# --------------------------------------------------------------------------
# Random-walk estimation
# --------------------------------------------------------------------------

class WalkContext:
    """Per-query filtered tables and join-key indexes, built once and
    reused for every sub-plan of the query (the filtering and indexing cost
    is paid a single time)."""

    def __init__(self, db: Database, query: Query):
        self.query = query
        jg = query.join_graph
        self.filtered: dict[int, pd.DataFrame] = {}
        self.index: dict[tuple[int, str], dict] = {}
        self.columns: dict[tuple[int, str], np.ndarray] = {}
        for alias in range(jg.n_aliases):
            frame = filtered_table(db, query, alias).reset_index(drop=True)
            self.filtered[alias] = frame
            needed = set()
            for e in jg.edges:
                if e.left == alias:
                    needed.add(e.left_col)
                if e.right == alias:
                    needed.add(e.right_col)
            for col in sorted(needed):
                values = frame[col].to_numpy()
                self.columns[(alias, col)] = values
                bucket: dict = {}
                for pos, v in enumerate(values):
                    bucket.setdefault(v, []).append(pos)
                self.index[(alias, col)] = {k: np.array(v, dtype=np.intp)
                                            for k, v in bucket.items()}


def _walk_plan(subplan: int, jg: JoinGraph) -> tuple[list[tuple[int, JoinEdge, list[JoinEdge]]], int]:
    """Hop schedule: for each alias after the first (in the deterministic
    connected order), the index edge used for the lookup plus any further
    edges back into already-visited aliases, checked as filters."""
    order = join_order(subplan, jg)
    placed = 1 << order[0]
    plan = []
    for alias in order[1:]:
        back = [e for e in jg.edges
                if (e.left == alias and (placed >> e.right) & 1)
                or (e.right == alias and (placed >> e.left) & 1)]
        plan.append((alias, back[0], back[1:]))
        placed |= 1 << alias
    return plan, order[0]


def wander_join_estimate(db: Database, query: Query, subplan: int, walk_count: int,
                         seed: int, effort: EffortCounter | None = None,
                         ctx: WalkContext | None = None) -> float:
    """Random-walk join cardinality estimate (mean over walks).

    Each walk starts from a uniform row of the first filtered table and
    extends one alias at a time through the join-key index; the walk value
    is the product of the candidate fan-outs, and failed walks contribute
    zero. The estimator is unbiased for the exact filtered join count.
    """
    if ctx is None:
        ctx = WalkContext(db, query)
    jg = query.join_graph
    if bin(subplan).count("1") == 1:
        alias = subplan.bit_length() - 1
        return float(len(ctx.filtered[alias]))
    plan, root = _walk_plan(subplan, jg)
    base = len(ctx.filtered[root])
    if base == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(walk_count):
        if effort is not None:
            effort.walks += 1
        chosen = {root: int(rng.integers(base))}
        value = float(base)
        ok = True
        for alias, edge, extra in plan:
            if edge.left == alias:
                key_col, my_col = edge.right_col, edge.left_col
                key_alias = edge.right
            else:
                key_col, my_col = edge.left_col, edge.right_col
                key_alias = edge.left
            key = ctx.columns[(key_alias, key_col)][chosen[key_alias]]
            matches = ctx.index[(alias, my_col)].get(key)
            if effort is not None:
                effort.hops += 1
            if matches is None:
                ok = False
                break
            if extra:
                keep = np.ones(len(matches), dtype=bool)
                for e in extra:
                    if e.left == alias:
                        mine, theirs, other = e.left_col, e.right_col, e.right
                    else:
                        mine, theirs, other = e.right_col, e.left_col, e.left
                    want = ctx.columns[(other, theirs)][chosen[other]]
                    keep &= ctx.columns[(alias, mine)][matches] == want
                matches = matches[keep]
                if effort is not None:
                    effort.hops += len(keep)
            fanout = len(matches)
            if fanout == 0:
                ok = False
                break
            value *= fanout
            chosen[alias] = int(matches[rng.integers(fanout)])
        if ok:
            total += value
    return total / walk_count


# --------------------------------------------------------------------------
# Workload labeling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledRecord:
    qid: str
    subplan: int
    cardinality: float  # >= 1 after clamping; timeouts carry the constant label
    raw: float          # unclamped value (0 preserved; timeouts carry the constant)
    source: str         # exact | wanderjoin | timeout_constant


@dataclass
class EffortReport:
    mode: str
    rows_touched: int = 0
    walks: int = 0
    hops: int = 0
    records: int = 0

    @property
    def total(self) -> int:
        return self.rows_touched + self.hops


def label_query(db: Database, query: Query, subplans: list[int], mode: str,
                budget: int, seed: int,
                effort: EffortCounter | None = None) -> list[LabeledRecord]:
    records = []
    ctx = WalkContext(db, query) if mode == "wanderjoin" else None
    for k, subplan in enumerate(subplans):
        if mode == "exact":
            value = exact_cardinality(db, query, subplan, budget, effort=effort)
            if value is TIMEOUT:
                label = float(TIMEOUT_LABEL_FACTOR * budget)
                records.append(LabeledRecord(query.qid, subplan, label, label,
                                             "timeout_constant"))
                continue
            raw = float(value)
            source = "exact"
        elif mode == "wanderjoin":
            if bin(subplan).count("1") == 1:
                raw = wander_join_estimate(db, query, subplan, 0, 0, ctx=ctx)
                source = "exact"  # single alias needs no walks
            else:
                raw = wander_join_estimate(db, query, subplan, budget,
                                           seed=seed * 1_000_003 + k,
                                           effort=effort, ctx=ctx)
                source = "wanderjoin"
        else:
            raise ConfigError(f"unknown labeling mode {mode!r}")
        records.append(LabeledRecord(query.qid, subplan, max(1.0, raw), raw, source))
    return records


def label_workload(db: Database, queries: list[Query], mode: str, budget: int,
                   seed: int, workers: int = 1) -> tuple[list[LabeledRecord], EffortReport]:
    """Label every (query, connected sub-plan) pair.

    ``budget`` is the intermediate row budget in exact mode and the walk
    count per sub-plan in wanderjoin mode. Per-query seeds are derived from
    (seed, query index) so results do not depend on worker count.
    """
    from .joins import enumerate_subplans

    report = EffortReport(mode=mode)
    jobs = [(query, enumerate_subplans(query.join_graph), seed + qi)
            for qi, query in enumerate(queries)]
    if workers > 1 and len(jobs) > 1:
        import multiprocessing as mp

        with mp.Pool(workers, initializer=_pool_init, initargs=(db, mode, budget)) as pool:
            results = pool.map(_pool_label, jobs)
    else:
        results = []
        for query, subplans, qseed in jobs:
            effort = EffortCounter()
            recs = label_query(db, query, subplans, mode, budget, qseed, effort=effort)
            results.append((recs, effort))
    records: list[LabeledRecord] = []
    for recs, effort in results:
        records.extend(recs)
        report.rows_touched += effort.rows_touched
        report.walks += effort.walks
        report.hops += effort.hops
    report.records = len(records)
    return records, report


_POOL_STATE: dict = {}


def _pool_init(db, mode, budget):
    _POOL_STATE["db"] = db
    _POOL_STATE["mode"] = mode
    _POOL_STATE["budget"] = budget


def _pool_label(job):
    query, subplans, qseed = job
    effort = EffortCounter()
    recs = label_query(_POOL_STATE["db"], query, subplans, _POOL_STATE["mode"],
                       _POOL_STATE["budget"], qseed, effort=effort)
    return recs, effort


def save_dataset(records: list[LabeledRecord], path) -> None:
    """JSON-lines, one record per line."""
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps({"qid": r.qid, "subplan": r.subplan,
                                "cardinality": r.cardinality, "raw": r.raw,
                                "source": r.source}, sort_keys=True))
            f.write("\n")


def load_dataset(path) -> list[LabeledRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            records.append(LabeledRecord(d["qid"], d["subplan"], d["cardinality"],
                                         d["raw"], d["source"]))
    return records
