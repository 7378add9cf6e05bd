"""Corpus ingestion: database schemas, examples, and graph skeletons.

Node order everywhere downstream: question tokens, then tables, then
columns.  Schema items are addressed by a global index in which tables
occupy ``0..|T|-1`` and columns ``|T|..|T|+|C|-1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import CorpusFormatError, SchemaReferenceError
from .grammar import (COLUMN_SLOT, GRAMMAR, AstNode, SelectColumn, SelectTable,
                      TABLE_SLOT, ast_to_actions)
from .sqltext import parse_sql

LOGICAL_TYPES = ("text", "number", "time", "boolean", "others")


class Relation(IntEnum):
    """Typed edges of the joint question-schema graph.

    SEM_LINK / NO_LINK are reserved for the question<->schema block.
    QUESTION_DIST and SCHEMA_NONE mark in-block pairs without a closer
    relation (attention is dense, so every pair carries a type).
    """

    QUESTION_FORWARD = 0
    QUESTION_BACKWARD = 1
    QUESTION_SELF = 2
    QUESTION_DIST = 3
    COLUMN_OF_TABLE = 4
    TABLE_OF_COLUMN = 5
    SAME_TABLE_COLUMN = 6
    PRIMARY_KEY_OF = 7
    FOREIGN_KEY_FORWARD = 8
    FOREIGN_KEY_BACKWARD = 9
    SCHEMA_SELF = 10
    SCHEMA_NONE = 11
    SEM_LINK = 12
    NO_LINK = 13


NUM_RELATIONS = len(Relation)


@dataclass(frozen=True)
class TableInfo:
    orig_name: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class ColumnInfo:
    table_index: int | None  # None only for the wildcard column `*`
    orig_name: str
    tokens: tuple[str, ...]
    logical_type: str


@dataclass(frozen=True)
class DatabaseSchema:
    db_id: str
    tables: tuple[TableInfo, ...]
    columns: tuple[ColumnInfo, ...]
    primary_keys: frozenset[int]
    foreign_keys: frozenset[tuple[int, int]]

    @property
    def n_tables(self) -> int:
        return len(self.tables)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def n_items(self) -> int:
        """|S| = |T| + |C|."""
        return self.n_tables + self.n_columns

    @property
    def wildcard_column(self) -> int:
        for ci, col in enumerate(self.columns):
            if col.table_index is None:
                return ci
        raise SchemaReferenceError(f"{self.db_id}: no wildcard column")

    def global_of_table(self, ti: int) -> int:
        return ti

    def global_of_column(self, ci: int) -> int:
        return self.n_tables + ci

    def is_table_item(self, global_index: int) -> bool:
        return global_index < self.n_tables

    def item_name(self, global_index: int) -> str:
        if self.is_table_item(global_index):
            return self.tables[global_index].orig_name
        col = self.columns[global_index - self.n_tables]
        if col.table_index is None:
            return "*"
        return f"{self.tables[col.table_index].orig_name}.{col.orig_name}"

    def resolve_item(self, name: str) -> int:
        """Resolve 'table' or 'table.column' (case-insensitive) to a global index."""
        name = name.strip().lower()
        if "." in name:
            tab, col = name.split(".", 1)
            for ci, c in enumerate(self.columns):
                if (c.table_index is not None
                        and self.tables[c.table_index].orig_name.lower() == tab
                        and c.orig_name.lower() == col):
                    return self.global_of_column(ci)
            raise SchemaReferenceError(f"{self.db_id}: unknown column {name!r}")
        if name == "*":
            return self.global_of_column(self.wildcard_column)
        for ti, t in enumerate(self.tables):
            if t.orig_name.lower() == name:
                return ti
        raise SchemaReferenceError(f"{self.db_id}: unknown table {name!r}")


@dataclass(frozen=True)
class Example:
    example_id: str
    db_id: str
    question_tokens: tuple[str, ...]
    gold_sql: str
    gold_ast: AstNode
    gold_mentions: frozenset[int]
    gold_linking: tuple[tuple[int, int], ...] | None = None  # (token, item)

    @property
    def n_tokens(self) -> int:
        return len(self.question_tokens)


@dataclass
class HeteroGraph:
    """Static typed-edge skeleton for one example (weights all start at 1)."""

    n_question: int
    n_tables: int
    n_columns: int
    edge_types: np.ndarray  # (|V|, |V|) int64 of Relation values

    @property
    def n_nodes(self) -> int:
        return self.n_question + self.n_tables + self.n_columns

    @property
    def n_items(self) -> int:
        return self.n_tables + self.n_columns


def name_tokens(name: str) -> tuple[str, ...]:
    return tuple(t for t in name.lower().replace("_", " ").split() if t)


def _build_schema(record: dict, source: str, index: int) -> DatabaseSchema:
    try:
        db_id = record["db_id"]
        raw_tables = record["table_names_original"]
        raw_columns = record["column_names_original"]
        col_types = record["column_types"]
        primary = record.get("primary_keys", [])
        foreign = record.get("foreign_keys", [])
    except (KeyError, TypeError) as exc:
        raise CorpusFormatError(
            f"{source}: record {index}: missing field {exc}") from exc
    if len(raw_columns) != len(col_types):
        raise CorpusFormatError(
            f"{source}: record {index} ({db_id}): column/type length mismatch")
    tables = tuple(TableInfo(n, name_tokens(n)) for n in raw_tables)
    columns = []
    wildcards = 0
    for ci, (ti, cname) in enumerate(raw_columns):
        ctype = col_types[ci]
        if ctype not in LOGICAL_TYPES:
            ctype = "others"
        if ti == -1 or cname == "*":
            columns.append(ColumnInfo(None, "*", ("*",), ctype))
            wildcards += 1
            continue
        if not 0 <= ti < len(tables):
            raise CorpusFormatError(
                f"{source}: record {index} ({db_id}): column {cname!r} "
                f"references missing table {ti}")
        columns.append(ColumnInfo(ti, cname, name_tokens(cname), ctype))
    if wildcards != 1:
        raise CorpusFormatError(
            f"{source}: record {index} ({db_id}): expected exactly one "
            f"wildcard column, found {wildcards}")
    n_cols = len(columns)
    for pk in primary:
        if not 0 <= pk < n_cols:
            raise CorpusFormatError(
                f"{source}: record {index} ({db_id}): bad primary key {pk}")
    fks = set()
    for pair in foreign:
        c1, c2 = pair
        if c1 == c2 or not (0 <= c1 < n_cols and 0 <= c2 < n_cols):
            raise CorpusFormatError(
                f"{source}: record {index} ({db_id}): bad foreign key {pair}")
        fks.add((c1, c2))
    return DatabaseSchema(db_id, tables, tuple(columns),
                          frozenset(primary), frozenset(fks))


def tokenize_question(text: str) -> tuple[str, ...]:
    tokens = tuple(t for t in text.lower().split() if t)
    if not tokens:
        raise CorpusFormatError("question has no tokens")
    return tokens


def load_corpus(path: str | Path,
                examples_file: str = "examples.json",
                tables_file: str = "tables.json",
                ) -> tuple[list[DatabaseSchema], list[Example]]:
    """Load a Spider-layout directory; validates every type invariant."""
    path = Path(path)
    schemas = load_schemas(path / tables_file)
    by_id = {s.db_id: s for s in schemas}
    examples = load_examples(path / examples_file, by_id)
    return schemas, examples


def load_schemas(tables_path: str | Path) -> list[DatabaseSchema]:
    tables_path = Path(tables_path)
    try:
        records = json.loads(tables_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"{tables_path}: {exc}") from exc
    if not isinstance(records, list):
        raise CorpusFormatError(f"{tables_path}: expected a JSON array")
    return [_build_schema(r, str(tables_path), i) for i, r in enumerate(records)]


def load_examples(examples_path: str | Path,
                  schemas_by_id: dict[str, DatabaseSchema]) -> list[Example]:
    examples_path = Path(examples_path)
    try:
        records = json.loads(examples_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusFormatError(f"{examples_path}: {exc}") from exc
    if not isinstance(records, list):
        raise CorpusFormatError(f"{examples_path}: expected a JSON array")
    stem = examples_path.stem
    examples = []
    for i, rec in enumerate(records):
        try:
            db_id = rec["db_id"]
            question = rec["question"]
            query = rec["query"]
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(
                f"{examples_path}: record {i}: missing field {exc}") from exc
        schema = schemas_by_id.get(db_id)
        if schema is None:
            raise SchemaReferenceError(
                f"{examples_path}: record {i}: unknown db_id {db_id!r}")
        tokens = tokenize_question(question)
        ast = parse_sql(query, schema)
        mentions = mentions_of_ast(ast, schema)
        linking = None
        if rec.get("linking"):
            linking = tuple(
                (int(tok), schema.resolve_item(item))
                for tok, item in rec["linking"]
            )
            for tok, item in linking:
                if not 0 <= tok < len(tokens) or not 0 <= item < schema.n_items:
                    raise CorpusFormatError(
                        f"{examples_path}: record {i}: linking out of range")
        examples.append(Example(
            example_id=f"{stem}-{i:04d}",
            db_id=db_id,
            question_tokens=tokens,
            gold_sql=query,
            gold_ast=ast,
            gold_mentions=frozenset(mentions),
            gold_linking=linking,
        ))
    return examples


def mentions_of_ast(ast: AstNode, schema: DatabaseSchema) -> set[int]:
    """Global indices of all tables/columns the tree points at."""
    mentions: set[int] = set()
    for action in ast_to_actions(ast):
        if isinstance(action, SelectTable):
            mentions.add(schema.global_of_table(action.table_index))
        elif isinstance(action, SelectColumn):
            mentions.add(schema.global_of_column(action.column_index))
    return mentions


def extract_gold_mentions(gold_sql: str, schema: DatabaseSchema) -> set[int]:
    """Parse the SQL and return the schema items it names (global indices)."""
    return mentions_of_ast(parse_sql(gold_sql, schema), schema)


# ---------------------------------------------------------------------------
# Exact-match baseline linker


def _strip_plural(token: str) -> str:
    if len(token) > 3 and token.endswith("es"):
        return token[:-2]
    if len(token) > 2 and token.endswith("s"):
        return token[:-1]
    return token


def _norm(tokens) -> tuple[str, ...]:
    return tuple(_strip_plural(t.lower()) for t in tokens)


def exact_match_linking(example: Example, schema: DatabaseSchema) -> np.ndarray:
    """Binary |Q| x |S| matrix from n-gram (n<=5) name matching.

    Entry (i, j) is 1 when some n-gram starting at token i equals schema
    item j's name or is contained in it as a contiguous token run, after
    lowercasing and plural stripping.  Ablation baseline only.
    """
    q = _norm(example.question_tokens)
    names = [_norm(t.tokens) for t in schema.tables]
    names += [_norm(c.tokens) for c in schema.columns]
    out = np.zeros((len(q), schema.n_items), dtype=np.float64)
    for j, name in enumerate(names):
        if name == ("*",):
            continue
        for i in range(len(q)):
            for n in range(1, min(5, len(q) - i) + 1):
                gram = q[i:i + n]
                if gram == name or _contains(name, gram):
                    out[i, j] = 1.0
                    break
    return out


def _contains(name: tuple[str, ...], gram: tuple[str, ...]) -> bool:
    if len(gram) >= len(name):
        return False
    return any(name[k:k + len(gram)] == gram
               for k in range(len(name) - len(gram) + 1))


# ---------------------------------------------------------------------------
# Static graph skeleton


def build_static_edges(example: Example, schema: DatabaseSchema) -> HeteroGraph:
    """Typed edge matrix over question + table + column nodes.

    The question<->schema block starts as NO_LINK everywhere; the graph
    learner overwrites it each epoch.  Edge (a, b) is read "a is <type>
    of b", so attention at target node i consumes edge_types[j, i].
    """
    nq = example.n_tokens
    nt, nc = schema.n_tables, schema.n_columns
    n = nq + nt + nc
    e = np.full((n, n), int(Relation.SCHEMA_NONE), dtype=np.int64)

    e[:nq, :nq] = int(Relation.QUESTION_DIST)
    for i in range(nq):
        e[i, i] = int(Relation.QUESTION_SELF)
        if i + 1 < nq:
            e[i, i + 1] = int(Relation.QUESTION_FORWARD)
            e[i + 1, i] = int(Relation.QUESTION_BACKWARD)

    e[:nq, nq:] = int(Relation.NO_LINK)
    e[nq:, :nq] = int(Relation.NO_LINK)

    def t_node(ti): return nq + ti
    def c_node(ci): return nq + nt + ci

    for idx in range(nt + nc):
        e[nq + idx, nq + idx] = int(
            Relation.SCHEMA_SELF)
    for ci, col in enumerate(schema.columns):
        if col.table_index is None:
            continue
        e[c_node(ci), t_node(col.table_index)] = int(Relation.COLUMN_OF_TABLE)
        e[t_node(col.table_index), c_node(ci)] = int(Relation.TABLE_OF_COLUMN)
    for ci in schema.primary_keys:
        ti = schema.columns[ci].table_index
        if ti is not None:
            e[c_node(ci), t_node(ti)] = int(Relation.PRIMARY_KEY_OF)
    for ci, col in enumerate(schema.columns):
        if col.table_index is None:
            continue
        for cj in range(ci + 1, nc):
            if schema.columns[cj].table_index == col.table_index:
                e[c_node(ci), c_node(cj)] = int(Relation.SAME_TABLE_COLUMN)
                e[c_node(cj), c_node(ci)] = int(Relation.SAME_TABLE_COLUMN)
    for c1, c2 in schema.foreign_keys:
        e[c_node(c1), c_node(c2)] = int(Relation.FOREIGN_KEY_FORWARD)
        e[c_node(c2), c_node(c1)] = int(Relation.FOREIGN_KEY_BACKWARD)

    return HeteroGraph(nq, nt, nc, e)
