"""SQL text handling: tokenizer, schema-aware parser, and renderer.

The parser targets the reduced grammar in :mod:`sqlink.grammar`.  Literal
values become `Value` placeholders (value prediction is out of scope), and
explicit ``JOIN ... ON`` predicates are consumed but not represented: the
FROM clause is a table set.  Rendering produces a normalized string with
uppercase keywords, single spaces, lowercase identifiers, and the literal
placeholder ``value``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import GrammarError
from .grammar import GRAMMAR, AstNode, Grammar, node

KEYWORDS = {
    "select", "distinct", "from", "join", "on", "as", "where", "and", "or",
    "like", "in", "between", "group", "by", "having", "order", "asc", "desc",
    "limit", "intersect", "union", "except", "not",
}
AGG_FUNCS = {"max": "AggMax", "min": "AggMin", "count": "AggCount",
             "sum": "AggSum", "avg": "AggAvg"}
CMP_TOKENS = {"=": "Eq", "!=": "Ne", "<>": "Ne", ">": "Gt", ">=": "Ge",
              "<": "Lt", "<=": "Le"}

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<number>\d+(?:\.\d+)?)
      | (?P<string>'[^']*'|"[^"]*")
      | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op><=|>=|!=|<>|[=<>*(),.])
    )""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | string | ident | op | eof
    text: str
    start: int
    end: int

    def lower(self) -> str:
        return self.text.lower()


def tokenize(sql: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            rest = sql[pos:].lstrip()
            if not rest:
                break
            at = len(sql) - len(rest)
            raise GrammarError(
                f"cannot tokenize SQL at offset {at}: {rest[:20]!r}",
                span=(at, at + 1))
        kind = m.lastgroup
        tokens.append(Token(kind, m.group(kind), m.start(kind), m.end(kind)))
        pos = m.end()
    tokens.append(Token("eof", "", len(sql), len(sql)))
    return tokens


class _Parser:
    """Recursive-descent parser over one SQL statement."""

    def __init__(self, sql: str, schema, grammar: Grammar = GRAMMAR):
        self.sql = sql
        self.schema = schema
        self.grammar = grammar
        self.tokens = tokenize(sql)
        self.pos = 0

    # -- token utilities ---------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        t = self.peek()
        self.pos += 1
        return t

    def at_keyword(self, *words: str) -> bool:
        t = self.peek()
        return t.kind == "ident" and t.lower() in words

    def expect_keyword(self, word: str) -> Token:
        t = self.next()
        if t.kind != "ident" or t.lower() != word:
            raise GrammarError(
                f"expected {word.upper()!r}, got {t.text!r}", span=(t.start, t.end))
        return t

    def expect_op(self, op: str) -> Token:
        t = self.next()
        if t.kind != "op" or t.text != op:
            raise GrammarError(
                f"expected {op!r}, got {t.text!r}", span=(t.start, t.end))
        return t

    def fail(self, message: str, token: Token | None = None):
        t = token or self.peek()
        raise GrammarError(f"{message} (got {t.text!r})", span=(t.start, t.end))

    # -- entry points -------------------------------------------------------

    def parse(self) -> AstNode:
        left = self.parse_query(depth=0)
        t = self.peek()
        if t.kind == "ident" and t.lower() in ("intersect", "union", "except"):
            self.next()
            right = self.parse_query(depth=0)
            name = t.lower().capitalize()
            ast = node(name, left, right)
        else:
            ast = node("PlainQuery", left)
        t = self.peek()
        if t.kind != "eof":
            self.fail("trailing tokens after query", t)
        return ast

    def parse_query(self, depth: int) -> AstNode:
        self.expect_keyword("select")
        distinct = node("Distinct") if self.at_keyword("distinct") else None
        if distinct is not None:
            self.next()
        else:
            distinct = node("NoDistinct")
        raw_items = [self.parse_raw_select_item()]
        while self.peek().text == ",":
            self.next()
            raw_items.append(self.parse_raw_select_item())
        self.expect_keyword("from")
        scope = self.parse_from_scope()
        select_items = [
            self.build_agg_item(agg, parts, span, scope)
            for agg, parts, span in raw_items
        ]
        where = node("NoWhere")
        if self.at_keyword("where"):
            self.next()
            where = node("Where", self.parse_cond(scope, depth))
        group = node("NoGroup")
        if self.at_keyword("group"):
            self.next()
            self.expect_keyword("by")
            cols = [self.resolve_column(*self.parse_name_parts(), scope)]
            while self.peek().text == ",":
                self.next()
                cols.append(self.resolve_column(*self.parse_name_parts(), scope))
            having = node("NoHaving")
            if self.at_keyword("having"):
                self.next()
                having = node("Having", self.parse_cond(scope, depth))
            group = node("GroupBy", self.cons_list("Col", cols), having)
        order = node("NoOrder")
        if self.at_keyword("order"):
            self.next()
            self.expect_keyword("by")
            items = [self.parse_agg_item(scope)]
            while self.peek().text == ",":
                self.next()
                items.append(self.parse_agg_item(scope))
            direction = node("Asc")
            if self.at_keyword("asc", "desc"):
                direction = node(self.next().lower().capitalize())
            limit = node("NoLimit")
            if self.at_keyword("limit"):
                t = self.next()
                nxt = self.peek()
                if nxt.kind in ("number", "string") or (
                        nxt.kind == "ident" and nxt.lower() == "value"):
                    self.next()
                else:
                    self.fail("LIMIT needs a count", t)
                limit = node("Limit")
            order = node("OrderBy", self.cons_list("Agg", items), direction, limit)
        select = node("Select", distinct, self.cons_list("Agg", select_items))
        return node("Query", select, self.from_node(scope), where, group, order)

    # -- FROM scope ----------------------------------------------------------

    def parse_from_scope(self) -> dict:
        """Parse table refs (comma or JOIN separated); returns the scope."""
        tables: list[int] = []
        aliases: dict[str, int] = {}

        def one_ref():
            t = self.next()
            if t.kind != "ident":
                self.fail("expected a table name", t)
            ti = self.resolve_table(t)
            if self.at_keyword("as"):
                self.next()
                alias = self.next()
                aliases[alias.lower()] = ti
            if ti not in tables:
                tables.append(ti)

        one_ref()
        while True:
            t = self.peek()
            if t.text == ",":
                self.next()
                one_ref()
            elif t.kind == "ident" and t.lower() == "join":
                self.next()
                one_ref()
                if self.at_keyword("on"):
                    # Join predicate is not represented; consume `a = b`.
                    self.next()
                    self.parse_name_parts()
                    self.expect_op("=")
                    self.parse_name_parts()
            else:
                break
        return {"tables": tables, "aliases": aliases}

    def from_node(self, scope) -> AstNode:
        items = [("table", ti) for ti in scope["tables"]]
        out = node("FromLast", items[-1][1])
        for _, ti in reversed(items[:-1]):
            out = node("FromCons", ti, out)
        return out

    def cons_list(self, prefix: str, items: list) -> AstNode:
        out = node(f"{prefix}Last", items[-1])
        for item in reversed(items[:-1]):
            out = node(f"{prefix}Cons", item, out)
        return out

    # -- names ----------------------------------------------------------------

    def parse_name_parts(self) -> tuple[tuple[str, ...], tuple[int, int]]:
        t = self.next()
        if t.text == "*":
            return ("*",), (t.start, t.end)
        if t.kind != "ident":
            self.fail("expected an identifier", t)
        parts = [t.text]
        end = t.end
        if self.peek().text == ".":
            self.next()
            t2 = self.next()
            if t2.text == "*":
                return ("*",), (t.start, t2.end)
            if t2.kind != "ident":
                self.fail("expected a column name after '.'", t2)
            parts.append(t2.text)
            end = t2.end
        return tuple(parts), (t.start, end)

    def resolve_table(self, token: Token) -> int:
        name = token.lower()
        for i, table in enumerate(self.schema.tables):
            if table.orig_name.lower() == name:
                return i
        raise GrammarError(
            f"unknown table {token.text!r} in database {self.schema.db_id!r}",
            span=(token.start, token.end))

    def resolve_column(self, parts: tuple[str, ...],
                       span: tuple[int, int], scope) -> int:
        if parts == ("*",):
            return self.schema.wildcard_column
        if len(parts) == 2:
            qual, colname = parts
            ti = scope["aliases"].get(qual.lower())
            if ti is None:
                for i, table in enumerate(self.schema.tables):
                    if table.orig_name.lower() == qual.lower():
                        ti = i
                        break
            if ti is None:
                raise GrammarError(f"unknown table qualifier {qual!r}", span=span)
            for ci, col in enumerate(self.schema.columns):
                if col.table_index == ti and col.orig_name.lower() == colname.lower():
                    return ci
            raise GrammarError(
                f"table {qual!r} has no column {colname!r}", span=span)
        colname = parts[0].lower()
        in_scope = [
            ci for ci, col in enumerate(self.schema.columns)
            if col.orig_name.lower() == colname and col.table_index in scope["tables"]
        ]
        if len(in_scope) == 1:
            return in_scope[0]
        if len(in_scope) > 1:
            raise GrammarError(f"ambiguous column {parts[0]!r}", span=span)
        anywhere = [
            ci for ci, col in enumerate(self.schema.columns)
            if col.orig_name.lower() == colname
        ]
        if len(anywhere) == 1:
            return anywhere[0]
        verdict = "ambiguous" if anywhere else "unknown"
        raise GrammarError(f"{verdict} column {parts[0]!r}", span=span)

    # -- select items / conditions ---------------------------------------------

    def parse_raw_select_item(self):
        """SELECT items appear before FROM; keep raw, resolve once scoped."""
        t = self.peek()
        if t.kind == "ident" and t.lower() in AGG_FUNCS and self.peek(1).text == "(":
            agg = self.next().lower()
            self.expect_op("(")
            if self.at_keyword("distinct"):
                self.fail("per-aggregate DISTINCT is outside the grammar")
            parts, span = self.parse_name_parts()
            self.expect_op(")")
            return agg, parts, span
        parts, span = self.parse_name_parts()
        return None, parts, span

    def build_agg_item(self, agg, parts, span, scope) -> AstNode:
        ci = self.resolve_column(parts, span, scope)
        op = node(AGG_FUNCS[agg]) if agg else node("AggNone")
        return node("AggItem", op, ci)

    def parse_agg_item(self, scope) -> AstNode:
        agg, parts, span = self.parse_raw_select_item()
        return self.build_agg_item(agg, parts, span, scope)

    def parse_cond(self, scope, depth: int) -> AstNode:
        left = self.parse_cond_and(scope, depth)
        while self.at_keyword("or"):
            self.next()
            left = node("Or", left, self.parse_cond_and(scope, depth))
        return left

    def parse_cond_and(self, scope, depth: int) -> AstNode:
        left = self.parse_cond_atom(scope, depth)
        while self.at_keyword("and"):
            self.next()
            left = node("And", left, self.parse_cond_atom(scope, depth))
        return left

    def parse_cond_atom(self, scope, depth: int) -> AstNode:
        if self.peek().text == "(" and not self._paren_is_subquery():
            self.next()
            inner = self.parse_cond(scope, depth)
            self.expect_op(")")
            return inner
        item = self.parse_agg_item(scope)
        t = self.next()
        if t.kind == "op" and t.text in CMP_TOKENS:
            op_name = CMP_TOKENS[t.text]
        elif t.kind == "ident" and t.lower() == "like":
            op_name = "Like"
        elif t.kind == "ident" and t.lower() == "in":
            op_name = "In"
        elif t.kind == "ident" and t.lower() == "between":
            op_name = "Between"
        elif t.kind == "ident" and t.lower() == "not":
            self.fail("NOT is outside the grammar", t)
        else:
            self.fail("expected a comparison operator", t)
            raise AssertionError  # unreachable
        operand = self.parse_operand(op_name, depth)
        return node("Cmp", item, node(op_name), operand)

    def _paren_is_subquery(self) -> bool:
        t = self.peek(1)
        return t.kind == "ident" and t.lower() == "select"

    def parse_operand(self, op_name: str, depth: int) -> AstNode:
        if op_name == "Between":
            self.parse_literal()
            self.expect_keyword("and")
            self.parse_literal()
            return node("Value")
        t = self.peek()
        if t.text == "(":
            if self._paren_is_subquery():
                if depth >= 1:
                    raise GrammarError(
                        "subqueries nest at most one level", span=(t.start, t.end))
                self.next()
                sub = self.parse_query(depth + 1)
                self.expect_op(")")
                return node("Subquery", sub)
            # Parenthesized literal list, e.g. IN (1, 2, 3).
            self.next()
            self.parse_literal()
            while self.peek().text == ",":
                self.next()
                self.parse_literal()
            self.expect_op(")")
            return node("Value")
        self.parse_literal()
        return node("Value")

    def parse_literal(self) -> None:
        t = self.next()
        if t.kind in ("number", "string"):
            return
        if t.kind == "ident" and t.lower() == "value":
            return  # placeholder emitted by render_sql
        self.fail("expected a literal value", t)


def parse_sql(sql: str, schema, grammar: Grammar = GRAMMAR) -> AstNode:
    """Parse one SQL statement into a grammar tree, resolving schema names."""
    return _Parser(sql, schema, grammar).parse()


# ---------------------------------------------------------------------------
# Rendering


def render_sql(ast: AstNode, schema) -> str:
    """Render a tree as a normalized SQL string (keywords upper, one space)."""

    def table_name(ti: int) -> str:
        return schema.tables[ti].orig_name.lower()

    def column_name(ci: int, qualify: bool) -> str:
        col = schema.columns[ci]
        if col.table_index is None:
            return "*"
        base = col.orig_name.lower()
        return f"{table_name(col.table_index)}.{base}" if qualify else base

    def flatten(n: AstNode, cons: str, last: str) -> list:
        items = []
        while n.prod.name == cons:
            items.append(n.children[0])
            n = n.children[1]
        assert n.prod.name == last
        items.append(n.children[0])
        return items

    def agg_item(n: AstNode, qualify: bool) -> str:
        from .grammar import AGG_NAMES
        agg = AGG_NAMES[n.children[0].prod.name]
        col = column_name(n.children[1], qualify)
        return f"{agg}({col})" if agg else col

    def cond(n: AstNode, qualify: bool) -> str:
        name = n.prod.name
        if name in ("And", "Or"):
            return (f"{cond(n.children[0], qualify)} {name.upper()} "
                    f"{cond(n.children[1], qualify)}")
        assert name == "Cmp"
        from .grammar import CMP_SQL
        lhs = agg_item(n.children[0], qualify)
        op = CMP_SQL[n.children[1].prod.name]
        operand = n.children[2]
        if operand.prod.name == "Subquery":
            rhs = f"({query(operand.children[0])})"
        elif op == "BETWEEN":
            rhs = "value AND value"
        elif op == "IN":
            rhs = "(value)"
        else:
            rhs = "value"
        return f"{lhs} {op} {rhs}"

    def query(n: AstNode) -> str:
        select, from_, where, group, order = n.children
        tables = flatten(from_, "FromCons", "FromLast")
        qualify = len(tables) > 1
        parts = ["SELECT"]
        if select.children[0].prod.name == "Distinct":
            parts.append("DISTINCT")
        items = flatten(select.children[1], "AggCons", "AggLast")
        parts.append(", ".join(agg_item(i, qualify) for i in items))
        parts.append("FROM")
        parts.append(" JOIN ".join(table_name(ti) for ti in tables))
        if where.prod.name == "Where":
            parts.append("WHERE")
            parts.append(cond(where.children[0], qualify))
        if group.prod.name == "GroupBy":
            cols = flatten(group.children[0], "ColCons", "ColLast")
            parts.append("GROUP BY")
            parts.append(", ".join(column_name(c, qualify) for c in cols))
            having = group.children[1]
            if having.prod.name == "Having":
                parts.append("HAVING")
                parts.append(cond(having.children[0], qualify))
        if order.prod.name == "OrderBy":
            items = flatten(order.children[0], "AggCons", "AggLast")
            parts.append("ORDER BY")
            parts.append(", ".join(agg_item(i, qualify) for i in items))
            parts.append(order.children[1].prod.name.upper())
            if order.children[2].prod.name == "Limit":
                parts.append("LIMIT value")
        return " ".join(parts)

    name = ast.prod.name
    if name == "PlainQuery":
        return query(ast.children[0])
    return f"{query(ast.children[0])} {name.upper()} {query(ast.children[1])}"
