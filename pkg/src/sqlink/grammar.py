"""Reduced SQL abstract grammar: productions, ASTs, and action sequences.

The grammar covers single-level SQL with aggregation, DISTINCT, WHERE
(comparison / LIKE / IN / BETWEEN with AND/OR), GROUP BY + HAVING,
ORDER BY + LIMIT, the set operators INTERSECT/UNION/EXCEPT, and one level
of subquery nesting inside conditions.  Literal values are placeholders;
value prediction is out of scope.

A tree serializes to a depth-first action sequence of APPLYRULE /
SELECTTABLE / SELECTCOLUMN steps, and the serialization is invertible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

from .errors import GrammarError

# Terminal slot markers: these positions are filled by schema pointers,
# not by further productions.
TABLE_SLOT = "table"
COLUMN_SLOT = "column"


@dataclass(frozen=True)
class Production:
    rule_id: int
    lhs: str
    name: str
    rhs: tuple[str, ...]

    def __repr__(self):
        return f"{self.name}<{self.lhs}->{','.join(self.rhs) or 'ε'}>"


_PRODUCTION_SPECS = [
    ("sql", "PlainQuery", ("query",)),
    ("sql", "Intersect", ("query", "query")),
    ("sql", "Union", ("query", "query")),
    ("sql", "Except", ("query", "query")),
    ("query", "Query", ("select", "from", "where", "group", "order")),
    ("select", "Select", ("distinct", "agg_list")),
    ("distinct", "Distinct", ()),
    ("distinct", "NoDistinct", ()),
    ("agg_list", "AggLast", ("agg_item",)),
    ("agg_list", "AggCons", ("agg_item", "agg_list")),
    ("agg_item", "AggItem", ("agg_op", COLUMN_SLOT)),
    ("agg_op", "AggNone", ()),
    ("agg_op", "AggMax", ()),
    ("agg_op", "AggMin", ()),
    ("agg_op", "AggCount", ()),
    ("agg_op", "AggSum", ()),
    ("agg_op", "AggAvg", ()),
    ("from", "FromLast", (TABLE_SLOT,)),
    ("from", "FromCons", (TABLE_SLOT, "from")),
    ("where", "NoWhere", ()),
    ("where", "Where", ("cond",)),
    ("cond", "And", ("cond", "cond")),
    ("cond", "Or", ("cond", "cond")),
    ("cond", "Cmp", ("agg_item", "cmp_op", "operand")),
    ("cmp_op", "Eq", ()),
    ("cmp_op", "Ne", ()),
    ("cmp_op", "Gt", ()),
    ("cmp_op", "Ge", ()),
    ("cmp_op", "Lt", ()),
    ("cmp_op", "Le", ()),
    ("cmp_op", "Like", ()),
    ("cmp_op", "In", ()),
    ("cmp_op", "Between", ()),
    ("operand", "Value", ()),
    ("operand", "Subquery", ("query",)),
    ("group", "NoGroup", ()),
    ("group", "GroupBy", ("col_list", "having")),
    ("col_list", "ColLast", (COLUMN_SLOT,)),
    ("col_list", "ColCons", (COLUMN_SLOT, "col_list")),
    ("having", "NoHaving", ()),
    ("having", "Having", ("cond",)),
    ("order", "NoOrder", ()),
    ("order", "OrderBy", ("agg_list", "direction", "limit")),
    ("direction", "Asc", ()),
    ("direction", "Desc", ()),
    ("limit", "NoLimit", ()),
    ("limit", "Limit", ()),
]


class Grammar:
    """Fixed production table with stable rule ids."""

    def __init__(self, specs=_PRODUCTION_SPECS, start="sql"):
        self.start = start
        self.productions = tuple(
            Production(i, lhs, name, rhs) for i, (lhs, name, rhs) in enumerate(specs)
        )
        self.by_name = {p.name: p for p in self.productions}
        self.by_lhs: dict[str, tuple[Production, ...]] = {}
        for p in self.productions:
            self.by_lhs.setdefault(p.lhs, ())
            self.by_lhs[p.lhs] = self.by_lhs[p.lhs] + (p,)
        self.nonterminals = tuple(self.by_lhs.keys())
        # Node types cover nonterminals plus the two pointer slots; used for
        # decoder type embeddings.
        self.slot_types = self.nonterminals + (TABLE_SLOT, COLUMN_SLOT)
        self.slot_type_ids = {t: i for i, t in enumerate(self.slot_types)}

    @property
    def num_rules(self) -> int:
        return len(self.productions)

    def production(self, rule_id: int) -> Production:
        return self.productions[rule_id]

    def expansions(self, nonterminal: str) -> tuple[Production, ...]:
        try:
            return self.by_lhs[nonterminal]
        except KeyError:
            raise GrammarError(f"unknown nonterminal {nonterminal!r}")


GRAMMAR = Grammar()

AGG_NAMES = {"AggNone": None, "AggMax": "MAX", "AggMin": "MIN",
             "AggCount": "COUNT", "AggSum": "SUM", "AggAvg": "AVG"}
CMP_SQL = {"Eq": "=", "Ne": "!=", "Gt": ">", "Ge": ">=", "Lt": "<",
           "Le": "<=", "Like": "LIKE", "In": "IN", "Between": "BETWEEN"}


@dataclass(frozen=True)
class AstNode:
    """Grammar tree node; pointer slots hold plain integer schema indices."""

    prod: Production
    children: tuple["AstChild", ...]

    def child(self, slot_name: str):
        return self.children[self.prod.rhs.index(slot_name)]

    def walk(self) -> Iterator["AstNode"]:
        yield self
        for c in self.children:
            if isinstance(c, AstNode):
                yield from c.walk()


AstChild = Union[AstNode, int]


def node(name: str, *children: AstChild, grammar: Grammar = GRAMMAR) -> AstNode:
    """Build a node by production name, validating slot arity and kinds."""
    prod = grammar.by_name.get(name)
    if prod is None:
        raise GrammarError(f"unknown production {name!r}")
    if len(children) != len(prod.rhs):
        raise GrammarError(
            f"{name} expects {len(prod.rhs)} children, got {len(children)}")
    for slot, c in zip(prod.rhs, children):
        if slot in (TABLE_SLOT, COLUMN_SLOT):
            if not isinstance(c, int):
                raise GrammarError(f"{name}: slot {slot} needs a schema index")
        else:
            if not isinstance(c, AstNode) or c.prod.lhs != slot:
                raise GrammarError(f"{name}: slot {slot} got {c!r}")
    return AstNode(prod, tuple(children))


def validate_ast(ast: AstNode, grammar: Grammar = GRAMMAR,
                 nonterminal: str | None = None) -> None:
    """Raise GrammarError unless the tree conforms to the grammar."""
    want = nonterminal or grammar.start
    if not isinstance(ast, AstNode) or ast.prod.lhs != want:
        raise GrammarError(f"expected a {want} node, got {ast!r}")
    if grammar.production(ast.prod.rule_id) is not ast.prod:
        raise GrammarError(f"foreign production {ast.prod!r}")
    if len(ast.children) != len(ast.prod.rhs):
        raise GrammarError(f"arity mismatch at {ast.prod.name}")
    for slot, c in zip(ast.prod.rhs, ast.children):
        if slot in (TABLE_SLOT, COLUMN_SLOT):
            if not isinstance(c, int) or c < 0:
                raise GrammarError(f"bad pointer child at {ast.prod.name}")
        else:
            validate_ast(c, grammar, slot)


# ---------------------------------------------------------------------------
# Actions


@dataclass(frozen=True)
class ApplyRule:
    rule_id: int


@dataclass(frozen=True)
class SelectTable:
    table_index: int


@dataclass(frozen=True)
class SelectColumn:
    column_index: int


Action = Union[ApplyRule, SelectTable, SelectColumn]


def ast_to_actions(ast: AstNode, grammar: Grammar = GRAMMAR) -> list[Action]:
    """Serialize a tree to its depth-first pre-order action sequence."""
    validate_ast(ast, grammar)
    actions: list[Action] = []

    def visit(n: AstNode) -> None:
        actions.append(ApplyRule(n.prod.rule_id))
        for slot, c in zip(n.prod.rhs, n.children):
            if slot == TABLE_SLOT:
                actions.append(SelectTable(c))
            elif slot == COLUMN_SLOT:
                actions.append(SelectColumn(c))
            else:
                visit(c)

    visit(ast)
    return actions


def actions_to_ast(actions: list[Action], grammar: Grammar = GRAMMAR) -> AstNode:
    """Rebuild the tree; exact inverse of ast_to_actions."""
    it = iter(actions)

    def build(slot: str) -> AstChild:
        try:
            a = next(it)
        except StopIteration:
            raise GrammarError(f"action sequence ended with open {slot!r} slot")
        if slot == TABLE_SLOT:
            if not isinstance(a, SelectTable):
                raise GrammarError(f"expected SELECTTABLE, got {a!r}")
            return a.table_index
        if slot == COLUMN_SLOT:
            if not isinstance(a, SelectColumn):
                raise GrammarError(f"expected SELECTCOLUMN, got {a!r}")
            return a.column_index
        if not isinstance(a, ApplyRule):
            raise GrammarError(f"expected APPLYRULE for {slot!r}, got {a!r}")
        prod = grammar.production(a.rule_id)
        if prod.lhs != slot:
            raise GrammarError(f"rule {prod.name} does not expand {slot!r}")
        return AstNode(prod, tuple(build(s) for s in prod.rhs))

    root = build(grammar.start)
    leftover = next(it, None)
    if leftover is not None:
        raise GrammarError(f"trailing action {leftover!r} after tree completed")
    return root


@dataclass(frozen=True)
class StepInfo:
    """Frontier bookkeeping for one action step during decoding."""

    slot_type: str       # nonterminal or pointer slot this step expands
    parent_step: int     # index of the APPLYRULE that opened the slot; -1 at root
    depth: int           # subquery nesting depth of the slot


def action_step_info(actions: list[Action],
                     grammar: Grammar = GRAMMAR) -> list[StepInfo]:
    """Replay the frontier over a gold sequence (teacher-forcing metadata)."""
    subquery = grammar.by_name["Subquery"]
    stack: list[StepInfo] = [StepInfo(grammar.start, -1, 0)]
    info: list[StepInfo] = []
    for i, a in enumerate(actions):
        if not stack:
            raise GrammarError(f"action {a!r} after the frontier emptied")
        slot = stack.pop()
        info.append(slot)
        if isinstance(a, ApplyRule):
            prod = grammar.production(a.rule_id)
            if prod.lhs != slot.slot_type:
                raise GrammarError(
                    f"step {i}: rule {prod.name} illegal for {slot.slot_type!r}")
            depth = slot.depth + (1 if prod is subquery else 0)
            for s in reversed(prod.rhs):
                stack.append(StepInfo(s, i, depth))
    if stack:
        raise GrammarError("sequence ended with a non-empty frontier")
    return info
