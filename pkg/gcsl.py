"""
Goal contracts: quantified timing patterns over state expressions.

    Ambulance.allInstances()->forAll(a | [a.fuel > 0] holds during [100])
    whenever [x.alarm] occurs [x.ack] occurs within [5]

A contract is an optional chain of forAll/exists quantifiers over
instance collections wrapped around one pattern:

    P1  whenever [P] occurs [Q] holds during following [t]
    P2  whenever [P] occurs [Q] occurs within [t]
    P3  [P] holds during [t]

translate_to_bltl turns a contract into a bounded-LTL formula for a given
analysis horizon. Keywords are case-insensitive.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Set, Tuple

from lark import Lark
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken, VisitError

from enum_compat import StrEnum
from errors import (
    ContractSyntaxError, ContractTypeError, Diagnostic, HorizonTooSmall, Severity, TypeMismatch,
    UnboundBinder, UnknownPattern,
)
from expressions import (
    EXPR_GRAMMAR, AllInstances, Binary, CollectionOf, Expr, ExprBuilder, Iterate, PathRef, Schema, Scope,
    format_expr, infer_type, map_paths, syntax_diagnostic, visit_diagnostic, walk_expr,
)
from bltl import And, Atom, Finally, Formula, Globally, Implies, Quantified
from model_core import ValueType

logger = logging.getLogger(__name__)

PATTERN_KEYWORDS = {"WHENEVER", "OCCURS", "HOLDS", "DURING", "FOLLOWING", "WITHIN"}

GCSL_GRAMMAR = r"""
start: contract
?contract: pattern
         | postfix "->" NAME "(" NAME "|" contract ")"       -> quantified
         | "(" contract ")"
?pattern: "whenever"i slot "occurs"i slot "holds"i "during"i "following"i bound  -> response_hold
        | "whenever"i slot "occurs"i slot "occurs"i "within"i bound             -> response_within
        | slot "holds"i "during"i bound                                         -> invariant
slot: "[" expr "]"
bound: "[" NUMBER "]"
""" + EXPR_GRAMMAR

_parser = Lark(GCSL_GRAMMAR, parser="earley", lexer="basic", propagate_positions=True)


class PatternKind(StrEnum):
    RESPONSE_HOLD = "P1"
    RESPONSE_WITHIN = "P2"
    INVARIANT = "P3"


@dataclass(frozen=True)
class Quantifier:
    kind: str  # forall | exists
    binder: str
    source: Expr
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Pattern:
    kind: PatternKind
    p: Expr
    q: Optional[Expr]
    bound: int


@dataclass(frozen=True)
class GcslAst:
    quantifiers: Tuple[Quantifier, ...]
    pattern: Pattern
    diagnostics: Tuple[Diagnostic, ...] = field(default=(), compare=False)


class ContractBuilder(ExprBuilder):
    def start(self, children):
        return children[0]

    def slot(self, children):
        return children[0]

    def bound(self, children):
        text = str(children[0])
        if not text.isdigit():
            raise ValueError(f"time bound must be a non-negative integer, got {text}")
        return int(text)

    def response_hold(self, children):
        return GcslAst((), Pattern(PatternKind.RESPONSE_HOLD, children[0], children[1], children[2]))

    def response_within(self, children):
        return GcslAst((), Pattern(PatternKind.RESPONSE_WITHIN, children[0], children[1], children[2]))

    def invariant(self, children):
        return GcslAst((), Pattern(PatternKind.INVARIANT, children[0], None, children[1]))

    def quantified(self, children):
        source, method, binder, inner = children
        kind = str(method).lower()
        if kind not in ("forall", "exists"):
            raise ValueError(f"contracts quantify with ->forAll or ->exists, not ->{method}")
        quantifier = Quantifier(kind, str(binder), source, binder.line, binder.column)
        return GcslAst((quantifier,) + inner.quantifiers, inner.pattern)


def _raise_syntax(e: UnexpectedInput, text: str):
    diagnostic = syntax_diagnostic(e, text)
    expected: Set[str] = set()
    if isinstance(e, (UnexpectedToken, UnexpectedEOF)):
        expected = set(e.expected)
    elif isinstance(e, UnexpectedCharacters):
        expected = set(e.allowed or ())
    if expected & PATTERN_KEYWORDS:
        raise UnknownPattern(
            "no contract pattern matches; expected 'whenever [P] occurs [Q] holds during following [t]', "
            "'whenever [P] occurs [Q] occurs within [t]' or '[P] holds during [t]'",
            [Diagnostic(Severity.ERROR, diagnostic.line, diagnostic.column,
                        f"unknown pattern: {diagnostic.message}", "unknown-pattern")]) from e
    raise ContractSyntaxError(f"invalid contract: {diagnostic}", [diagnostic]) from e


def parse_gcsl(text: str, schema: Optional[Schema] = None) -> GcslAst:
    """
    Parse a contract; with a schema its state expressions are type-checked.

    Raises:
        ContractSyntaxError, UnknownPattern, UnboundBinder, ContractTypeError
    """
    try:
        tree = _parser.parse(text)
    except UnexpectedInput as e:
        _raise_syntax(e, text)
    try:
        ast = ContractBuilder().transform(tree)
    except VisitError as e:
        diagnostic = visit_diagnostic(e)
        raise ContractSyntaxError(f"invalid contract: {diagnostic}", [diagnostic]) from e

    diagnostics = _check_binders(ast)
    if schema is not None:
        check_contract(ast, schema)
    return GcslAst(ast.quantifiers, ast.pattern, tuple(diagnostics))


def _slots(ast: GcslAst) -> List[Expr]:
    return [e for e in (ast.pattern.p, ast.pattern.q) if e is not None]


def _check_binders(ast: GcslAst) -> List[Diagnostic]:
    """Distinct binders, warnings for unused ones, errors for out-of-scope use."""
    diagnostics = []
    seen = set()
    for q in ast.quantifiers:
        if q.binder in seen:
            d = Diagnostic(Severity.ERROR, q.line, q.column, f"binder '{q.binder}' is declared twice", "binder")
            raise ContractSyntaxError(str(d), [d])
        seen.add(q.binder)
        collection_source(q.source)

    # binder names introduced anywhere, including inner select/forAll expressions
    introduced = set(seen)
    for e in _slots(ast) + [q.source for q in ast.quantifiers]:
        for node, _ in walk_expr(e):
            if isinstance(node, Iterate):
                introduced.add(node.binder)

    scope: Tuple[str, ...] = ()
    for q in ast.quantifiers:
        _check_scope(q.source, scope, introduced, q)
        scope += (q.binder,)
    for e in _slots(ast):
        _check_scope(e, scope, introduced, None)

    used = set()
    for e in _slots(ast) + [q.source for q in ast.quantifiers]:
        for node, bound in walk_expr(e):
            if isinstance(node, PathRef):
                used.add(node.path[0])
    for q in ast.quantifiers:
        if q.binder not in used:
            diagnostics.append(Diagnostic(Severity.WARNING, q.line, q.column,
                                          f"binder '{q.binder}' is never used", "unused-binder"))
    return diagnostics


def _check_scope(e: Expr, scope: Tuple[str, ...], introduced: Set[str], q: Optional[Quantifier]) -> None:
    for node, bound in walk_expr(e):
        if isinstance(node, PathRef):
            head = node.path[0]
            if head in introduced and head not in scope and head not in bound:
                line, column = (q.line, q.column) if q else (0, 0)
                d = Diagnostic(Severity.ERROR, line, column, f"'{head}' is used outside the scope of its binder", "binder")
                raise UnboundBinder(str(d), [d])


def collection_source(source: Expr) -> Tuple[str, Tuple[Tuple[str, Expr], ...]]:
    """(type name, select filters) of a quantifier collection."""
    if isinstance(source, AllInstances):
        return source.type_name, ()
    if isinstance(source, Iterate) and source.kind == "select":
        type_name, filters = collection_source(source.source)
        return type_name, filters + ((source.binder, source.body),)
    raise ContractSyntaxError(
        f"cannot quantify over '{format_expr(source)}'; use T.allInstances(), optionally with ->select(b | e)")


def check_contract(ast: GcslAst, schema: Schema) -> None:
    """
    Type-check a contract against a model schema.

    Raises:
        ContractTypeError: a state expression is ill-typed or not boolean
        UnboundBinder: a path starts with a name that is neither bound nor a component
    """
    scope = Scope(schema)
    for q in ast.quantifiers:
        t = _typed(q.source, scope, f"collection of '{q.binder}'")
        if not isinstance(t, CollectionOf):
            raise ContractTypeError(f"'{q.binder}' must range over a collection, got {t}")
        scope = scope.bind(q.binder, t.type_name)
    roots = {path[0] for path in schema.instances}
    binders = {q.binder for q in ast.quantifiers}
    for e in _slots(ast):
        for node, bound in walk_expr(e):
            if isinstance(node, PathRef):
                head = node.path[0]
                if head not in binders and head not in bound and head not in roots:
                    d = Diagnostic(Severity.ERROR, 0, 0,
                                   f"'{head}' is neither a bound variable nor a component of the system", "binder")
                    raise UnboundBinder(str(d), [d])
        t = _typed(e, scope, f"'{format_expr(e)}'")
        if t != ValueType.BOOL:
            raise ContractTypeError(f"state expression '{format_expr(e)}' must be boolean, got {t}")


def _typed(e: Expr, scope: Scope, what: str):
    try:
        return infer_type(e, scope)
    except TypeMismatch as err:
        d = Diagnostic(Severity.ERROR, 0, 0, f"{what}: {err}", "type")
        raise ContractTypeError(str(d), [d]) from err


# Translation

def _rename(e: Expr, old: str, new: str) -> Expr:
    if old == new:
        return e
    return map_paths(e, lambda path: (new,) + path[1:] if path[0] == old else path)


def _wrap_quantifiers(quantifiers: Tuple[Quantifier, ...], body: Formula) -> Formula:
    for q in reversed(quantifiers):
        type_name, filters = collection_source(q.source)
        condition = None
        for binder, cond in filters:
            cond = _rename(cond, binder, q.binder)
            condition = cond if condition is None else Binary("and", condition, cond)
        if condition is not None:
            body = Implies(Atom(condition), body) if q.kind == "forall" else And(Atom(condition), body)
        body = Quantified(q.kind, q.binder, type_name, body)
    return body


def translate_to_bltl(ast: GcslAst, horizon: int) -> Formula:
    """
    Bounded-LTL formula of a contract over `horizon` steps.

    P1 becomes G<=(h-t) (P -> G<=t Q), P2 becomes G<=(h-t) (P -> F<=t Q) and
    P3 becomes G<=t P, with the quantifier chain inside the outer G.

    Raises:
        HorizonTooSmall: the horizon is shorter than the pattern bound
    """
    pattern = ast.pattern
    if horizon < pattern.bound:
        raise HorizonTooSmall(horizon, pattern.bound)
    if pattern.kind == PatternKind.INVARIANT:
        return Globally(pattern.bound, _wrap_quantifiers(ast.quantifiers, Atom(pattern.p)))
    inner = Globally if pattern.kind == PatternKind.RESPONSE_HOLD else Finally
    body = Implies(Atom(pattern.p), inner(pattern.bound, Atom(pattern.q)))
    return Globally(horizon - pattern.bound, _wrap_quantifiers(ast.quantifiers, body))


def format_contract(ast: GcslAst) -> str:
    pattern = ast.pattern
    p = format_expr(pattern.p)
    if pattern.kind == PatternKind.INVARIANT:
        text = f"[{p}] holds during [{pattern.bound}]"
    elif pattern.kind == PatternKind.RESPONSE_HOLD:
        text = f"whenever [{p}] occurs [{format_expr(pattern.q)}] holds during following [{pattern.bound}]"
    else:
        text = f"whenever [{p}] occurs [{format_expr(pattern.q)}] occurs within [{pattern.bound}]"
    for q in reversed(ast.quantifiers):
        method = "forAll" if q.kind == "forall" else "exists"
        text = f"{format_expr(q.source)}->{method}({q.binder} | {text})"
    return text
