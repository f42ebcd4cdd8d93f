"""
Bounded LTL: formula AST, text syntax, trace window and reference semantics.

Text syntax (ASCII, with Unicode aliases in brackets):

    !p [¬]   p & q [∧]   p | q [∨]   p -> q [→]
    X p   F<=t p   G<=t p   p U<=t q          (<= may be written ≤)
    forall a in Ambulance: a.fuel > 0       [∀a ∈ Ambulance: ...]
    exists a in Ambulance: ...              [∃]

Atoms are boolean state expressions. Bounds count steps.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

from lark import Lark
from lark.exceptions import UnexpectedInput, VisitError

from enum_compat import StrEnum
from errors import (
    PropertySyntaxError, PropertyTypeError, TraceTooShort, TypeMismatch, UnknownComponentType, VanishedInstance,
)
from expressions import (
    EMPTY_ENV, EXPR_GRAMMAR, Env, Expr, ExprBuilder, Schema, Scope, eval_expr, format_expr, infer_type,
    syntax_diagnostic, visit_diagnostic,
)
from model_core import SimulationState, ValueType, instances_of_type

logger = logging.getLogger(__name__)


class Verdict(StrEnum):
    TRUE = "true"
    FALSE = "false"
    UNDECIDED = "undecided"

    @classmethod
    def of(cls, value: bool) -> "Verdict":
        return cls.TRUE if value else cls.FALSE

    @property
    def decided(self) -> bool:
        return self != Verdict.UNDECIDED


# AST

@dataclass(frozen=True)
class Atom:
    expr: Expr


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Next:
    operand: "Formula"


@dataclass(frozen=True)
class Finally:
    bound: int
    operand: "Formula"


@dataclass(frozen=True)
class Globally:
    bound: int
    operand: "Formula"


@dataclass(frozen=True)
class Until:
    bound: int
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Quantified:
    """forall/exists over the instances of a type at the state where it is evaluated."""
    kind: str  # forall | exists
    binder: str
    type_name: str
    body: "Formula"


Formula = Union[Atom, Not, And, Or, Implies, Next, Finally, Globally, Until, Quantified]

BINARY = (And, Or, Implies)
BOUNDED = (Finally, Globally)


def children(f: Formula) -> Tuple[Formula, ...]:
    if isinstance(f, Atom):
        return ()
    if isinstance(f, (Not, Next, Finally, Globally)):
        return (f.operand,)
    if isinstance(f, (And, Or, Implies, Until)):
        return (f.left, f.right)
    if isinstance(f, Quantified):
        return (f.body,)
    raise TypeError(f"not a formula: {f!r}")


def required_window(f: Formula) -> int:
    """Largest nested sum of step bounds; a monitor keeps W + 1 states."""
    if isinstance(f, Atom):
        return 0
    if isinstance(f, Next):
        return 1 + required_window(f.operand)
    if isinstance(f, BOUNDED):
        return f.bound + required_window(f.operand)
    if isinstance(f, Until):
        return f.bound + max(required_window(f.left), required_window(f.right))
    return max((required_window(c) for c in children(f)), default=0)


def depth(f: Formula) -> int:
    return 1 + max((depth(c) for c in children(f)), default=0)


# Text syntax

BLTL_GRAMMAR = r"""
start: formula
?formula: implication
        | QUANT_SYMBOL NAME ("in" | "∈") NAME ":" formula     -> quantified
        | NAME NAME ("in" | "∈") NAME ":" formula             -> quantified
?implication: disjunction
        | disjunction ("->" | "→") formula                     -> f_implies
?disjunction: conjunction
        | disjunction ("|" | "∨") conjunction                  -> f_or
?conjunction: until
        | conjunction ("&" | "∧") until                        -> f_and
?until: temporal
        | temporal "U" bound until                             -> f_until
?temporal: "(" formula ")"
        | ("!" | "¬") temporal                                 -> f_not
        | "X" temporal                                         -> f_next
        | "F" bound temporal                                   -> f_finally
        | "G" bound temporal                                   -> f_globally
        | expr                                                 -> atom
bound: ("<=" | "≤") NUMBER
QUANT_SYMBOL: "∀" | "∃"
""" + EXPR_GRAMMAR

_parser = Lark(BLTL_GRAMMAR, parser="earley", lexer="basic", propagate_positions=True)


class FormulaBuilder(ExprBuilder):
    def start(self, children):
        return children[0]

    def bound(self, children):
        text = str(children[0])
        if not text.isdigit():
            raise ValueError(f"time bound must be a non-negative integer, got {text}")
        return int(text)

    def atom(self, children):
        return Atom(children[0])

    def f_not(self, children):
        return Not(children[0])

    def f_and(self, children):
        return And(children[0], children[1])

    def f_or(self, children):
        return Or(children[0], children[1])

    def f_implies(self, children):
        return Implies(children[0], children[1])

    def f_next(self, children):
        return Next(children[0])

    def f_finally(self, children):
        return Finally(children[0], children[1])

    def f_globally(self, children):
        return Globally(children[0], children[1])

    def f_until(self, children):
        left, bound, right = children
        return Until(bound, left, right)

    def quantified(self, children):
        keyword, binder, type_name, body = children
        word = str(keyword).lower()
        if word in ("∀", "forall"):
            kind = "forall"
        elif word in ("∃", "exists"):
            kind = "exists"
        else:
            raise ValueError(f"expected 'forall' or 'exists', got '{keyword}'")
        return Quantified(kind, str(binder), str(type_name), body)


def parse_bltl(text: str) -> Formula:
    """
    Parse a B-LTL property.

    Raises:
        PropertySyntaxError: with a located diagnostic
    """
    try:
        tree = _parser.parse(text)
    except UnexpectedInput as e:
        diagnostic = syntax_diagnostic(e, text)
        raise PropertySyntaxError(f"invalid property: {diagnostic}", [diagnostic]) from e
    try:
        return FormulaBuilder().transform(tree)
    except VisitError as e:
        diagnostic = visit_diagnostic(e)
        raise PropertySyntaxError(f"invalid property: {diagnostic}", [diagnostic]) from e


def format_formula(f: Formula, unicode: bool = False) -> str:
    """Parseable text; compound operands are parenthesized."""
    sym = _UNICODE if unicode else _ASCII

    def wrap(g: Formula) -> str:
        if isinstance(g, Atom):
            return format_expr(g.expr)
        return f"({fmt(g)})"

    def fmt(g: Formula) -> str:
        if isinstance(g, Atom):
            return format_expr(g.expr)
        if isinstance(g, Not):
            return f"{sym['not']}{wrap(g.operand)}"
        if isinstance(g, And):
            return f"{wrap(g.left)} {sym['and']} {wrap(g.right)}"
        if isinstance(g, Or):
            return f"{wrap(g.left)} {sym['or']} {wrap(g.right)}"
        if isinstance(g, Implies):
            return f"{wrap(g.left)} {sym['implies']} {wrap(g.right)}"
        if isinstance(g, Next):
            return f"X {wrap(g.operand)}"
        if isinstance(g, Finally):
            return f"F{sym['le']}{g.bound} {wrap(g.operand)}"
        if isinstance(g, Globally):
            return f"G{sym['le']}{g.bound} {wrap(g.operand)}"
        if isinstance(g, Until):
            return f"{wrap(g.left)} U{sym['le']}{g.bound} {wrap(g.right)}"
        if isinstance(g, Quantified):
            if unicode:
                q = "∀" if g.kind == "forall" else "∃"
                return f"{q}{g.binder} ∈ {g.type_name}: {fmt(g.body)}"
            return f"{g.kind} {g.binder} in {g.type_name}: {fmt(g.body)}"
        raise TypeError(f"not a formula: {g!r}")

    return fmt(f)


_ASCII = {"not": "!", "and": "&", "or": "|", "implies": "->", "le": "<="}
_UNICODE = {"not": "¬", "and": "∧", "or": "∨", "implies": "→", "le": "≤"}


# Static checks

def check_formula(f: Formula, schema: Schema, binders: Tuple[Tuple[str, str], ...] = ()) -> None:
    """
    Type-check every atom against a model schema.

    Raises:
        PropertyTypeError: an atom is not boolean or is ill-typed
        UnknownPath, UnknownComponentType: names the model does not have
    """
    if isinstance(f, Atom):
        scope = Scope(schema, binders=binders)
        try:
            t = infer_type(f.expr, scope)
        except TypeMismatch as e:
            raise PropertyTypeError(f"atom '{format_expr(f.expr)}': {e}") from e
        if t != ValueType.BOOL:
            raise PropertyTypeError(f"atom '{format_expr(f.expr)}' must be boolean, got {t}")
        return
    if isinstance(f, Quantified):
        if not schema.has_type(f.type_name):
            raise UnknownComponentType(f.type_name)
        check_formula(f.body, schema, binders + ((f.binder, f.type_name),))
        return
    for child in children(f):
        check_formula(child, schema, binders)


# Reference semantics

def eval_atom(expr: Expr, state: SimulationState, env: Env) -> bool:
    """An atom reading a vanished bound instance is false."""
    try:
        value = eval_expr(expr, state, env)
    except VanishedInstance:
        return False
    if not isinstance(value, bool):
        raise PropertyTypeError(f"atom '{format_expr(expr)}' evaluated to {value!r}")
    return value


def reference_eval(f: Formula, full_trace: Sequence[SimulationState]) -> Verdict:
    """
    Direct recursive evaluation at position 0.

    Raises:
        TraceTooShort: fewer than required_window(f) + 1 states
    """
    needed = required_window(f) + 1
    if len(full_trace) < needed:
        raise TraceTooShort(needed, len(full_trace))
    return Verdict.of(_holds(f, full_trace, 0, EMPTY_ENV))


def _holds(f: Formula, trace: Sequence[SimulationState], i: int, env: Env) -> bool:
    if isinstance(f, Atom):
        return eval_atom(f.expr, trace[i], env)
    if isinstance(f, Not):
        return not _holds(f.operand, trace, i, env)
    if isinstance(f, And):
        return _holds(f.left, trace, i, env) and _holds(f.right, trace, i, env)
    if isinstance(f, Or):
        return _holds(f.left, trace, i, env) or _holds(f.right, trace, i, env)
    if isinstance(f, Implies):
        return (not _holds(f.left, trace, i, env)) or _holds(f.right, trace, i, env)
    if isinstance(f, Next):
        return _holds(f.operand, trace, i + 1, env)
    if isinstance(f, Finally):
        return any(_holds(f.operand, trace, j, env) for j in range(i, i + f.bound + 1))
    if isinstance(f, Globally):
        return all(_holds(f.operand, trace, j, env) for j in range(i, i + f.bound + 1))
    if isinstance(f, Until):
        for j in range(i, i + f.bound + 1):
            if _holds(f.right, trace, j, env):
                return True
            if not _holds(f.left, trace, j, env):
                return False
        return False
    if isinstance(f, Quantified):
        refs = instances_of_type(trace[i], f.type_name)
        results = (_holds(f.body, trace, i, env.bind(f.binder, ref.path)) for ref in refs)
        return all(results) if f.kind == "forall" else any(results)
    raise TypeError(f"not a formula: {f!r}")
