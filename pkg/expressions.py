"""
State expressions: AST, shared grammar, static typing and evaluation.

The same expression language is used for attribute initializers, guards,
rates, distribution parameters, contract state expressions and B-LTL atoms.
Every grammar in the checker embeds EXPR_GRAMMAR and builds its nodes with
ExprBuilder.
"""

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Mapping, Optional, Sequence, Tuple, Union

from lark import Lark, Transformer
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken, VisitError

from errors import (
    Diagnostic, DivisionByZero, EvaluationError, PathNotFound, Severity, TypeMismatch, UnknownComponentType,
    UnknownPath, VanishedInstance,
)
from model_core import (
    INT64_MAX, INT64_MIN, AtomicComponent, AttributeValue, ComponentRef, Path, SimulationState, System, ValueType,
    format_path, instances_of_type, resolve_path, value_type_of, walk,
)

BUILTINS = ("min", "max", "abs", "floor", "mod")
RESERVED_NAMES = ("time", "u", "true", "false", "self", "root")


# AST

@dataclass(frozen=True)
class Literal:
    value: AttributeValue


@dataclass(frozen=True)
class PathRef:
    path: Path


@dataclass(frozen=True)
class TimeRef:
    pass


@dataclass(frozen=True)
class UniformRef:
    """The fresh uniform(0,1) sample `u` of a custom distribution."""


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple["Expr", ...]


@dataclass(frozen=True)
class AllInstances:
    type_name: str


@dataclass(frozen=True)
class Iterate:
    kind: str  # forall | exists | select
    source: "Expr"
    binder: str
    body: "Expr"


@dataclass(frozen=True)
class Size:
    source: "Expr"


Expr = Union[Literal, PathRef, TimeRef, UniformRef, Unary, Binary, Call, AllInstances, Iterate, Size]

TRUE = Literal(True)
FALSE = Literal(False)

ARITHMETIC_OPS = ("+", "-", "*", "/")
COMPARISON_OPS = ("<", "<=", ">", ">=", "=", "!=")
LOGICAL_OPS = ("and", "or")


# Grammar

EXPR_GRAMMAR = r"""
?expr: disj
?disj: conj
     | disj "or" conj                  -> or_
?conj: negation
     | conj "and" negation             -> and_
?negation: comparison
     | "not" negation                  -> not_
?comparison: sum
     | sum "<" sum                     -> lt
     | sum ("<=" | "≤") sum            -> le
     | sum ">" sum                     -> gt
     | sum (">=" | "≥") sum            -> ge
     | sum ("=" | "==") sum            -> eq
     | sum ("!=" | "≠") sum            -> ne
?sum: product
     | sum "+" product                 -> add
     | sum "-" product                 -> sub
?product: unary
     | product ("*" | "×") unary       -> mul
     | product ("/" | "÷") unary       -> div
?unary: postfix
     | "-" unary                       -> negate
?postfix: primary
     | postfix "->" NAME "(" NAME "|" expr ")"   -> iterate
     | postfix "->" NAME "(" ")"                 -> collection_op
?primary: NUMBER                       -> number
     | STRING                          -> string
     | dotted                          -> path
     | dotted "(" arguments? ")"       -> call
     | "(" expr ")"
arguments: expr ("," expr)*
dotted: NAME ("." NAME)*

NAME: /[A-Za-z_][A-Za-z0-9_]*/
NUMBER: /\d+(\.\d+)?([eE][+-]?\d+)?/
STRING: /"[^"\n]*"/
COMMENT: /#[^\n]*/

%import common.WS
%ignore WS
%ignore COMMENT
"""


class ExprBuilder(Transformer):
    """Turns expression parse trees into Expr nodes; other grammars subclass it."""

    def number(self, children):
        text = str(children[0])
        if any(c in text for c in ".eE"):
            return Literal(float(text))
        value = int(text)
        if value > INT64_MAX:
            raise ValueError(f"integer literal {text} does not fit in 64 bits")
        return Literal(value)

    def string(self, children):
        return Literal(str(children[0])[1:-1])

    def dotted(self, children):
        return tuple(str(t) for t in children)

    def path(self, children):
        path = children[0]
        if len(path) == 1:
            word = path[0]
            if word.lower() in ("true", "false"):
                return Literal(word.lower() == "true")
            if word == "time":
                return TimeRef()
            if word == "u":
                return UniformRef()
        return PathRef(path)

    def arguments(self, children):
        return tuple(children)

    def call(self, children):
        path = children[0]
        args = children[1] if len(children) > 1 else ()
        if len(path) == 2 and path[1] == "allInstances":
            if args:
                raise ValueError("allInstances() takes no arguments")
            return AllInstances(path[0])
        if len(path) != 1:
            raise ValueError(f"unknown operation '{format_path(path)}()'")
        return Call(path[0], args)

    def iterate(self, children):
        source, method, binder, body = children
        kind = str(method).lower()
        if kind not in ("forall", "exists", "select"):
            raise ValueError(f"unknown collection operation '->{method}'")
        if str(binder) in RESERVED_NAMES:
            raise ValueError(f"'{binder}' is reserved and cannot be a binder")
        return Iterate(kind, source, str(binder), body)

    def collection_op(self, children):
        source, method = children
        if str(method).lower() != "size":
            raise ValueError(f"unknown collection operation '->{method}()'")
        return Size(source)

    def or_(self, children):
        return Binary("or", children[0], children[1])

    def and_(self, children):
        return Binary("and", children[0], children[1])

    def not_(self, children):
        return Unary("not", children[0])

    def negate(self, children):
        return Unary("-", children[0])

    def _binary(op):
        def build(self, children):
            return Binary(op, children[0], children[1])
        return build

    lt = _binary("<")
    le = _binary("<=")
    gt = _binary(">")
    ge = _binary(">=")
    eq = _binary("=")
    ne = _binary("!=")
    add = _binary("+")
    sub = _binary("-")
    mul = _binary("*")
    div = _binary("/")
    del _binary


_expr_parser = Lark("start: expr\n" + EXPR_GRAMMAR, parser="earley", lexer="basic", propagate_positions=True)


def parse_expr(text: str) -> Expr:
    """
    Parse a standalone state expression.

    Raises:
        ValueError: with the located diagnostic as message
    """
    try:
        tree = _expr_parser.parse(text)
    except UnexpectedInput as e:
        raise ValueError(str(syntax_diagnostic(e, text))) from e
    try:
        return ExprBuilder().transform(tree).children[0]
    except VisitError as e:
        raise ValueError(str(visit_diagnostic(e))) from e


# Printing

def format_expr(e: Expr) -> str:
    """Parseable text; binary operations are fully parenthesized."""
    if isinstance(e, Literal):
        v = e.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, float):
            text = repr(v)
            return f"({text})" if v < 0 else text
        return f"({v})" if v < 0 else str(v)
    if isinstance(e, PathRef):
        return format_path(e.path)
    if isinstance(e, TimeRef):
        return "time"
    if isinstance(e, UniformRef):
        return "u"
    if isinstance(e, Unary):
        if e.op == "not":
            return f"(not {format_expr(e.operand)})"
        return f"(-{format_expr(e.operand)})"
    if isinstance(e, Binary):
        return f"({format_expr(e.left)} {e.op} {format_expr(e.right)})"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, AllInstances):
        return f"{e.type_name}.allInstances()"
    if isinstance(e, Iterate):
        method = {"forall": "forAll", "exists": "exists", "select": "select"}[e.kind]
        return f"{format_expr(e.source)}->{method}({e.binder} | {format_expr(e.body)})"
    if isinstance(e, Size):
        return f"{format_expr(e.source)}->size()"
    raise TypeError(f"not an expression: {e!r}")


# Traversal

def walk_expr(e: Expr, bound: Tuple[str, ...] = ()) -> Iterator[Tuple[Expr, Tuple[str, ...]]]:
    """Yield every node with the binders in scope at that node."""
    yield e, bound
    if isinstance(e, Unary):
        yield from walk_expr(e.operand, bound)
    elif isinstance(e, Binary):
        yield from walk_expr(e.left, bound)
        yield from walk_expr(e.right, bound)
    elif isinstance(e, Call):
        for arg in e.args:
            yield from walk_expr(arg, bound)
    elif isinstance(e, Iterate):
        yield from walk_expr(e.source, bound)
        yield from walk_expr(e.body, bound + (e.binder,))
    elif isinstance(e, Size):
        yield from walk_expr(e.source, bound)


def free_paths(e: Expr) -> Iterator[Path]:
    """Paths not rooted at a binder bound inside the expression."""
    for node, bound in walk_expr(e):
        if isinstance(node, PathRef) and node.path[0] not in bound:
            yield node.path


def map_paths(e: Expr, fn: Callable[[Path], Path], bound: Tuple[str, ...] = ()) -> Expr:
    """Rewrite every free path; paths under local binders are left alone."""
    if isinstance(e, PathRef):
        return e if e.path[0] in bound else PathRef(fn(e.path))
    if isinstance(e, Unary):
        return replace(e, operand=map_paths(e.operand, fn, bound))
    if isinstance(e, Binary):
        return replace(e, left=map_paths(e.left, fn, bound), right=map_paths(e.right, fn, bound))
    if isinstance(e, Call):
        if e.name == "observe":
            return e
        return replace(e, args=tuple(map_paths(a, fn, bound) for a in e.args))
    if isinstance(e, Iterate):
        return replace(e, source=map_paths(e.source, fn, bound),
                       body=map_paths(e.body, fn, bound + (e.binder,)))
    if isinstance(e, Size):
        return replace(e, source=map_paths(e.source, fn, bound))
    return e


def rebase(e: Expr, base: Path) -> Expr:
    """Ground a type-scope expression on the instance at `base`."""
    def absolute(path: Path) -> Path:
        if path[0] == "root":
            return path[1:]
        if path[0] == "self":
            return base + path[1:]
        return base + path
    return map_paths(e, absolute)


# Static typing

@dataclass(frozen=True)
class CollectionOf:
    type_name: str


ExprType = Union[ValueType, CollectionOf]
NUMERIC = (ValueType.INT, ValueType.REAL)


class Schema:
    """
    Static view of a model: attribute types per component type, and the
    type of every component in the declared instance tree.
    """

    def __init__(self, types: Mapping[str, Mapping[str, ValueType]], instances: Mapping[Path, str]):
        self.types = {name: dict(attrs) for name, attrs in types.items()}
        self.instances = dict(instances)

    @classmethod
    def from_system(cls, system: System, types: Mapping[str, Mapping[str, ValueType]]) -> "Schema":
        known = {name: dict(attrs) for name, attrs in types.items()}
        instances = {}
        for path, node in walk(system.root):
            if path:
                instances[path] = node.type_name
            if isinstance(node, AtomicComponent):
                known.setdefault(node.type_name, {a.name: a.declared_type for a in node.attributes})
        return cls(known, instances)

    def has_type(self, type_name: str) -> bool:
        return type_name in self.types

    def member_type(self, type_name: str, rest: Path, full: Path) -> ValueType:
        if not self.has_type(type_name):
            raise UnknownComponentType(type_name)
        if len(rest) != 1 or rest[0] not in self.types[type_name]:
            raise UnknownPath(full)
        return self.types[type_name][rest[0]]

    def absolute_type(self, path: Path) -> ValueType:
        owner = path[:-1]
        if owner not in self.instances:
            raise UnknownPath(path)
        return self.member_type(self.instances[owner], path[-1:], path)


@dataclass(frozen=True)
class Scope:
    """Name resolution for type checking; self_type is set inside a type body."""
    schema: Schema
    self_type: Optional[str] = None
    binders: Tuple[Tuple[str, str], ...] = ()
    allow_u: bool = False

    def bind(self, name: str, type_name: str) -> "Scope":
        return replace(self, binders=self.binders + ((name, type_name),))

    def binder_type(self, name: str) -> Optional[str]:
        for bound, type_name in reversed(self.binders):
            if bound == name:
                return type_name
        return None

    def path_type(self, path: Path) -> ValueType:
        bound = self.binder_type(path[0])
        if bound is not None:
            return self.schema.member_type(bound, path[1:], path)
        if self.self_type is not None:
            if path[0] == "root":
                return self.schema.absolute_type(path[1:])
            rest = path[1:] if path[0] == "self" else path
            return self.schema.member_type(self.self_type, rest, path)
        return self.schema.absolute_type(path)


def _require(actual: ExprType, allowed: Sequence[ValueType], what: str) -> None:
    if actual not in allowed:
        names = " or ".join(str(a) for a in allowed)
        raise TypeMismatch(f"{what} must be {names}, got {_type_name(actual)}")


def _type_name(t: ExprType) -> str:
    return f"collection of {t.type_name}" if isinstance(t, CollectionOf) else str(t)


def infer_type(e: Expr, scope: Scope) -> ExprType:
    """
    Static type of an expression.

    Raises:
        TypeMismatch: ill-typed operation
        UnknownPath, UnknownComponentType: names the scope cannot resolve
    """
    if isinstance(e, Literal):
        return value_type_of(e.value)
    if isinstance(e, PathRef):
        return scope.path_type(e.path)
    if isinstance(e, TimeRef):
        return ValueType.INT
    if isinstance(e, UniformRef):
        if not scope.allow_u:
            raise TypeMismatch("'u' is only available inside custom distributions")
        return ValueType.REAL
    if isinstance(e, Unary):
        t = infer_type(e.operand, scope)
        if e.op == "not":
            _require(t, (ValueType.BOOL,), "operand of 'not'")
            return ValueType.BOOL
        _require(t, NUMERIC, "operand of unary '-'")
        return t
    if isinstance(e, Binary):
        lt, rt = infer_type(e.left, scope), infer_type(e.right, scope)
        if e.op in LOGICAL_OPS:
            _require(lt, (ValueType.BOOL,), f"left operand of '{e.op}'")
            _require(rt, (ValueType.BOOL,), f"right operand of '{e.op}'")
            return ValueType.BOOL
        if e.op in ("=", "!="):
            if lt in NUMERIC and rt in NUMERIC:
                return ValueType.BOOL
            if lt != rt or isinstance(lt, CollectionOf):
                raise TypeMismatch(f"cannot compare {_type_name(lt)} with {_type_name(rt)}")
            return ValueType.BOOL
        if e.op in COMPARISON_OPS:
            _require(lt, NUMERIC, f"left operand of '{e.op}'")
            _require(rt, NUMERIC, f"right operand of '{e.op}'")
            return ValueType.BOOL
        if e.op == "+" and lt == rt == ValueType.STRING:
            return ValueType.STRING
        _require(lt, NUMERIC, f"left operand of '{e.op}'")
        _require(rt, NUMERIC, f"right operand of '{e.op}'")
        if e.op == "/":
            return ValueType.REAL
        return ValueType.INT if lt == rt == ValueType.INT else ValueType.REAL
    if isinstance(e, Call):
        return _infer_call(e, scope)
    if isinstance(e, AllInstances):
        if not scope.schema.has_type(e.type_name):
            raise UnknownComponentType(e.type_name)
        return CollectionOf(e.type_name)
    if isinstance(e, Iterate):
        source = infer_type(e.source, scope)
        if not isinstance(source, CollectionOf):
            raise TypeMismatch(f"'->{e.kind}' needs a collection, got {_type_name(source)}")
        body = infer_type(e.body, scope.bind(e.binder, source.type_name))
        _require(body, (ValueType.BOOL,), f"body of '->{e.kind}'")
        return source if e.kind == "select" else ValueType.BOOL
    if isinstance(e, Size):
        source = infer_type(e.source, scope)
        if not isinstance(source, CollectionOf):
            raise TypeMismatch(f"'->size()' needs a collection, got {_type_name(source)}")
        return ValueType.INT
    raise TypeError(f"not an expression: {e!r}")


def _infer_call(e: Call, scope: Scope) -> ExprType:
    if e.name == "observe":
        raise TypeMismatch("observe() is only allowed as the whole right-hand side of an assignment")
    if e.name not in BUILTINS:
        raise TypeMismatch(f"unknown function '{e.name}'")
    types = [infer_type(a, scope) for a in e.args]
    for i, t in enumerate(types):
        _require(t, NUMERIC, f"argument {i + 1} of {e.name}()")
    if e.name in ("min", "max"):
        if not types:
            raise TypeMismatch(f"{e.name}() needs at least one argument")
        return ValueType.INT if all(t == ValueType.INT for t in types) else ValueType.REAL
    expected = {"abs": 1, "floor": 1, "mod": 2}[e.name]
    if len(types) != expected:
        raise TypeMismatch(f"{e.name}() takes {expected} argument(s), got {len(types)}")
    if e.name == "abs":
        return types[0]
    if e.name == "floor":
        return ValueType.INT
    return ValueType.INT if all(t == ValueType.INT for t in types) else ValueType.REAL


# Evaluation

@dataclass(frozen=True)
class Env:
    """Dynamic bindings: quantifier binders to instance paths, and `u`."""
    binders: Tuple[Tuple[str, Path], ...] = ()
    u: Optional[float] = None

    def bind(self, name: str, path: Path) -> "Env":
        return replace(self, binders=self.binders + ((name, path),))

    def lookup(self, name: str) -> Optional[Path]:
        for bound, path in reversed(self.binders):
            if bound == name:
                return path
        return None


EMPTY_ENV = Env()


def resolve_ref(path: Path, state: SimulationState, env: Env) -> AttributeValue:
    """Read a (possibly binder-relative) attribute path from a state."""
    instance = env.lookup(path[0]) if env.binders else None
    if instance is None:
        found = resolve_path(state, path)
    else:
        try:
            resolve_path(state, instance)
        except PathNotFound:
            raise VanishedInstance(instance + path[1:], instance[-1])
        if len(path) == 1:
            raise TypeMismatch(f"binder '{path[0]}' is a component, not a value")
        found = resolve_path(state, instance + path[1:])
    if isinstance(found, ComponentRef):
        raise TypeMismatch(f"'{format_path(path)}' is a component, not an attribute")
    return found


def _numeric(value, what: str):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeMismatch(f"{what} must be numeric, got {value!r}")
    return value


def _check_int(value: int) -> int:
    if not INT64_MIN <= value <= INT64_MAX:
        raise EvaluationError(f"integer overflow: {value}")
    return value


def negate(value):
    _numeric(value, "operand of '-'")
    return _check_int(-value) if isinstance(value, int) else -value


def arithmetic(op: str, a, b):
    if op == "+" and isinstance(a, str) and isinstance(b, str):
        return a + b
    _numeric(a, f"left operand of '{op}'")
    _numeric(b, f"right operand of '{op}'")
    if op == "/":
        if b == 0:
            raise DivisionByZero("division by zero")
        return a / b
    result = a + b if op == "+" else a - b if op == "-" else a * b
    return _check_int(result) if isinstance(result, int) else result


def compare(op: str, a, b) -> bool:
    if op in ("=", "!="):
        numeric = not isinstance(a, (bool, str)) and not isinstance(b, (bool, str))
        if not numeric and type(a) is not type(b):
            raise TypeMismatch(f"cannot compare {a!r} with {b!r}")
        return (a == b) if op == "=" else (a != b)
    _numeric(a, f"left operand of '{op}'")
    _numeric(b, f"right operand of '{op}'")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def call_builtin(name: str, args: Sequence):
    for a in args:
        _numeric(a, f"argument of {name}()")
    if name == "min":
        return min(args)
    if name == "max":
        return max(args)
    if name == "abs":
        return _check_int(abs(args[0])) if isinstance(args[0], int) else abs(args[0])
    if name == "floor":
        if isinstance(args[0], float) and not math.isfinite(args[0]):
            raise EvaluationError(f"floor of non-finite value {args[0]}")
        return _check_int(math.floor(args[0]))
    if name == "mod":
        if args[1] == 0:
            raise DivisionByZero("mod by zero")
        return args[0] % args[1]
    raise EvaluationError(f"unknown function '{name}'")


def eval_expr(e: Expr, state: SimulationState, env: Env = EMPTY_ENV) -> AttributeValue:
    """
    Evaluate an expression against a state; pure and deterministic.

    Raises:
        PathNotFound, TypeMismatch, DivisionByZero, EvaluationError
    """
    value = _eval(e, state, env)
    if isinstance(value, tuple):
        raise TypeMismatch("a collection is not a value; use ->size(), ->forAll or ->exists")
    return value


def _eval(e: Expr, state: SimulationState, env: Env):
    if isinstance(e, Binary):
        if e.op == "and":
            return truth(_eval(e.left, state, env)) and truth(_eval(e.right, state, env))
        if e.op == "or":
            return truth(_eval(e.left, state, env)) or truth(_eval(e.right, state, env))
        a, b = _eval(e.left, state, env), _eval(e.right, state, env)
        if e.op in COMPARISON_OPS:
            return compare(e.op, a, b)
        return arithmetic(e.op, a, b)
    if isinstance(e, Literal):
        return e.value
    if isinstance(e, PathRef):
        return resolve_ref(e.path, state, env)
    if isinstance(e, TimeRef):
        return state.time
    if isinstance(e, Unary):
        v = _eval(e.operand, state, env)
        if e.op == "not":
            return not truth(v)
        return negate(v)
    if isinstance(e, Call):
        if e.name == "observe":
            raise EvaluationError("observe() is only allowed as the whole right-hand side of an assignment")
        return call_builtin(e.name, [_eval(a, state, env) for a in e.args])
    if isinstance(e, UniformRef):
        if env.u is None:
            raise EvaluationError("'u' is only bound inside custom distributions")
        return env.u
    if isinstance(e, AllInstances):
        return tuple(ref.path for ref in instances_of_type(state, e.type_name))
    if isinstance(e, Iterate):
        return _iterate(e, state, env)
    if isinstance(e, Size):
        source = _eval(e.source, state, env)
        if not isinstance(source, tuple):
            raise TypeMismatch("'->size()' needs a collection")
        return len(source)
    raise TypeError(f"not an expression: {e!r}")


def _iterate(e: Iterate, state: SimulationState, env: Env):
    source = _eval(e.source, state, env)
    if not isinstance(source, tuple):
        raise TypeMismatch(f"'->{e.kind}' needs a collection")
    if e.kind == "select":
        return tuple(p for p in source if truth(_eval(e.body, state, env.bind(e.binder, p))))
    if e.kind == "forall":
        return all(truth(_eval(e.body, state, env.bind(e.binder, p))) for p in source)
    return any(truth(_eval(e.body, state, env.bind(e.binder, p))) for p in source)


def truth(value) -> bool:
    if not isinstance(value, bool):
        raise TypeMismatch(f"expected a boolean, got {value!r}")
    return value


# Parse errors

def syntax_diagnostic(error: UnexpectedInput, text: str) -> Diagnostic:
    """Turn a lark parse error into a located diagnostic."""
    if isinstance(error, UnexpectedEOF) or getattr(error, "line", -1) < 1:
        lines = text.splitlines() or [""]
        return Diagnostic(Severity.ERROR, len(lines), len(lines[-1]) + 1, "unexpected end of input", "syntax")
    if isinstance(error, UnexpectedCharacters):
        return Diagnostic(Severity.ERROR, error.line, error.column,
                          f"unexpected character {text[error.pos_in_stream]!r}", "syntax")
    if isinstance(error, UnexpectedToken):
        expected = ", ".join(sorted(error.expected)[:8])
        return Diagnostic(Severity.ERROR, error.line, error.column,
                          f"unexpected {str(error.token)!r}; expected one of: {expected}", "syntax")
    return Diagnostic(Severity.ERROR, error.line, error.column, str(error).splitlines()[0], "syntax")


def visit_diagnostic(error: VisitError) -> Diagnostic:
    """Diagnostic for an error raised while building the AST from a parse tree."""
    meta = getattr(error.obj, "meta", None)
    if meta is not None and not meta.empty:
        return Diagnostic(Severity.ERROR, meta.line, meta.column, str(error.orig_exc), "syntax")
    return Diagnostic(Severity.ERROR, 0, 0, str(error.orig_exc), "syntax")
