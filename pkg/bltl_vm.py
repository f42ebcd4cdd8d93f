"""
Property programs: bounded-LTL formulas compiled to bytecode for a stack VM.

Every subformula becomes a block. Temporal blocks push three-valued
verdicts; atoms run expression code over the same instruction set
(push, load, add, sub, mul, div, compare, jumps). A MonitorSession feeds
states one at a time, re-runs block 0 at position 0 and keeps decided
sub-results in registers keyed by (block, position, bindings), so a state
is only inspected when a decision still depends on it.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, List, Optional, Tuple

from enum_compat import StrEnum
from errors import OutOfOrderState, PropertyTypeError, TypeMismatch, VanishedInstance
from expressions import (
    EMPTY_ENV, AllInstances, Binary, Call, Env, Expr, Iterate, Literal, PathRef, Schema, Size, TimeRef,
    Unary, UniformRef, arithmetic, call_builtin, compare, format_expr, negate, resolve_ref, truth,
)
from bltl import (
    And, Atom, Finally, Formula, Globally, Implies, Next, Not, Or, Quantified, Until, Verdict,
    check_formula, format_formula, required_window,
)
from model_core import SimulationState, instances_of_type

logger = logging.getLogger(__name__)


class Opcode(StrEnum):
    # expression layer
    PUSH_CONST = "PUSH_CONST"
    LOAD_PATH = "LOAD_PATH"
    LOAD_BOUND = "LOAD_BOUND"
    LOAD_TIME = "LOAD_TIME"
    NEG = "NEG"
    NOT = "NOT"
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    DIV = "DIV"
    LT = "LT"
    LE = "LE"
    GT = "GT"
    GE = "GE"
    EQ = "EQ"
    NE = "NE"
    CALL_FN = "CALL_FN"
    JUMP_IF_FALSE_OR_POP = "JUMP_IF_FALSE_OR_POP"
    JUMP_IF_TRUE_OR_POP = "JUMP_IF_TRUE_OR_POP"
    CHECK_BOOL = "CHECK_BOOL"
    ALL_INSTANCES = "ALL_INSTANCES"
    ITERATE = "ITERATE"
    SIZE = "SIZE"
    # temporal layer
    EVAL_ATOM = "EVAL_ATOM"
    CALL_BLOCK = "CALL_BLOCK"
    V_NOT = "V_NOT"
    V_AND = "V_AND"
    V_OR = "V_OR"
    JUMP_IF_FALSE = "JUMP_IF_FALSE"
    JUMP_IF_TRUE = "JUMP_IF_TRUE"
    FOLD_ALL = "FOLD_ALL"
    FOLD_ANY = "FOLD_ANY"
    UNTIL = "UNTIL"
    QUANT_ALL = "QUANT_ALL"
    QUANT_ANY = "QUANT_ANY"
    RETURN = "RETURN"


_BINARY_OPS = {
    "+": Opcode.ADD, "-": Opcode.SUB, "*": Opcode.MUL, "/": Opcode.DIV,
    "<": Opcode.LT, "<=": Opcode.LE, ">": Opcode.GT, ">=": Opcode.GE, "=": Opcode.EQ, "!=": Opcode.NE,
}

_VALUE_OPS = {
    Opcode.ADD: lambda a, b: arithmetic("+", a, b),
    Opcode.SUB: lambda a, b: arithmetic("-", a, b),
    Opcode.MUL: lambda a, b: arithmetic("*", a, b),
    Opcode.DIV: lambda a, b: arithmetic("/", a, b),
    Opcode.LT: lambda a, b: compare("<", a, b),
    Opcode.LE: lambda a, b: compare("<=", a, b),
    Opcode.GT: lambda a, b: compare(">", a, b),
    Opcode.GE: lambda a, b: compare(">=", a, b),
    Opcode.EQ: lambda a, b: compare("=", a, b),
    Opcode.NE: lambda a, b: compare("!=", a, b),
}


@dataclass(frozen=True)
class Instruction:
    op: Opcode
    a: Any = None
    b: Any = None

    def __str__(self) -> str:
        operands = " ".join(_operand(x) for x in (self.a, self.b) if x is not None)
        return f"{self.op:<22}{operands}".rstrip()


def _operand(x) -> str:
    if isinstance(x, tuple) and all(isinstance(s, str) for s in x):
        return ".".join(x)
    if isinstance(x, str):
        return x
    return repr(x)


@dataclass(frozen=True)
class CodeUnit:
    label: str
    code: Tuple[Instruction, ...]


@dataclass(frozen=True)
class PropertyProgram:
    formula: Formula
    blocks: Tuple[CodeUnit, ...]
    exprs: Tuple[CodeUnit, ...]
    window: int

    @property
    def capacity(self) -> int:
        return self.window + 1

    def disassemble(self) -> str:
        lines = [f"; {format_formula(self.formula)}",
                 f"; window {self.window}, capacity {self.capacity} states"]
        for kind, units in (("block", self.blocks), ("expr", self.exprs)):
            for i, unit in enumerate(units):
                lines.append(f"{kind} {i}: {unit.label}")
                for pc, ins in enumerate(unit.code):
                    lines.append(f"  {pc:04d}  {ins}")
        return "\n".join(lines)


# Compiler

class _Compiler:
    def __init__(self):
        self.blocks: List[Optional[CodeUnit]] = []
        self.exprs: List[Optional[CodeUnit]] = []

    def formula(self, f: Formula, bound: Tuple[str, ...]) -> int:
        index = len(self.blocks)
        self.blocks.append(None)
        code: List[Instruction] = []
        if isinstance(f, Atom):
            code.append(Instruction(Opcode.EVAL_ATOM, self.expr(f.expr, bound)))
        elif isinstance(f, Not):
            code += [Instruction(Opcode.CALL_BLOCK, self.formula(f.operand, bound), 0),
                     Instruction(Opcode.V_NOT)]
        elif isinstance(f, (And, Or, Implies)):
            left = self.formula(f.left, bound)
            right = self.formula(f.right, bound)
            code.append(Instruction(Opcode.CALL_BLOCK, left, 0))
            if isinstance(f, Implies):
                code.append(Instruction(Opcode.V_NOT))
            jump = Opcode.JUMP_IF_FALSE if isinstance(f, And) else Opcode.JUMP_IF_TRUE
            combine = Opcode.V_AND if isinstance(f, And) else Opcode.V_OR
            code += [Instruction(jump, len(code) + 3),
                     Instruction(Opcode.CALL_BLOCK, right, 0),
                     Instruction(combine)]
        elif isinstance(f, Next):
            code.append(Instruction(Opcode.CALL_BLOCK, self.formula(f.operand, bound), 1))
        elif isinstance(f, Finally):
            code.append(Instruction(Opcode.FOLD_ANY, self.formula(f.operand, bound), f.bound))
        elif isinstance(f, Globally):
            code.append(Instruction(Opcode.FOLD_ALL, self.formula(f.operand, bound), f.bound))
        elif isinstance(f, Until):
            left = self.formula(f.left, bound)
            right = self.formula(f.right, bound)
            code.append(Instruction(Opcode.UNTIL, (left, right), f.bound))
        elif isinstance(f, Quantified):
            body = self.formula(f.body, bound + (f.binder,))
            op = Opcode.QUANT_ALL if f.kind == "forall" else Opcode.QUANT_ANY
            code.append(Instruction(op, (f.binder, f.type_name), body))
        else:
            raise TypeError(f"not a formula: {f!r}")
        code.append(Instruction(Opcode.RETURN))
        self.blocks[index] = CodeUnit(format_formula(f), tuple(code))
        return index

    def expr(self, e: Expr, bound: Tuple[str, ...]) -> int:
        index = len(self.exprs)
        self.exprs.append(None)
        code: List[Instruction] = []
        self._emit(e, bound, code)
        self.exprs[index] = CodeUnit(format_expr(e), tuple(code))
        return index

    def _emit(self, e: Expr, bound: Tuple[str, ...], code: List[Instruction]) -> None:
        if isinstance(e, Literal):
            code.append(Instruction(Opcode.PUSH_CONST, e.value))
        elif isinstance(e, PathRef):
            op = Opcode.LOAD_BOUND if e.path[0] in bound else Opcode.LOAD_PATH
            code.append(Instruction(op, e.path))
        elif isinstance(e, TimeRef):
            code.append(Instruction(Opcode.LOAD_TIME))
        elif isinstance(e, Unary):
            self._emit(e.operand, bound, code)
            code.append(Instruction(Opcode.NOT if e.op == "not" else Opcode.NEG))
        elif isinstance(e, Binary) and e.op in ("and", "or"):
            self._emit(e.left, bound, code)
            jump = Instruction(Opcode.JUMP_IF_FALSE_OR_POP if e.op == "and" else Opcode.JUMP_IF_TRUE_OR_POP)
            at = len(code)
            code.append(jump)
            self._emit(e.right, bound, code)
            code.append(Instruction(Opcode.CHECK_BOOL))
            code[at] = Instruction(jump.op, len(code))
        elif isinstance(e, Binary):
            self._emit(e.left, bound, code)
            self._emit(e.right, bound, code)
            code.append(Instruction(_BINARY_OPS[e.op]))
        elif isinstance(e, Call):
            for arg in e.args:
                self._emit(arg, bound, code)
            code.append(Instruction(Opcode.CALL_FN, e.name, len(e.args)))
        elif isinstance(e, AllInstances):
            code.append(Instruction(Opcode.ALL_INSTANCES, e.type_name))
        elif isinstance(e, Iterate):
            self._emit(e.source, bound, code)
            body = self.expr(e.body, bound + (e.binder,))
            code.append(Instruction(Opcode.ITERATE, (e.kind, e.binder), body))
        elif isinstance(e, Size):
            self._emit(e.source, bound, code)
            code.append(Instruction(Opcode.SIZE))
        elif isinstance(e, UniformRef):
            raise PropertyTypeError("'u' cannot be used in a property")
        else:
            raise TypeError(f"not an expression: {e!r}")


def compile(f: Formula, schema: Optional[Schema] = None) -> PropertyProgram:
    """
    Compile a formula; deterministic.

    Raises:
        PropertyTypeError, UnknownPath, UnknownComponentType: when a schema
            is given and the formula does not fit it
    """
    if schema is not None:
        check_formula(f, schema)
    compiler = _Compiler()
    compiler.formula(f, ())
    program = PropertyProgram(f, tuple(compiler.blocks), tuple(compiler.exprs), required_window(f))
    logger.debug(f"Compiled property: {len(program.blocks)} blocks, {len(program.exprs)} expression units, "
                 f"window {program.window}")
    return program


# Kleene connectives

def v_not(v: Verdict) -> Verdict:
    if v == Verdict.UNDECIDED:
        return v
    return Verdict.FALSE if v == Verdict.TRUE else Verdict.TRUE


def v_and(a: Verdict, b: Verdict) -> Verdict:
    if a == Verdict.FALSE or b == Verdict.FALSE:
        return Verdict.FALSE
    if a == Verdict.TRUE and b == Verdict.TRUE:
        return Verdict.TRUE
    return Verdict.UNDECIDED


def v_or(a: Verdict, b: Verdict) -> Verdict:
    return v_not(v_and(v_not(a), v_not(b)))


# Expression execution

def run_expr(program: PropertyProgram, index: int, state: SimulationState, env: Env):
    """Run one expression unit against a state; same semantics as eval_expr."""
    code = program.exprs[index].code
    stack: List[Any] = []
    pc = 0
    while pc < len(code):
        ins = code[pc]
        pc += 1
        op = ins.op
        if op in _VALUE_OPS:
            right = stack.pop()
            stack.append(_VALUE_OPS[op](stack.pop(), right))
        elif op == Opcode.PUSH_CONST:
            stack.append(ins.a)
        elif op == Opcode.LOAD_PATH:
            stack.append(resolve_ref(ins.a, state, EMPTY_ENV))
        elif op == Opcode.LOAD_BOUND:
            stack.append(resolve_ref(ins.a, state, env))
        elif op == Opcode.LOAD_TIME:
            stack.append(state.time)
        elif op == Opcode.NEG:
            stack.append(negate(stack.pop()))
        elif op == Opcode.NOT:
            stack.append(not truth(stack.pop()))
        elif op == Opcode.JUMP_IF_FALSE_OR_POP:
            if not truth(stack[-1]):
                pc = ins.a
            else:
                stack.pop()
        elif op == Opcode.JUMP_IF_TRUE_OR_POP:
            if truth(stack[-1]):
                pc = ins.a
            else:
                stack.pop()
        elif op == Opcode.CHECK_BOOL:
            truth(stack[-1])
        elif op == Opcode.CALL_FN:
            if ins.a == "observe":
                raise TypeMismatch("observe() cannot be used in a property")
            args = stack[len(stack) - ins.b:]
            del stack[len(stack) - ins.b:]
            stack.append(call_builtin(ins.a, args))
        elif op == Opcode.ALL_INSTANCES:
            stack.append(tuple(ref.path for ref in instances_of_type(state, ins.a)))
        elif op == Opcode.ITERATE:
            kind, binder = ins.a
            source = stack.pop()
            if not isinstance(source, tuple):
                raise TypeMismatch(f"'->{kind}' needs a collection")
            stack.append(_iterate(program, ins.b, kind, binder, source, state, env))
        elif op == Opcode.SIZE:
            source = stack.pop()
            if not isinstance(source, tuple):
                raise TypeMismatch("'->size()' needs a collection")
            stack.append(len(source))
        else:
            raise RuntimeError(f"unknown expression opcode {op}")
    return stack.pop()


def _iterate(program, body, kind, binder, source, state, env):
    def holds(path) -> bool:
        return truth(run_expr(program, body, state, env.bind(binder, path)))
    if kind == "select":
        return tuple(p for p in source if holds(p))
    if kind == "forall":
        return all(holds(p) for p in source)
    return any(holds(p) for p in source)


# Monitor

class MonitorSession:
    """
    Incremental three-valued evaluation of one program over one trace.

    States must be fed in step order from step 0. The retained ring buffer
    never holds more than window + 1 states; once the top-level verdict is
    decided it never changes.
    """

    def __init__(self, program: PropertyProgram):
        self.program = program
        self.capacity = program.capacity
        self.buffer: Deque[SimulationState] = deque(maxlen=self.capacity)
        self.verdict = Verdict.UNDECIDED
        self.steps_consumed = 0
        self.peak_retained = 0
        self.registers: Dict[Tuple[int, int, tuple], Verdict] = {}
        self.progress: Dict[Tuple[int, int, tuple], int] = {}

    def feed_state(self, state: SimulationState) -> Verdict:
        """
        Consume the next state and return the top-level verdict.

        Raises:
            OutOfOrderState: the state is not the next step
        """
        if self.verdict.decided:
            return self.verdict
        if state.step_index != self.steps_consumed:
            raise OutOfOrderState(self.steps_consumed, state.step_index)
        self.buffer.append(state)
        self.steps_consumed += 1
        self.peak_retained = max(self.peak_retained, len(self.buffer))
        self.verdict = self._run(0, 0, EMPTY_ENV)
        return self.verdict

    @property
    def retained(self) -> int:
        return len(self.buffer)

    def _state(self, pos: int) -> Optional[SimulationState]:
        if pos >= self.steps_consumed:
            return None
        first = self.steps_consumed - len(self.buffer)
        if pos < first:
            raise RuntimeError(f"state {pos} was evicted before the verdict was decided")
        return self.buffer[pos - first]

    def _run(self, block: int, pos: int, env: Env) -> Verdict:
        key = (block, pos, env.binders)
        cached = self.registers.get(key)
        if cached is not None:
            return cached
        # every block reads its own position first
        if pos >= self.steps_consumed:
            return Verdict.UNDECIDED

        code = self.program.blocks[block].code
        stack: List[Verdict] = []
        pc = 0
        while True:
            ins = code[pc]
            pc += 1
            op = ins.op
            if op == Opcode.EVAL_ATOM:
                stack.append(self._atom(ins.a, pos, env))
            elif op == Opcode.CALL_BLOCK:
                stack.append(self._run(ins.a, pos + ins.b, env))
            elif op == Opcode.V_NOT:
                stack.append(v_not(stack.pop()))
            elif op == Opcode.V_AND:
                right = stack.pop()
                stack.append(v_and(stack.pop(), right))
            elif op == Opcode.V_OR:
                right = stack.pop()
                stack.append(v_or(stack.pop(), right))
            elif op == Opcode.JUMP_IF_FALSE:
                if stack[-1] == Verdict.FALSE:
                    pc = ins.a
            elif op == Opcode.JUMP_IF_TRUE:
                if stack[-1] == Verdict.TRUE:
                    pc = ins.a
            elif op in (Opcode.FOLD_ALL, Opcode.FOLD_ANY):
                stack.append(self._fold(key, op == Opcode.FOLD_ALL, ins.a, ins.b, pos, env))
            elif op == Opcode.UNTIL:
                stack.append(self._until(key, ins.a[0], ins.a[1], ins.b, pos, env))
            elif op in (Opcode.QUANT_ALL, Opcode.QUANT_ANY):
                stack.append(self._quantify(op == Opcode.QUANT_ALL, ins.a[0], ins.a[1], ins.b, pos, env))
            elif op == Opcode.RETURN:
                verdict = stack.pop()
                if verdict.decided:
                    self.registers[key] = verdict
                return verdict
            else:
                raise RuntimeError(f"unknown temporal opcode {op}")

    def _atom(self, index: int, pos: int, env: Env) -> Verdict:
        state = self._state(pos)
        if state is None:
            return Verdict.UNDECIDED
        try:
            value = run_expr(self.program, index, state, env)
        except VanishedInstance:
            return Verdict.FALSE
        if not isinstance(value, bool):
            raise PropertyTypeError(f"atom '{self.program.exprs[index].label}' evaluated to {value!r}")
        return Verdict.of(value)

    def _fold(self, key, conjunctive: bool, child: int, bound: int, pos: int, env: Env) -> Verdict:
        # offsets below `start` are known to be neutral (true for G, false for F)
        start = self.progress.get(key, 0)
        neutral = Verdict.TRUE if conjunctive else Verdict.FALSE
        absorbing = Verdict.FALSE if conjunctive else Verdict.TRUE
        undecided = False
        for offset in range(start, bound + 1):
            if pos + offset >= self.steps_consumed:
                undecided = True
                break
            v = self._run(child, pos + offset, env)
            if v == absorbing:
                return absorbing
            if v == Verdict.UNDECIDED:
                undecided = True
            elif not undecided:
                self.progress[key] = offset + 1
        return Verdict.UNDECIDED if undecided else neutral

    def _until(self, key, left: int, right: int, bound: int, pos: int, env: Env) -> Verdict:
        # OR over j of (left holds on [pos, j) and right holds at j)
        start = self.progress.get(key, 0)
        result = Verdict.FALSE
        prefix = Verdict.TRUE
        for offset in range(start, bound + 1):
            if pos + offset >= self.steps_consumed:
                return v_or(result, Verdict.UNDECIDED) if prefix != Verdict.FALSE else result
            r = self._run(right, pos + offset, env)
            result = v_or(result, v_and(prefix, r))
            if result == Verdict.TRUE:
                return result
            prefix = v_and(prefix, self._run(left, pos + offset, env))
            if prefix == Verdict.FALSE:
                return result
            if result == Verdict.FALSE and prefix == Verdict.TRUE:
                self.progress[key] = offset + 1
        return result

    def _quantify(self, universal: bool, binder: str, type_name: str, body: int, pos: int, env: Env) -> Verdict:
        state = self._state(pos)
        if state is None:
            return Verdict.UNDECIDED
        result = Verdict.TRUE if universal else Verdict.FALSE
        for ref in instances_of_type(state, type_name):
            v = self._run(body, pos, env.bind(binder, ref.path))
            result = v_and(result, v) if universal else v_or(result, v)
            if result == (Verdict.FALSE if universal else Verdict.TRUE):
                break
        return result


def feed_state(session: MonitorSession, state: SimulationState) -> Verdict:
    return session.feed_state(state)
