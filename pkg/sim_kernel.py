"""
Discrete-time stochastic execution of simple commands.

A command is a (guard, rate, actions) triple declared per component type
and grounded once per instance. Each step picks one enabled command with
probability proportional to its rate, evaluates every right-hand side
against the pre-step state and applies the actions in order. A state with
no enabled command stutters.
"""

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from errors import (
    ActionFailed, AllRatesZero, CommandFailed, CyclicInit, ModelError, NegativeRate, PathNotFound,
    SmcError, TypeMismatch,
)
from expressions import Expr, Literal, Schema, eval_expr, format_expr, rebase
from model_core import (
    AddSubcomponent, Attribute, AtomicComponent, AttributeValue, HierarchicalComponent, Path,
    RemoveSubcomponent, SimulationState, Subcomponent, System, ValueType, apply_structural_change,
    change_structure, format_path, set_attributes, update_component, walk,
)
from stochastic import DistributionSpec, RandomVariable, StreamBank, observe, rebase_distribution

logger = logging.getLogger(__name__)


# Declarations (type scope, shared with the descriptor parser)

@dataclass(frozen=True)
class AttrDecl:
    name: str
    value_type: ValueType
    init: Expr
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RvDecl:
    name: str
    spec: DistributionSpec
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class AssignAction:
    target: Path
    expr: Expr


@dataclass(frozen=True)
class ObserveAction:
    """`target := observe(variable)` where variable is a random variable of the same type."""
    target: Path
    variable: str


@dataclass(frozen=True)
class SpawnAction:
    name: str
    type_name: str
    parent: Path


@dataclass(frozen=True)
class DespawnAction:
    target: Path


ActionDecl = Union[AssignAction, ObserveAction, SpawnAction, DespawnAction]


@dataclass(frozen=True)
class CommandDecl:
    name: str
    guard: Expr
    rate: Expr
    actions: Tuple[ActionDecl, ...]
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TypeTemplate:
    """A component type; types without attributes are containers."""
    name: str
    attributes: Tuple[AttrDecl, ...] = ()
    variables: Tuple[RvDecl, ...] = ()
    commands: Tuple[CommandDecl, ...] = ()
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    @property
    def is_hierarchical(self) -> bool:
        return not self.attributes

    def variable(self, name: str) -> Optional[RvDecl]:
        for rv in self.variables:
            if rv.name == name:
                return rv
        return None


# Grounded commands

@dataclass(frozen=True)
class Assign:
    target: Path
    expr: Expr


@dataclass(frozen=True)
class ObserveAssign:
    target: Path
    variable: RandomVariable


@dataclass(frozen=True)
class Spawn:
    name: str
    type_name: str
    parent: Path


@dataclass(frozen=True)
class Despawn:
    target: Path


Action = Union[Assign, ObserveAssign, Spawn, Despawn]


@dataclass(frozen=True)
class SimpleCommand:
    id: str
    guard: Expr
    rate: Expr
    actions: Tuple[Action, ...]
    owner: Path = ()


def ground_action(action: ActionDecl, base: Path) -> Action:
    if isinstance(action, AssignAction):
        return Assign(rebase_path(action.target, base), rebase(action.expr, base))
    if isinstance(action, ObserveAction):
        raise TypeError("observe actions are grounded by ground_command")
    if isinstance(action, SpawnAction):
        return Spawn(action.name, action.type_name, rebase_path(action.parent, base))
    if isinstance(action, DespawnAction):
        return Despawn(rebase_path(action.target, base))
    raise TypeError(f"unsupported action {action!r}")


def rebase_path(path: Path, base: Path) -> Path:
    if path and path[0] == "root":
        return path[1:]
    if path and path[0] == "self":
        return base + path[1:]
    return base + path


def ground_variable(template: TypeTemplate, rv: RvDecl, base: Path) -> RandomVariable:
    return RandomVariable(format_path(base + (rv.name,)), rebase_distribution(rv.spec, base))


def ground_command(template: TypeTemplate, decl: CommandDecl, base: Path) -> SimpleCommand:
    actions: List[Action] = []
    for action in decl.actions:
        if isinstance(action, ObserveAction):
            rv = template.variable(action.variable)
            if rv is None:
                raise ModelError(f"{template.name}.{decl.name}: unknown random variable '{action.variable}'")
            actions.append(ObserveAssign(rebase_path(action.target, base), ground_variable(template, rv, base)))
        else:
            actions.append(ground_action(action, base))
    return SimpleCommand(
        id=format_path(base + (decl.name,)) if base else decl.name,
        guard=rebase(decl.guard, base),
        rate=rebase(decl.rate, base),
        actions=tuple(actions),
        owner=base,
    )


# Model

class ExecutableModel:
    """
    Built model: initial snapshot, type templates and the grounded tables.

    Grounded commands are cached on the structure index of each snapshot,
    so they are recomputed only after a structural change.
    """

    def __init__(self, system: System, templates: Dict[str, TypeTemplate], seed: int = 0):
        self.system = system
        self.templates = dict(templates)
        self.seed = seed
        self.commands: Tuple[SimpleCommand, ...] = self.commands_for(system)
        self.variables: Dict[str, RandomVariable] = {
            v.id: v for v in self._ground_variables(system)
        }

    def initial_state(self) -> SimulationState:
        return SimulationState(step_index=0, time=0, system=self.system)

    def commands_for(self, system: System) -> Tuple[SimpleCommand, ...]:
        return system.index.memo("commands", lambda: tuple(self._ground(system)))

    def _instances(self, system: System) -> Iterator[Tuple[Path, TypeTemplate]]:
        for path, node in walk(system.root):
            template = self.templates.get(node.type_name)
            if template is not None:
                yield path, template

    def _ground(self, system: System) -> Iterator[SimpleCommand]:
        for path, template in self._instances(system):
            for decl in template.commands:
                yield ground_command(template, decl, path)

    def _ground_variables(self, system: System) -> Iterator[RandomVariable]:
        for path, template in self._instances(system):
            for rv in template.variables:
                yield ground_variable(template, rv, path)

    def schema(self) -> Schema:
        types = {name: {a.name: a.value_type for a in t.attributes} for name, t in self.templates.items()}
        return Schema.from_system(self.system, types)

    def new_trace(self, trace_index: int, seed: Optional[int] = None, retain: Optional[int] = None) -> "Trace":
        return Trace(self, self.seed if seed is None else seed, trace_index, retain=retain)


def instantiate(
    state: SimulationState,
    templates: Dict[str, TypeTemplate],
    parent: Path,
    name: str,
    type_name: str,
    checked: bool = True,
) -> SimulationState:
    """
    Insert a new instance of a type and evaluate its attribute inits in order.

    Inits see the partially built instance, so an init may read attributes
    declared before it. `checked` enforces the open flag (runtime spawn).

    Raises:
        CyclicInit: an init reads an attribute declared later
        ClosedSystem, PathNotFound, DuplicateName: the insertion does not fit
    """
    template = templates.get(type_name)
    if template is None:
        raise ModelError(f"unknown component type '{type_name}'")
    path = parent + (name,)
    if template.is_hierarchical:
        component = HierarchicalComponent(type_name)
    else:
        component = AtomicComponent(type_name)
    change = AddSubcomponent(parent, Subcomponent(name, component))
    if checked:
        state = apply_structural_change(state, change)
    else:
        state = replace(state, system=change_structure(state.system, change))

    later = {a.name for a in template.attributes}
    for decl in template.attributes:
        later.discard(decl.name)
        try:
            value = eval_expr(rebase(decl.init, path), state)
        except PathNotFound as e:
            if e.segment in later or e.segment == decl.name:
                raise CyclicInit(type_name, decl.name, e.segment) from e
            raise
        attribute = Attribute(decl.name, decl.value_type, value)

        def add(node, attribute=attribute):
            return node.with_attribute(attribute)
        state = replace(state, system=update_component(state.system, path, add))
    return state


# Stepping

def enabled_commands(state: SimulationState, commands: Sequence[SimpleCommand]) -> List[Tuple[SimpleCommand, float]]:
    """
    Commands whose guard holds, with their evaluated rates, in declaration order.

    Raises:
        NegativeRate: an enabled command evaluated to a negative rate
        CommandFailed: a guard or rate expression raised
    """
    enabled = []
    for command in commands:
        try:
            guard = eval_expr(command.guard, state)
        except SmcError as e:
            raise CommandFailed(command.id, "guard", e) from e
        if guard is not True:
            if guard is not False:
                raise CommandFailed(command.id, "guard", TypeMismatch(f"guard evaluated to {guard!r}"))
            continue
        try:
            rate = eval_expr(command.rate, state)
        except SmcError as e:
            raise CommandFailed(command.id, "rate", e) from e
        if isinstance(rate, (bool, str)):
            raise CommandFailed(command.id, "rate", TypeMismatch(f"rate evaluated to {rate!r}"))
        if rate < 0:
            raise NegativeRate(command.id, rate)
        enabled.append((command, rate))
    return enabled


def select_command(enabled: Sequence[Tuple[SimpleCommand, float]], u: float) -> SimpleCommand:
    """Pick by cumulative rate with one uniform sample u in [0, 1)."""
    total = sum(rate for _, rate in enabled)
    if total <= 0:
        raise AllRatesZero([c.id for c, _ in enabled])
    target = u * total
    cumulative = 0.0
    chosen = None
    for command, rate in enabled:
        if rate <= 0:
            continue
        chosen = command
        cumulative += rate
        if target < cumulative:
            break
    return chosen


def execute(state: SimulationState, command: SimpleCommand, model: ExecutableModel, streams: StreamBank) -> SimulationState:
    """Apply one command's actions; right-hand sides read the pre-step state."""
    pre = state
    values: List[Optional[AttributeValue]] = []
    for action in command.actions:
        if isinstance(action, Assign):
            values.append(eval_expr(action.expr, pre))
        elif isinstance(action, ObserveAssign):
            values.append(observe(action.variable, pre, streams.stream(action.variable.id)))
        else:
            values.append(None)

    system = state.system
    changed = False
    writes: List[Tuple[Path, AttributeValue]] = []
    for action, value in zip(command.actions, values):
        if isinstance(action, (Assign, ObserveAssign)):
            writes.append((action.target, value))
            continue
        # pending writes land before the structure changes under them
        if writes:
            system = set_attributes(system, writes)
            writes = []
        if isinstance(action, Spawn):
            name = f"{action.name}_{system.spawn_counter}"
            system = replace(system, spawn_counter=system.spawn_counter + 1)
            spawned = instantiate(replace(state, system=system), model.templates, action.parent, name, action.type_name)
            system = spawned.system
            changed = True
        elif isinstance(action, Despawn):
            system = apply_structural_change(replace(state, system=system), RemoveSubcomponent(action.target)).system
            changed = True
    if writes:
        system = set_attributes(system, writes)
    return SimulationState(state.step_index, state.time, system, structure_changed=changed)


def step(state: SimulationState, model: ExecutableModel, streams: StreamBank) -> SimulationState:
    """
    One discrete-time step.

    Raises:
        NegativeRate, AllRatesZero: invalid rates among enabled commands
        ActionFailed: an action raised; the run is aborted
    """
    enabled = enabled_commands(state, model.commands_for(state.system))
    if not enabled:
        return SimulationState(state.step_index + 1, state.time + 1, state.system)
    command = select_command(enabled, streams.selection.uniform())
    try:
        after = execute(state, command, model, streams)
    except SmcError as e:
        raise ActionFailed(command.id, e) from e
    return SimulationState(state.step_index + 1, state.time + 1, after.system, after.structure_changed)


# Traces

class Trace:
    """
    A lazily extended trace of one (seed, trace_index) pair.

    With `retain` set, only the newest `retain` states are kept; older
    states are evicted and can no longer be read.
    """

    def __init__(self, model: ExecutableModel, global_seed: int, trace_index: int, retain: Optional[int] = None):
        if retain is not None and retain < 1:
            raise ValueError("retain must be at least 1")
        self.model = model
        self.global_seed = global_seed
        self.trace_index = trace_index
        self.streams = StreamBank(global_seed, trace_index)
        self.retain = retain
        self._states: Deque[SimulationState] = deque([model.initial_state()], maxlen=retain)

    @property
    def length(self) -> int:
        """Number of steps simulated so far; the trace holds length + 1 states."""
        return self.last.step_index

    @property
    def last(self) -> SimulationState:
        return self._states[-1]

    @property
    def first_retained(self) -> int:
        return self._states[0].step_index

    def state(self, step_index: int) -> SimulationState:
        if step_index > self.length:
            raise IndexError(f"step {step_index} not simulated yet (trace length {self.length})")
        if step_index < self.first_retained:
            raise IndexError(f"step {step_index} was evicted")
        return self._states[step_index - self.first_retained]

    def states(self) -> List[SimulationState]:
        return list(self._states)

    def advance(self) -> SimulationState:
        nxt = step(self.last, self.model, self.streams)
        self._states.append(nxt)
        return nxt


def extend_trace(trace: Trace, target_len: int) -> Trace:
    """Simulate forward until the trace has target_len steps (target_len + 1 states)."""
    if target_len < trace.length:
        raise ValueError(f"cannot shrink a trace from {trace.length} to {target_len} steps")
    while trace.length < target_len:
        trace.advance()
    return trace


def format_value(value: AttributeValue) -> str:
    return format_expr(Literal(value)).strip("()")


def dump_state(state: SimulationState) -> str:
    """Tab-separated `step time path=value...` line, attributes in tree order."""
    fields = [str(state.step_index), str(state.time)]
    for path, node in walk(state.system.root):
        if isinstance(node, AtomicComponent):
            for attr in node.attributes:
                fields.append(f"{format_path(path + (attr.name,))}={format_value(attr.value)}")
    return "\t".join(fields)
