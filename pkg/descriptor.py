"""
The `.sosd` system-descriptor format: parser, validator, builder and printer.

A descriptor declares component types (attributes with init expressions,
random variables, simple commands) and one instance tree:

    type Ambulance {
        attr fuel: int = 50;
        rv after_trip ~ uniform_int(fuel - 3, fuel - 1);
        cmd drive: when fuel > 0 rate 1 do fuel := observe(after_trip);
    }
    system {
        instance fleet: Fleet;
        instance amb1: Ambulance in fleet;
        open;
    }

Inside a type, attributes of the instance are read by bare name (or
`self.<name>`), other components by `root.<path>`. See
docs/descriptor-format.md for the grammar.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from lark import Lark
from lark.exceptions import UnexpectedInput, VisitError

from enum_compat import lookup
from errors import CyclicInit, Diagnostic, ModelBuildError, Severity, SmcError, has_errors
from expressions import (
    EXPR_GRAMMAR, AllInstances, Call, ExprBuilder, Literal, PathRef, Schema, Scope,
    TimeRef, UniformRef, eval_expr, format_expr, infer_type, syntax_diagnostic, visit_diagnostic, walk_expr,
)
from model_core import (
    ROOT_TYPE_NAME, AddRelation, HierarchicalComponent, Path, Relation, SimulationState, System,
    ValueType, change_structure, format_path,
)
from sim_kernel import (
    AssignAction, AttrDecl, CommandDecl, DespawnAction, ExecutableModel, ObserveAction, RvDecl,
    SpawnAction, TypeTemplate, instantiate,
)
from stochastic import DISTRIBUTIONS, CustomInt, CustomReal, format_distribution, parameters, result_type

logger = logging.getLogger(__name__)

DESCRIPTOR_GRAMMAR = r"""
start: item*
?item: type_decl
     | system_decl

type_decl: "type" NAME "{" member* "}"
?member: attr_decl
       | rv_decl
       | cmd_decl
attr_decl: "attr" NAME ":" NAME "=" expr ";"
rv_decl: "rv" NAME "~" NAME "(" arguments? ")" ";"
cmd_decl: "cmd" NAME ":" "when" expr "rate" expr "do" action ("," action)* ";"
?action: dotted ":=" expr                      -> assign_action
       | "spawn" NAME ":" NAME "in" dotted     -> spawn_action
       | "despawn" dotted                      -> despawn_action

system_decl: "system" "{" system_item* "}"
?system_item: "instance" NAME ":" NAME ("in" dotted)? ";"              -> instance_decl
            | "relation" NAME ":" NAME "--" NAME ("in" dotted)? ";"    -> relation_decl
            | "open" ";"                                               -> open_decl
            | "closed" ";"                                             -> closed_decl
""" + EXPR_GRAMMAR

_parser = Lark(DESCRIPTOR_GRAMMAR, parser="earley", lexer="basic", propagate_positions=True)


@dataclass(frozen=True)
class InstanceDecl:
    name: str
    type_name: str
    parent: Path = ()
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    @property
    def path(self) -> Path:
        return self.parent + (self.name,)


@dataclass(frozen=True)
class RelationDecl:
    name: str
    source: str
    target: str
    parent: Path = ()
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ModelDefinition:
    types: Tuple[TypeTemplate, ...] = ()
    instances: Tuple[InstanceDecl, ...] = ()
    relations: Tuple[RelationDecl, ...] = ()
    open_flag: bool = False
    diagnostics: Tuple[Diagnostic, ...] = field(default=(), compare=False)

    def type(self, name: str) -> Optional[TypeTemplate]:
        for t in self.types:
            if t.name == name:
                return t
        return None

    @property
    def has_errors(self) -> bool:
        return has_errors(self.diagnostics)


def _error(line: int, column: int, message: str, code: str) -> Diagnostic:
    return Diagnostic(Severity.ERROR, line, column, message, code)


def _warning(line: int, column: int, message: str, code: str) -> Diagnostic:
    return Diagnostic(Severity.WARNING, line, column, message, code)


class DescriptorBuilder(ExprBuilder):
    """Builds declarations; problems the grammar cannot express are collected as diagnostics."""

    def __init__(self):
        super().__init__()
        self.diagnostics: List[Diagnostic] = []

    def attr_decl(self, children):
        name, type_token, init = children
        line, column = name.line, name.column
        try:
            value_type = lookup(ValueType, str(type_token))
        except ValueError:
            self.diagnostics.append(_error(type_token.line, type_token.column,
                                           f"unknown attribute type '{type_token}'", "type"))
            value_type = ValueType.INT
        return AttrDecl(str(name), value_type, init, line, column)

    def rv_decl(self, children):
        name, dist = children[0], children[1]
        args = children[2] if len(children) > 2 else ()
        entry = DISTRIBUTIONS.get(str(dist).lower())
        if entry is None:
            self.diagnostics.append(_error(dist.line, dist.column, f"unknown distribution '{dist}'", "distribution"))
            return RvDecl(str(name), CustomReal(Literal(0.0)), name.line, name.column)
        cls, names = entry
        if len(args) != len(names):
            self.diagnostics.append(_error(
                dist.line, dist.column,
                f"{dist} takes {len(names)} parameter(s) ({', '.join(names)}), got {len(args)}", "distribution"))
            return RvDecl(str(name), CustomReal(Literal(0.0)), name.line, name.column)
        return RvDecl(str(name), cls(*args), name.line, name.column)

    def cmd_decl(self, children):
        name, guard, rate, *actions = children
        return CommandDecl(str(name), guard, rate, tuple(actions), name.line, name.column)

    def assign_action(self, children):
        target, expr = children
        if isinstance(expr, Call) and expr.name == "observe":
            if len(expr.args) != 1 or not isinstance(expr.args[0], PathRef) or len(expr.args[0].path) != 1:
                raise ValueError("observe() takes the name of one random variable of this type")
            return ObserveAction(target, expr.args[0].path[0])
        return AssignAction(target, expr)

    def spawn_action(self, children):
        name, type_name, parent = children
        return SpawnAction(str(name), str(type_name), parent)

    def despawn_action(self, children):
        return DespawnAction(children[0])

    def type_decl(self, children):
        name, *members = children
        return TypeTemplate(
            name=str(name),
            attributes=tuple(m for m in members if isinstance(m, AttrDecl)),
            variables=tuple(m for m in members if isinstance(m, RvDecl)),
            commands=tuple(m for m in members if isinstance(m, CommandDecl)),
            line=name.line,
            column=name.column,
        )

    def instance_decl(self, children):
        name, type_name = children[0], children[1]
        parent = children[2] if len(children) > 2 else ()
        return InstanceDecl(str(name), str(type_name), parent, name.line, name.column)

    def relation_decl(self, children):
        name, source, target = children[0], children[1], children[2]
        parent = children[3] if len(children) > 3 else ()
        return RelationDecl(str(name), str(source), str(target), parent, name.line, name.column)

    def open_decl(self, children):
        return ("open", True)

    def closed_decl(self, children):
        return ("open", False)

    def system_decl(self, children):
        return ("system", children)

    def start(self, children):
        types, instances, relations = [], [], []
        open_flag = False
        for item in children:
            if isinstance(item, TypeTemplate):
                types.append(item)
                continue
            for entry in item[1]:
                if isinstance(entry, InstanceDecl):
                    instances.append(entry)
                elif isinstance(entry, RelationDecl):
                    relations.append(entry)
                else:
                    open_flag = entry[1]
        return ModelDefinition(tuple(types), tuple(instances), tuple(relations), open_flag)


def parse_descriptor(text: str) -> ModelDefinition:
    """
    Parse descriptor text. Total: problems are returned as diagnostics,
    together with everything validate() reports.
    """
    try:
        tree = _parser.parse(text)
    except UnexpectedInput as e:
        return ModelDefinition(diagnostics=(syntax_diagnostic(e, text),))
    builder = DescriptorBuilder()
    try:
        definition = builder.transform(tree)
    except VisitError as e:
        return ModelDefinition(diagnostics=(visit_diagnostic(e),))
    diagnostics = tuple(builder.diagnostics) + tuple(validate(definition))
    return replace(definition, diagnostics=diagnostics)


# Validation

def definition_schema(definition: ModelDefinition) -> Schema:
    types = {t.name: {a.name: a.value_type for a in t.attributes} for t in definition.types}
    instances = {d.path: d.type_name for d in definition.instances}
    return Schema(types, instances)


def _assignable(value: ValueType, target: ValueType) -> bool:
    return value == target or (value == ValueType.INT and target == ValueType.REAL)


def _constant(expr) -> Optional[object]:
    """Value of an expression that reads no state, or None."""
    for node, _ in walk_expr(expr):
        if isinstance(node, (PathRef, TimeRef, UniformRef, AllInstances)):
            return None
    empty = SimulationState(0, 0, System(HierarchicalComponent(ROOT_TYPE_NAME)))
    try:
        return eval_expr(expr, empty)
    except SmcError:
        return None


def init_order_problems(template: TypeTemplate) -> List[Tuple[AttrDecl, str]]:
    """(attribute, referenced later attribute) pairs for inits read before being set."""
    problems = []
    names = [a.name for a in template.attributes]
    for i, decl in enumerate(template.attributes):
        later = set(names[i:])
        for path in _own_reads(decl.init):
            if path in later:
                problems.append((decl, path))
                break
    return problems


def _own_reads(expr) -> List[str]:
    reads = []
    for node, bound in walk_expr(expr):
        if isinstance(node, PathRef) and node.path[0] not in bound and node.path[0] != "root":
            path = node.path[1:] if node.path[0] == "self" else node.path
            if path:
                reads.append(path[0])
    return reads


def _check(diagnostics: List[Diagnostic], line: int, column: int, where: str, fn):
    """Run a type-checking callable and record its failure as a diagnostic."""
    try:
        return fn()
    except SmcError as e:
        diagnostics.append(_error(line, column, f"{where}: {e}", "type"))
        return None


def _validate_type(template: TypeTemplate, definition: ModelDefinition, schema: Schema,
                   diagnostics: List[Diagnostic]) -> None:
    scope = Scope(schema, self_type=template.name)
    seen = set()
    for member in template.attributes + template.variables + template.commands:
        if member.name in seen:
            diagnostics.append(_error(member.line, member.column,
                                      f"{template.name}: duplicate member '{member.name}'", "duplicate"))
        seen.add(member.name)

    for decl, referenced in init_order_problems(template):
        err = CyclicInit(template.name, decl.name, referenced)
        diagnostics.append(_error(decl.line, decl.column, str(err), "cyclic-init"))

    for decl in template.attributes:
        where = f"{template.name}.{decl.name}"
        t = _check(diagnostics, decl.line, decl.column, where, lambda: infer_type(decl.init, scope))
        if t is not None and not _assignable(t, decl.value_type):
            diagnostics.append(_error(decl.line, decl.column,
                                      f"{where}: init has type {t}, declared {decl.value_type}", "type"))

    for rv in template.variables:
        where = f"{template.name}.{rv.name}"
        custom = isinstance(rv.spec, (CustomReal, CustomInt))
        rv_scope = replace(scope, allow_u=custom)
        for pname, expr in parameters(rv.spec).items():
            t = _check(diagnostics, rv.line, rv.column, where, lambda: infer_type(expr, rv_scope))
            if t is not None and t not in (ValueType.INT, ValueType.REAL):
                diagnostics.append(_error(rv.line, rv.column, f"{where}: parameter '{pname}' must be numeric", "type"))

    for cmd in template.commands:
        where = f"{template.name}.{cmd.name}"
        t = _check(diagnostics, cmd.line, cmd.column, where, lambda: infer_type(cmd.guard, scope))
        if t is not None and t != ValueType.BOOL:
            diagnostics.append(_error(cmd.line, cmd.column, f"{where}: guard must be boolean, got {t}", "type"))
        t = _check(diagnostics, cmd.line, cmd.column, where, lambda: infer_type(cmd.rate, scope))
        if t is not None and t not in (ValueType.INT, ValueType.REAL):
            diagnostics.append(_error(cmd.line, cmd.column, f"{where}: rate must be numeric, got {t}", "type"))
        elif t is not None:
            constant = _constant(cmd.rate)
            if constant is not None and constant < 0:
                diagnostics.append(_warning(cmd.line, cmd.column,
                                            f"{where}: rate is negative ({constant}); selecting it fails at runtime",
                                            "negative-rate"))
        for action in cmd.actions:
            _validate_action(template, cmd, action, definition, scope, diagnostics)


def _validate_action(template, cmd, action, definition, scope, diagnostics) -> None:
    where = f"{template.name}.{cmd.name}"
    line, column = cmd.line, cmd.column
    if isinstance(action, (AssignAction, ObserveAction)):
        target = _check(diagnostics, line, column, where, lambda: scope.path_type(action.target))
        if isinstance(action, AssignAction):
            value = _check(diagnostics, line, column, where, lambda: infer_type(action.expr, scope))
        else:
            rv = template.variable(action.variable)
            if rv is None:
                diagnostics.append(_error(line, column, f"{where}: unknown random variable '{action.variable}'", "type"))
                return
            value = result_type(rv.spec)
        if target is not None and value is not None and not _assignable(value, target):
            diagnostics.append(_error(line, column,
                                      f"{where}: cannot assign {value} to {format_path(action.target)} ({target})",
                                      "type"))
    elif isinstance(action, SpawnAction):
        spawned = definition.type(action.type_name)
        if spawned is None:
            diagnostics.append(_error(line, column, f"{where}: undeclared type '{action.type_name}'", "undeclared-type"))
        if not definition.open_flag:
            diagnostics.append(_warning(line, column, f"{where}: spawn in a closed system fails at runtime", "closed-spawn"))
        _validate_container(template, action.parent, definition, line, column, where, diagnostics)
    elif isinstance(action, DespawnAction):
        if not definition.open_flag:
            diagnostics.append(_warning(line, column, f"{where}: despawn in a closed system fails at runtime", "closed-spawn"))
        if action.target[0] not in ("self", "root"):
            diagnostics.append(_error(line, column,
                                      f"{where}: despawn target must be 'self' or a 'root.' path", "type"))


def _validate_container(template, parent: Path, definition, line, column, where, diagnostics) -> None:
    if parent[0] == "self":
        if len(parent) == 1 and not template.is_hierarchical:
            diagnostics.append(_error(line, column, f"{where}: '{template.name}' is atomic and cannot hold instances", "type"))
        return
    if parent[0] != "root":
        diagnostics.append(_error(line, column, f"{where}: spawn parent must be 'self' or a 'root.' path", "type"))
        return
    path = parent[1:]
    if not path:
        return
    parent_type = {d.path: d.type_name for d in definition.instances}.get(path)
    if parent_type is None:
        diagnostics.append(_error(line, column, f"{where}: unknown spawn parent '{format_path(path)}'", "type"))
        return
    container = definition.type(parent_type)
    if container is not None and not container.is_hierarchical:
        diagnostics.append(_error(line, column, f"{where}: '{format_path(path)}' is atomic", "type"))


def validate(definition: ModelDefinition) -> List[Diagnostic]:
    """Type-check types, instances and relations; pure."""
    diagnostics: List[Diagnostic] = []
    schema = definition_schema(definition)

    names = set()
    for t in definition.types:
        if t.name in names:
            diagnostics.append(_error(t.line, t.column, f"duplicate type '{t.name}'", "duplicate"))
        if t.name == ROOT_TYPE_NAME:
            diagnostics.append(_error(t.line, t.column, f"'{ROOT_TYPE_NAME}' is reserved for the system root", "duplicate"))
        names.add(t.name)
    for t in definition.types:
        _validate_type(t, definition, schema, diagnostics)

    placed: Dict[Path, str] = {}
    for inst in definition.instances:
        template = definition.type(inst.type_name)
        if template is None:
            diagnostics.append(_error(inst.line, inst.column, f"undeclared type '{inst.type_name}'", "undeclared-type"))
        if inst.parent:
            parent_type = placed.get(inst.parent)
            if parent_type is None:
                diagnostics.append(_error(inst.line, inst.column,
                                          f"instance '{inst.name}': parent '{format_path(inst.parent)}' "
                                          f"is not declared before it", "instance"))
            elif definition.type(parent_type) is not None and not definition.type(parent_type).is_hierarchical:
                diagnostics.append(_error(inst.line, inst.column,
                                          f"instance '{inst.name}': '{format_path(inst.parent)}' is atomic", "instance"))
        if inst.path in placed:
            diagnostics.append(_error(inst.line, inst.column,
                                      f"duplicate instance '{format_path(inst.path)}'", "duplicate"))
        placed[inst.path] = inst.type_name

    relation_names = set()
    for rel in definition.relations:
        key = (rel.parent, rel.name)
        if key in relation_names:
            diagnostics.append(_error(rel.line, rel.column, f"duplicate relation '{rel.name}'", "duplicate"))
        relation_names.add(key)
        if rel.source == rel.target:
            diagnostics.append(_error(rel.line, rel.column,
                                      f"relation '{rel.name}' must connect two different subcomponents", "relation"))
        if rel.parent and rel.parent not in placed:
            diagnostics.append(_error(rel.line, rel.column,
                                      f"relation '{rel.name}': unknown parent '{format_path(rel.parent)}'", "relation"))
        for end in (rel.source, rel.target):
            if rel.parent + (end,) not in placed:
                diagnostics.append(_error(rel.line, rel.column,
                                          f"relation '{rel.name}': no subcomponent '{end}'", "relation"))

    for d in diagnostics:
        if not d.is_error:
            logger.debug(f"Descriptor warning: {d}")
    return diagnostics


# Building

def build_model(definition: ModelDefinition, global_seed: int = 0) -> ExecutableModel:
    """
    Instantiate, interconnect and initialize the declared system.

    Raises:
        CyclicInit: an init reads an attribute declared after it
        ModelBuildError: the definition has error diagnostics, or an init failed
    """
    for template in definition.types:
        problems = init_order_problems(template)
        if problems:
            decl, referenced = problems[0]
            raise CyclicInit(template.name, decl.name, referenced)
    diagnostics = list(definition.diagnostics) or validate(definition)
    errors = [d for d in diagnostics if d.is_error]
    if errors:
        raise ModelBuildError(f"model has {len(errors)} error(s); first: {errors[0]}", errors)

    templates = {t.name: t for t in definition.types}
    state = SimulationState(0, 0, System(HierarchicalComponent(ROOT_TYPE_NAME), open_flag=definition.open_flag))
    for inst in definition.instances:
        try:
            state = instantiate(state, templates, inst.parent, inst.name, inst.type_name, checked=False)
        except ModelBuildError:
            raise
        except SmcError as e:
            raise ModelBuildError(f"{format_path(inst.path)}: {e}",
                                  [_error(inst.line, inst.column, str(e), "init")]) from e
    system = state.system
    for rel in definition.relations:
        system = change_structure(system, AddRelation(rel.parent, Relation(rel.name, rel.source, rel.target)))
    system = replace(system, structure_version=0)

    model = ExecutableModel(system, templates, seed=global_seed)
    logger.info(f"Built model: {len(definition.instances)} instances, "
                f"{len(model.commands)} grounded commands, {len(model.variables)} random variables")
    return model


def load_model(text: str, global_seed: int = 0) -> ExecutableModel:
    definition = parse_descriptor(text)
    if definition.has_errors:
        errors = [d for d in definition.diagnostics if d.is_error]
        raise ModelBuildError(f"model has {len(errors)} error(s); first: {errors[0]}", errors)
    return build_model(definition, global_seed)


# Printing

def _format_action(action) -> str:
    if isinstance(action, AssignAction):
        return f"{format_path(action.target)} := {format_expr(action.expr)}"
    if isinstance(action, ObserveAction):
        return f"{format_path(action.target)} := observe({action.variable})"
    if isinstance(action, SpawnAction):
        return f"spawn {action.name}: {action.type_name} in {format_path(action.parent)}"
    return f"despawn {format_path(action.target)}"


def format_descriptor(definition: ModelDefinition) -> str:
    """Descriptor text that parses back to an equal definition."""
    lines = []
    for t in definition.types:
        lines.append(f"type {t.name} {{")
        for a in t.attributes:
            lines.append(f"    attr {a.name}: {a.value_type} = {format_expr(a.init)};")
        for rv in t.variables:
            lines.append(f"    rv {rv.name} ~ {format_distribution(rv.spec)};")
        for c in t.commands:
            actions = ", ".join(_format_action(a) for a in c.actions)
            lines.append(f"    cmd {c.name}: when {format_expr(c.guard)} rate {format_expr(c.rate)} do {actions};")
        lines.append("}")
        lines.append("")
    lines.append("system {")
    for inst in definition.instances:
        where = f" in {format_path(inst.parent)}" if inst.parent else ""
        lines.append(f"    instance {inst.name}: {inst.type_name}{where};")
    for rel in definition.relations:
        where = f" in {format_path(rel.parent)}" if rel.parent else ""
        lines.append(f"    relation {rel.name}: {rel.source} -- {rel.target}{where};")
    lines.append("    open;" if definition.open_flag else "    closed;")
    lines.append("}")
    return "\n".join(lines) + "\n"
