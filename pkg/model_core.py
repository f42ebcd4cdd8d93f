"""
Hierarchical component model and the state projection read by the monitors.

A System is an immutable tree: hierarchical components hold named
subcomponents and relations, atomic components hold typed attributes.
Every change (attribute update or structural change) builds a new tree by
path copying, so earlier snapshots remain valid and can be retained in a
monitor window.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

from enum_compat import StrEnum
from errors import ClosedSystem, DuplicateName, PathNotFound, TypeMismatch

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

ROOT_TYPE_NAME = "System"

Path = Tuple[str, ...]
AttributeValue = Union[bool, int, float, str]


class ValueType(StrEnum):
    BOOL = "bool"
    INT = "int"
    REAL = "real"
    STRING = "string"


def value_type_of(value: AttributeValue) -> ValueType:
    # bool is a subclass of int, test it first
    if isinstance(value, bool):
        return ValueType.BOOL
    if isinstance(value, int):
        return ValueType.INT
    if isinstance(value, float):
        return ValueType.REAL
    if isinstance(value, str):
        return ValueType.STRING
    raise TypeMismatch(f"unsupported value {value!r} of type {type(value).__name__}")


def coerce_value(value: AttributeValue, declared: ValueType) -> AttributeValue:
    """
    Check a value against a declared type, widening int to real.

    Raises:
        TypeMismatch: wrong tag, integer outside 64 bits, or non-finite real
    """
    actual = value_type_of(value)
    if actual == ValueType.INT and declared == ValueType.REAL:
        value, actual = float(value), ValueType.REAL
    if actual != declared:
        raise TypeMismatch(f"expected {declared} value, got {actual} {value!r}")
    if actual == ValueType.INT and not INT64_MIN <= value <= INT64_MAX:
        raise TypeMismatch(f"integer {value} does not fit in 64 bits")
    if actual == ValueType.REAL and not math.isfinite(value):
        raise TypeMismatch(f"real value {value} is not finite")
    return value


def parse_path(text: str) -> Path:
    parts = tuple(p.strip() for p in text.split("."))
    if not parts or any(not p for p in parts):
        raise ValueError(f"malformed path '{text}'")
    return parts


def format_path(path: Sequence[str]) -> str:
    return ".".join(path)


@dataclass(frozen=True)
class Attribute:
    name: str
    declared_type: ValueType
    value: AttributeValue

    def __post_init__(self):
        object.__setattr__(self, "value", coerce_value(self.value, self.declared_type))


@dataclass(frozen=True)
class AtomicComponent:
    type_name: str
    attributes: Tuple[Attribute, ...] = ()

    def attribute(self, name: str) -> Optional[Attribute]:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        return None

    def with_attribute(self, attribute: Attribute) -> "AtomicComponent":
        if self.attribute(attribute.name) is not None:
            raise DuplicateName(attribute.name, ())
        return replace(self, attributes=self.attributes + (attribute,))

    def with_slots(self, values: Dict[int, AttributeValue]) -> "AtomicComponent":
        """Copy with the attributes at the given positions rewritten."""
        attributes = list(self.attributes)
        for slot, value in values.items():
            old = attributes[slot]
            attributes[slot] = Attribute(old.name, old.declared_type, value)
        return AtomicComponent(self.type_name, tuple(attributes))


@dataclass(frozen=True)
class Relation:
    name: str
    source: str
    target: str

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"relation '{self.name}' must connect two different subcomponents")


@dataclass(frozen=True)
class Subcomponent:
    name: str
    component: "Component"

    def __post_init__(self):
        if not self.name:
            raise ValueError("subcomponent name must not be empty")


@dataclass(frozen=True)
class HierarchicalComponent:
    type_name: str
    subcomponents: Tuple[Subcomponent, ...] = ()
    relations: Tuple[Relation, ...] = ()

    def child(self, name: str) -> Optional[Subcomponent]:
        for sub in self.subcomponents:
            if sub.name == name:
                return sub
        return None

    def relation(self, name: str) -> Optional[Relation]:
        for rel in self.relations:
            if rel.name == name:
                return rel
        return None


Component = Union[AtomicComponent, HierarchicalComponent]


class Slot(NamedTuple):
    """Subcomponent positions from the root, then the attribute position (None for a component)."""
    children: Tuple[int, ...]
    attribute: Optional[int]


class StructureIndex:
    """
    Lookups that depend only on the shape of the tree.

    Snapshots that differ only in attribute values share one index, so
    path slots, collections and grounded commands are recomputed only when
    the structure actually changes.
    """

    def __init__(self):
        self._paths_by_type: Dict[str, Tuple[Path, ...]] = {}
        self._slots: Dict[Path, Slot] = {}
        self._memo: Dict[Any, Any] = {}

    def locate(self, root: HierarchicalComponent, path: Path) -> Slot:
        """
        Positions a path walks through, cached per structure.

        Only successful look-ups are cached: attributes are appended while an
        instance is initialized, so a missing name may appear later under the
        same index.

        Raises:
            PathNotFound, TypeMismatch: as resolve_path
        """
        slot = self._slots.get(path)
        if slot is None:
            slot = _locate(root, path)
            self._slots[path] = slot
        return slot

    def paths_of_type(self, root: HierarchicalComponent, type_name: str) -> Tuple[Path, ...]:
        paths = self._paths_by_type.get(type_name)
        if paths is None:
            paths = tuple(p for p, c in walk(root) if c.type_name == type_name)
            self._paths_by_type[type_name] = paths
        return paths

    def memo(self, key: Any, factory: Callable[[], Any]) -> Any:
        if key not in self._memo:
            self._memo[key] = factory()
        return self._memo[key]

    # caches are rebuilt on the receiving side of a process pool
    def __getstate__(self):
        return {}

    def __setstate__(self, state):
        self.__init__()


@dataclass(frozen=True)
class System:
    root: HierarchicalComponent
    open_flag: bool = False
    structure_version: int = 0
    spawn_counter: int = 0
    index: StructureIndex = field(default_factory=StructureIndex, compare=False, repr=False)


@dataclass(frozen=True)
class SimulationState:
    step_index: int
    time: int
    system: System
    structure_changed: bool = False


@dataclass(frozen=True)
class ComponentRef:
    path: Path
    component: Component

    @property
    def name(self) -> str:
        return self.path[-1] if self.path else ""

    @property
    def type_name(self) -> str:
        return self.component.type_name


def walk(component: Component, prefix: Path = ()) -> Iterator[Tuple[Path, Component]]:
    """Depth-first, declaration-ordered traversal including the start node."""
    yield prefix, component
    if isinstance(component, HierarchicalComponent):
        for sub in component.subcomponents:
            yield from walk(sub.component, prefix + (sub.name,))


def _system_of(target: Union[SimulationState, System]) -> System:
    return target.system if isinstance(target, SimulationState) else target


def resolve_path(state: Union[SimulationState, System], path: Sequence[str]) -> Union[AttributeValue, ComponentRef]:
    """
    Return the attribute value or component reference a path names.

    Raises:
        PathNotFound: a segment names nothing
        TypeMismatch: an attribute is traversed as if it were a component
    """
    path = tuple(path)
    if not path:
        raise ValueError("empty path")
    system = _system_of(state)
    slot = system.index.locate(system.root, path)
    node: Component = system.root
    for position in slot.children:
        node = node.subcomponents[position].component
    if slot.attribute is None:
        return ComponentRef(path, node)
    return node.attributes[slot.attribute].value


def _locate(root: HierarchicalComponent, path: Path) -> Slot:
    node: Component = root
    children: List[int] = []
    for i, segment in enumerate(path):
        if isinstance(node, HierarchicalComponent):
            for position, sub in enumerate(node.subcomponents):
                if sub.name == segment:
                    break
            else:
                raise PathNotFound(path, segment)
            children.append(position)
            node = sub.component
            continue
        for position, attr in enumerate(node.attributes):
            if attr.name == segment:
                break
        else:
            raise PathNotFound(path, segment)
        if i != len(path) - 1:
            raise TypeMismatch(
                f"'{format_path(path[:i + 1])}' is an attribute and has no member '{path[i + 1]}'")
        return Slot(tuple(children), position)
    return Slot(tuple(children), None)


def resolve_value(state: Union[SimulationState, System], path: Sequence[str]) -> AttributeValue:
    found = resolve_path(state, path)
    if isinstance(found, ComponentRef):
        raise TypeMismatch(f"'{format_path(path)}' is a component, not an attribute")
    return found


def resolve_component(system: System, path: Sequence[str]) -> Component:
    if not path:
        return system.root
    found = resolve_path(system, path)
    if not isinstance(found, ComponentRef):
        raise TypeMismatch(f"'{format_path(path)}' is an attribute, not a component")
    return found.component


def instances_of_type(state: Union[SimulationState, System], type_name: str) -> Tuple[ComponentRef, ...]:
    system = _system_of(state)
    refs = []
    for path in system.index.paths_of_type(system.root, type_name):
        refs.append(ComponentRef(path, resolve_component(system, path)))
    return tuple(refs)


# Path copying

def _replace_component(node: Component, path: Path, fn: Callable[[Component], Component], full: Path) -> Component:
    if not path:
        return fn(node)
    if not isinstance(node, HierarchicalComponent):
        raise TypeMismatch(f"'{format_path(full)}' passes through atomic component '{node.type_name}'")
    head, rest = path[0], path[1:]
    sub = node.child(head)
    if sub is None:
        raise PathNotFound(full, head)
    new_child = _replace_component(sub.component, rest, fn, full)
    return replace(node, subcomponents=tuple(
        Subcomponent(s.name, new_child) if s.name == head else s for s in node.subcomponents))


def update_component(system: System, path: Path, fn: Callable[[Component], Component]) -> System:
    root = _replace_component(system.root, tuple(path), fn, tuple(path))
    if not isinstance(root, HierarchicalComponent):
        raise TypeMismatch("the system root must stay hierarchical")
    return replace(system, root=root)


def _rewrite(node: Component, children: Tuple[int, ...], values: Dict[int, AttributeValue]) -> Component:
    if not children:
        return node.with_slots(values)
    position = children[0]
    subs = node.subcomponents
    sub = subs[position]
    changed = Subcomponent(sub.name, _rewrite(sub.component, children[1:], values))
    return HierarchicalComponent(node.type_name, subs[:position] + (changed,) + subs[position + 1:], node.relations)


def set_attributes(system: System, assignments: Sequence[Tuple[Path, AttributeValue]]) -> System:
    """
    Write attribute values; the structure (and its index) is kept.

    Only the branches leading to written components are copied.

    Raises:
        PathNotFound: a path names nothing
        TypeMismatch: a path names a component, or a value has the wrong type
    """
    grouped: Dict[Tuple[int, ...], Dict[int, AttributeValue]] = {}
    for path, value in assignments:
        path = tuple(path)
        slot = system.index.locate(system.root, path) if path else None
        if slot is None or slot.attribute is None:
            raise TypeMismatch(f"'{format_path(path)}' does not name an attribute of a component")
        grouped.setdefault(slot.children, {})[slot.attribute] = value

    root = system.root
    for children, values in grouped.items():
        root = _rewrite(root, children, values)
    return System(root, system.open_flag, system.structure_version, system.spawn_counter, system.index)


# Structural changes

@dataclass(frozen=True)
class AddSubcomponent:
    parent: Path
    subcomponent: Subcomponent


@dataclass(frozen=True)
class RemoveSubcomponent:
    path: Path


@dataclass(frozen=True)
class AddRelation:
    parent: Path
    relation: Relation


@dataclass(frozen=True)
class RemoveRelation:
    parent: Path
    name: str


StructuralChange = Union[AddSubcomponent, RemoveSubcomponent, AddRelation, RemoveRelation]


def _hierarchical(node: Component, path: Path) -> HierarchicalComponent:
    if not isinstance(node, HierarchicalComponent):
        raise TypeMismatch(f"'{format_path(path) or '<root>'}' is atomic and cannot hold subcomponents")
    return node


def change_structure(system: System, change: StructuralChange) -> System:
    """Apply one structural change to a system, open or not."""
    if isinstance(change, AddSubcomponent):
        def add(node: Component) -> Component:
            node = _hierarchical(node, change.parent)
            if node.child(change.subcomponent.name) is not None:
                raise DuplicateName(change.subcomponent.name, change.parent)
            return replace(node, subcomponents=node.subcomponents + (change.subcomponent,))
        new = update_component(system, change.parent, add)

    elif isinstance(change, RemoveSubcomponent):
        if not change.path:
            raise TypeMismatch("the system root cannot be removed")
        parent, name = change.path[:-1], change.path[-1]

        def remove(node: Component) -> Component:
            node = _hierarchical(node, parent)
            if node.child(name) is None:
                raise PathNotFound(change.path, name)
            # relations touching the removed subcomponent go with it
            return replace(
                node,
                subcomponents=tuple(s for s in node.subcomponents if s.name != name),
                relations=tuple(r for r in node.relations if name not in (r.source, r.target)),
            )
        new = update_component(system, parent, remove)

    elif isinstance(change, AddRelation):
        rel = change.relation

        def link(node: Component) -> Component:
            node = _hierarchical(node, change.parent)
            if node.relation(rel.name) is not None:
                raise DuplicateName(rel.name, change.parent)
            for end in (rel.source, rel.target):
                if node.child(end) is None:
                    raise PathNotFound(change.parent + (end,), end)
            return replace(node, relations=node.relations + (rel,))
        new = update_component(system, change.parent, link)

    elif isinstance(change, RemoveRelation):
        def unlink(node: Component) -> Component:
            node = _hierarchical(node, change.parent)
            if node.relation(change.name) is None:
                raise PathNotFound(change.parent + (change.name,), change.name)
            return replace(node, relations=tuple(r for r in node.relations if r.name != change.name))
        new = update_component(system, change.parent, unlink)

    else:
        raise TypeError(f"unsupported structural change {change!r}")

    return replace(new, structure_version=system.structure_version + 1, index=StructureIndex())


def apply_structural_change(state: SimulationState, change: StructuralChange) -> SimulationState:
    """
    Return a new snapshot with the change applied and the change flag set.

    Raises:
        ClosedSystem: the system is not open
        PathNotFound, DuplicateName, TypeMismatch: the change does not fit the tree
    """
    if not state.system.open_flag:
        raise ClosedSystem(type(change).__name__)
    return replace(state, system=change_structure(state.system, change), structure_changed=True)


def validate_system(system: System) -> List[str]:
    """Full-tree check of the structural invariants; returns the problems found."""
    problems = []
    if not isinstance(system.root, HierarchicalComponent):
        problems.append("root is not hierarchical")
        return problems
    for path, node in walk(system.root):
        where = format_path(path) or "<root>"
        if isinstance(node, HierarchicalComponent):
            names = [s.name for s in node.subcomponents]
            if len(names) != len(set(names)):
                problems.append(f"{where}: duplicate subcomponent names")
            rel_names = [r.name for r in node.relations]
            if len(rel_names) != len(set(rel_names)):
                problems.append(f"{where}: duplicate relation names")
            for rel in node.relations:
                for end in (rel.source, rel.target):
                    if end not in names:
                        problems.append(f"{where}: relation '{rel.name}' refers to missing '{end}'")
        else:
            names = [a.name for a in node.attributes]
            if len(names) != len(set(names)):
                problems.append(f"{where}: duplicate attribute names")
            for attr in node.attributes:
                try:
                    coerce_value(attr.value, attr.declared_type)
                except TypeMismatch as e:
                    problems.append(f"{where}.{attr.name}: {e}")
    return problems
